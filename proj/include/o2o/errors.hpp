#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace o2o {

// Every library failure derives from Error so callers can catch one type and
// still branch on the category (the CLI maps categories to exit codes).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidSpec : public Error { public: using Error::Error; };
class InvalidArgument : public Error { public: using Error::Error; };
class ShapeError : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };
class UsageError : public Error { public: using Error::Error; };
class EmptyBufferError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class ConsistencyError : public Error { public: using Error::Error; };
class SchemaError : public Error { public: using Error::Error; };
class FileError : public Error { public: using Error::Error; };

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace o2o
