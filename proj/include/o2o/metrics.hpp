#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace o2o {

struct EvalPoint {
    std::uint64_t env_step = 0;
    double mean = 0.0;
    std::vector<double> per_episode;
};

/// Evaluation curve {J(pi_n)}: strictly increasing steps, each mean the
/// average of its per-episode values.
struct EvalCurve {
    std::vector<EvalPoint> points;

    void append(std::uint64_t env_step, std::vector<double> per_episode);
    std::vector<double> means() const;
    void validate() const;
    bool empty() const { return points.empty(); }
};

void to_json(nlohmann::json& j, const EvalCurve& c);
void from_json(const nlohmann::json& j, EvalCurve& c);

// ---- stability / plasticity ------------------------------------------------

double stability(const std::vector<double>& values, double level);
double plasticity(const std::vector<double>& values);
double offline_baseline(double j0, double jd);

struct KnowledgeDecomposition {
    double prior = 0.0;
    double stability = 0.0;
    double plasticity = 0.0;
    double final = 0.0;

    double residual() const { return final - (prior + stability + plasticity); }
};

/// Final = prior + stability + plasticity, with prior = max(J0, JD). The
/// curve's step-0 mean must be J0.
KnowledgeDecomposition decompose(const EvalCurve& curve, double j0, double jd);

// ---- statistics ------------------------------------------------------------

struct SampleStats {
    double mean = 0.0;
    double std = 0.0;  // unbiased
    std::size_t n = 0;

    static SampleStats from_values(const std::vector<double>& values);
    static SampleStats summary(double mean, double std, std::size_t n);
    double variance() const { return std * std; }
};

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

double student_t_cdf(double t, double dof);

struct TTestResult {
    double t = 0.0;
    double dof = 0.0;
    double p = 1.0;
};

double welch_dof(const SampleStats& a, const SampleStats& b);

TTestResult welch_two_sided(const SampleStats& a, const SampleStats& b);

enum class Regime { Superior, Comparable, Inferior, Inconclusive };

std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);

struct RegimeLabel {
    Regime tag = Regime::Inconclusive;
    double p_lower = 1.0;  // H0: mu0 - muD <= -delta
    double p_upper = 1.0;  // H0: mu0 - muD >= +delta
    double mean_difference = 0.0;
    double dof = 0.0;
    double delta = 0.05;
    double alpha = 0.05;
};

void to_json(nlohmann::json& j, const RegimeLabel& l);
void from_json(const nlohmann::json& j, RegimeLabel& l);

RegimeLabel tost_classify(const SampleStats& pi0, const SampleStats& data, double delta = 0.05,
                          double alpha = 0.05);

double iqm(std::vector<double> values);

// ---- class comparison ------------------------------------------------------

enum class Winner { Pi0Better, Tie, DataBetter };  // rows: >, ≈, <

std::string to_string(Winner w);
std::string symbol(Winner w);
Winner winner_from_string(const std::string& s);

struct VariantRuns {
    std::string name;
    std::vector<std::vector<double>> per_seed;  // last-k evaluation means per seed

    std::vector<double> pooled() const;
    std::vector<double> seed_scalars() const;  // mean over each seed's last-k
};

struct ClassComparison {
    Winner winner = Winner::Tie;
    std::string best_pi0;
    std::string best_data;
    double iqm_pi0 = 0.0;
    double iqm_data = 0.0;
    double mean_pi0 = 0.0;
    double mean_data = 0.0;
    TTestResult test;
};

void to_json(nlohmann::json& j, const ClassComparison& c);

ClassComparison compare_classes(const std::vector<VariantRuns>& pi0_variants,
                                const std::vector<VariantRuns>& data_variants, double alpha = 0.05);

/// Rows: fine-tune outcome (>, ≈, <); columns: regime (Superior, Comparable, Inferior).
struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, 3>, 3> counts{};

    static ConfusionMatrix from_counts(const std::array<std::array<std::uint64_t, 3>, 3>& counts);
    std::uint64_t total() const;
    std::uint64_t correct() const;
    std::uint64_t opposite() const;
    double accuracy() const;
    double opposite_rate() const;
    std::string summary() const;
};

void to_json(nlohmann::json& j, const ConfusionMatrix& m);

ConfusionMatrix confusion_matrix(const std::vector<std::pair<Regime, Winner>>& rows);

}  // namespace o2o
