#include "o2o/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "o2o/errors.hpp"

namespace o2o {

namespace {

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

// ---- curves ----------------------------------------------------------------

void EvalCurve::append(std::uint64_t env_step, std::vector<double> per_episode) {
    if (per_episode.empty()) throw InvalidArgument("evaluation point needs at least one episode");
    if (!points.empty() && env_step <= points.back().env_step)
        throw InvalidArgument("evaluation steps must be strictly increasing");
    EvalPoint p;
    p.env_step = env_step;
    p.mean = mean_of(per_episode);
    p.per_episode = std::move(per_episode);
    points.push_back(std::move(p));
}

std::vector<double> EvalCurve::means() const {
    std::vector<double> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.mean);
    return out;
}

void EvalCurve::validate() const {
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (i > 0 && points[i].env_step <= points[i - 1].env_step)
            throw ConsistencyError("evaluation steps must be strictly increasing");
        if (points[i].per_episode.empty()) throw ConsistencyError("empty evaluation point");
        if (std::abs(points[i].mean - mean_of(points[i].per_episode)) > 1e-12)
            throw ConsistencyError("evaluation mean disagrees with per-episode values");
    }
}

void to_json(nlohmann::json& j, const EvalCurve& c) {
    j = nlohmann::json::array();
    for (const auto& p : c.points)
        j.push_back({{"step", p.env_step}, {"mean", p.mean}, {"per_episode", p.per_episode}});
}

void from_json(const nlohmann::json& j, EvalCurve& c) {
    EvalCurve out;
    for (const auto& p : j) {
        EvalPoint e;
        e.env_step = p.at("step").get<std::uint64_t>();
        e.mean = p.at("mean").get<double>();
        e.per_episode = p.at("per_episode").get<std::vector<double>>();
        out.points.push_back(std::move(e));
    }
    out.validate();
    c = std::move(out);
}

// ---- stability / plasticity ------------------------------------------------

double stability(const std::vector<double>& values, double level) {
    if (values.empty()) throw InvalidArgument("stability of an empty sequence");
    return std::min(*std::min_element(values.begin(), values.end()) - level, 0.0);
}

double plasticity(const std::vector<double>& values) {
    if (values.empty()) throw InvalidArgument("plasticity of an empty sequence");
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    return *hi - *lo;
}

double offline_baseline(double j0, double jd) {
    if (!std::isfinite(j0) || !std::isfinite(jd))
        throw InvalidArgument("offline baseline needs finite inputs");
    return std::max(j0, jd);
}

KnowledgeDecomposition decompose(const EvalCurve& curve, double j0, double jd) {
    if (curve.empty()) throw InvalidArgument("decompose needs a non-empty curve");
    if (curve.points.front().env_step != 0)
        throw ConsistencyError("decompose needs a step-0 evaluation point");
    if (curve.points.front().mean != j0)
        throw ConsistencyError("step-0 mean does not equal the supplied J(pi_0)");
    const auto values = curve.means();
    KnowledgeDecomposition d;
    d.prior = offline_baseline(j0, jd);
    d.stability = stability(values, d.prior);
    d.plasticity = plasticity(values);
    d.final = *std::max_element(values.begin(), values.end());
    return d;
}

// ---- statistics ------------------------------------------------------------

SampleStats SampleStats::from_values(const std::vector<double>& values) {
    if (values.empty()) throw InvalidArgument("sample statistics of an empty sample");
    SampleStats s;
    s.n = values.size();
    s.mean = mean_of(values);
    if (s.n > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
    }
    return s;
}

SampleStats SampleStats::summary(double mean, double std, std::size_t n) {
    if (!(std >= 0.0)) throw InvalidArgument("standard deviation must be >= 0");
    return {mean, std, n};
}

namespace {

// Modified Lentz evaluation of the incomplete-beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 500;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    return h;
}

void check_testable(const SampleStats& s) {
    if (s.n < 2) throw InvalidArgument("a t-test needs n >= 2 per sample");
    if (!(s.std >= 0.0) || !std::isfinite(s.mean)) throw InvalidArgument("invalid sample statistics");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw InvalidArgument("incomplete beta needs a, b > 0");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                             a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
    if (!(dof > 0.0)) throw InvalidArgument("student t needs dof > 0");
    if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    if (t == 0.0) return 0.5;
    const double x = dof / (dof + t * t);
    const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, x);
    return t > 0.0 ? 1.0 - tail : tail;
}

double welch_dof(const SampleStats& a, const SampleStats& b) {
    const double va = a.variance() / static_cast<double>(a.n);
    const double vb = b.variance() / static_cast<double>(b.n);
    const double denom = va * va / static_cast<double>(a.n - 1) + vb * vb / static_cast<double>(b.n - 1);
    if (denom == 0.0) return static_cast<double>(a.n + b.n - 2);
    return (va + vb) * (va + vb) / denom;
}

TTestResult welch_two_sided(const SampleStats& a, const SampleStats& b) {
    check_testable(a);
    check_testable(b);
    TTestResult r;
    r.dof = welch_dof(a, b);
    const double se2 = a.variance() / static_cast<double>(a.n) + b.variance() / static_cast<double>(b.n);
    const double diff = a.mean - b.mean;
    if (se2 == 0.0) {
        // Both samples constant: the difference is either exactly zero or certain.
        if (diff == 0.0) {
            r.t = 0.0;
            r.p = 1.0;
        } else {
            r.t = diff > 0 ? std::numeric_limits<double>::infinity()
                           : -std::numeric_limits<double>::infinity();
            r.p = 0.0;
        }
        return r;
    }
    r.t = diff / std::sqrt(se2);
    r.p = std::min(1.0, 2.0 * student_t_cdf(-std::abs(r.t), r.dof));
    return r;
}

std::string to_string(Regime r) {
    switch (r) {
        case Regime::Superior: return "Superior";
        case Regime::Comparable: return "Comparable";
        case Regime::Inferior: return "Inferior";
        case Regime::Inconclusive: return "Inconclusive";
    }
    return "Inconclusive";
}

Regime regime_from_string(const std::string& s) {
    if (s == "Superior") return Regime::Superior;
    if (s == "Comparable") return Regime::Comparable;
    if (s == "Inferior") return Regime::Inferior;
    if (s == "Inconclusive") return Regime::Inconclusive;
    throw SchemaError("unknown regime '" + s + "'");
}

void to_json(nlohmann::json& j, const RegimeLabel& l) {
    j = {{"label", to_string(l.tag)}, {"p_lower", l.p_lower},
         {"p_upper", l.p_upper},       {"mean_difference", l.mean_difference},
         {"dof", l.dof},               {"delta", l.delta},
         {"alpha", l.alpha}};
}

void from_json(const nlohmann::json& j, RegimeLabel& l) {
    l.tag = regime_from_string(j.at("label").get<std::string>());
    l.p_lower = j.at("p_lower").get<double>();
    l.p_upper = j.at("p_upper").get<double>();
    l.mean_difference = j.at("mean_difference").get<double>();
    l.dof = j.at("dof").get<double>();
    l.delta = j.at("delta").get<double>();
    l.alpha = j.at("alpha").get<double>();
}

RegimeLabel tost_classify(const SampleStats& pi0, const SampleStats& data, double delta, double alpha) {
    check_testable(pi0);
    check_testable(data);
    if (!(delta >= 0.0)) throw InvalidArgument("TOST margin must be >= 0");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must be in (0,1)");

    RegimeLabel label;
    label.delta = delta;
    label.alpha = alpha;
    label.mean_difference = pi0.mean - data.mean;
    label.dof = welch_dof(pi0, data);
    const double se2 =
        pi0.variance() / static_cast<double>(pi0.n) + data.variance() / static_cast<double>(data.n);
    const double d = label.mean_difference;
    if (se2 == 0.0) {
        label.p_lower = d > -delta ? 0.0 : 1.0;
        label.p_upper = d < delta ? 0.0 : 1.0;
    } else {
        const double se = std::sqrt(se2);
        label.p_lower = student_t_cdf(-(d + delta) / se, label.dof);
        label.p_upper = student_t_cdf((d - delta) / se, label.dof);
    }
    const bool reject_lower = label.p_lower < alpha;
    const bool reject_upper = label.p_upper < alpha;
    if (reject_lower && reject_upper)
        label.tag = Regime::Comparable;
    else if (reject_lower || reject_upper)
        label.tag = d > 0.0 ? Regime::Superior : Regime::Inferior;
    else
        label.tag = Regime::Inconclusive;
    return label;
}

double iqm(std::vector<double> values) {
    if (values.size() < 4) throw InvalidArgument("iqm needs at least 4 values");
    std::sort(values.begin(), values.end());
    const std::size_t trim = values.size() / 4;
    double s = 0.0;
    for (std::size_t i = trim; i < values.size() - trim; ++i) s += values[i];
    return s / static_cast<double>(values.size() - 2 * trim);
}

// ---- class comparison ------------------------------------------------------

std::string to_string(Winner w) {
    switch (w) {
        case Winner::Pi0Better: return "pi0_better";
        case Winner::Tie: return "tie";
        case Winner::DataBetter: return "data_better";
    }
    return "tie";
}

std::string symbol(Winner w) {
    switch (w) {
        case Winner::Pi0Better: return ">";
        case Winner::Tie: return "≈";
        case Winner::DataBetter: return "<";
    }
    return "≈";
}

Winner winner_from_string(const std::string& s) {
    if (s == "pi0_better" || s == ">") return Winner::Pi0Better;
    if (s == "tie" || s == "≈" || s == "~") return Winner::Tie;
    if (s == "data_better" || s == "<") return Winner::DataBetter;
    throw SchemaError("unknown winner '" + s + "'");
}

std::vector<double> VariantRuns::pooled() const {
    std::vector<double> out;
    for (const auto& seed : per_seed) out.insert(out.end(), seed.begin(), seed.end());
    return out;
}

std::vector<double> VariantRuns::seed_scalars() const {
    std::vector<double> out;
    for (const auto& seed : per_seed) {
        if (seed.empty()) throw InvalidArgument("variant '" + name + "' has an empty seed record");
        out.push_back(mean_of(seed));
    }
    return out;
}

void to_json(nlohmann::json& j, const ClassComparison& c) {
    j = {{"winner", to_string(c.winner)},
         {"winner_symbol", symbol(c.winner)},
         {"best_pi0_centric", c.best_pi0},
         {"best_data_centric", c.best_data},
         {"iqm_pi0_centric", c.iqm_pi0},
         {"iqm_data_centric", c.iqm_data},
         {"mean_pi0_centric", c.mean_pi0},
         {"mean_data_centric", c.mean_data},
         {"t", std::isfinite(c.test.t) ? nlohmann::json(c.test.t) : nlohmann::json(c.test.t > 0 ? "inf" : "-inf")},
         {"dof", c.test.dof},
         {"p", c.test.p}};
}

namespace {

const VariantRuns& best_by_iqm(const std::vector<VariantRuns>& variants, double& best_iqm) {
    if (variants.empty()) throw InvalidArgument("compare_classes needs at least one variant per class");
    const VariantRuns* best = nullptr;
    for (const auto& v : variants) {
        if (v.per_seed.size() < 2)
            throw InvalidArgument("variant '" + v.name + "' needs at least 2 seeds");
        const double score = iqm(v.pooled());
        if (!best || score > best_iqm) {
            best = &v;
            best_iqm = score;
        }
    }
    return *best;
}

}  // namespace

ClassComparison compare_classes(const std::vector<VariantRuns>& pi0_variants,
                                const std::vector<VariantRuns>& data_variants, double alpha) {
    ClassComparison c;
    const VariantRuns& p = best_by_iqm(pi0_variants, c.iqm_pi0);
    const VariantRuns& d = best_by_iqm(data_variants, c.iqm_data);
    c.best_pi0 = p.name;
    c.best_data = d.name;
    const auto ps = SampleStats::from_values(p.seed_scalars());
    const auto ds = SampleStats::from_values(d.seed_scalars());
    c.mean_pi0 = ps.mean;
    c.mean_data = ds.mean;
    c.test = welch_two_sided(ps, ds);
    if (c.test.p < alpha)
        c.winner = ps.mean > ds.mean ? Winner::Pi0Better : Winner::DataBetter;
    else
        c.winner = Winner::Tie;
    return c;
}

ConfusionMatrix ConfusionMatrix::from_counts(const std::array<std::array<std::uint64_t, 3>, 3>& counts) {
    ConfusionMatrix m;
    m.counts = counts;
    return m;
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts)
        for (auto v : row) t += v;
    return t;
}

std::uint64_t ConfusionMatrix::correct() const { return counts[0][0] + counts[1][1] + counts[2][2]; }

std::uint64_t ConfusionMatrix::opposite() const { return counts[2][0] + counts[0][2]; }

double ConfusionMatrix::accuracy() const {
    if (total() == 0) throw InvalidArgument("accuracy of an empty confusion matrix");
    return static_cast<double>(correct()) / static_cast<double>(total());
}

double ConfusionMatrix::opposite_rate() const {
    if (total() == 0) throw InvalidArgument("opposite rate of an empty confusion matrix");
    return static_cast<double>(opposite()) / static_cast<double>(total());
}

std::string ConfusionMatrix::summary() const {
    const auto n = total();
    const auto adjacent = n - correct() - opposite();
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "correct %llu/%llu (%.0f%%), opposite mismatches %llu/%llu (%.0f%%), adjacent "
                  "mismatches %llu/%llu",
                  static_cast<unsigned long long>(correct()), static_cast<unsigned long long>(n),
                  100.0 * accuracy(), static_cast<unsigned long long>(opposite()),
                  static_cast<unsigned long long>(n), 100.0 * opposite_rate(),
                  static_cast<unsigned long long>(adjacent), static_cast<unsigned long long>(n));
    return buf;
}

void to_json(nlohmann::json& j, const ConfusionMatrix& m) {
    j = {{"rows", {">", "≈", "<"}},
         {"columns", {"Superior", "Comparable", "Inferior"}},
         {"counts", m.counts},
         {"total", m.total()},
         {"correct", m.correct()},
         {"opposite", m.opposite()}};
    if (m.total() > 0) {
        j["accuracy"] = m.accuracy();
        j["opposite_rate"] = m.opposite_rate();
        j["summary"] = m.summary();
    }
}

ConfusionMatrix confusion_matrix(const std::vector<std::pair<Regime, Winner>>& rows) {
    ConfusionMatrix m;
    for (const auto& [regime, winner] : rows) {
        int col = 0;
        switch (regime) {
            case Regime::Superior: col = 0; break;
            case Regime::Comparable: col = 1; break;
            case Regime::Inferior: col = 2; break;
            case Regime::Inconclusive:
                throw InvalidArgument("confusion matrix rows must not be Inconclusive");
        }
        const int row = winner == Winner::Pi0Better ? 0 : winner == Winner::Tie ? 1 : 2;
        m.counts[row][col] += 1;
    }
    return m;
}

}  // namespace o2o
