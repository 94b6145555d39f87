#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bracketlearn/dataset.hpp"
#include "bracketlearn/losses.hpp"
#include "bracketlearn/model.hpp"
#include "bracketlearn/oneside.hpp"

namespace bracketlearn {

template <class D>
concept Decider = requires(const D& m, std::span<const double> x) {
    { m.predict(x) } -> std::convertible_to<std::uint8_t>;
};

/// A pair of decision functions sandwiching the cloud. ordering_violation is
/// the measured mass where lower > upper; exact brackets have 0, relaxed ones
/// tolerate a small amount.
template <Decider L, Decider U = L>
struct BracketT {
    L lower;
    U upper;
    double ordering_violation = 0.0;
};

using Bracket = BracketT<PredictorModel, PredictorModel>;

/// Deferral region mass: weighted fraction where the two sides disagree.
template <Decider L, Decider U>
double usage(const BracketT<L, U>& b, const Dataset& d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.n; ++i)
        if (b.lower.predict(d.row(i)) != b.upper.predict(d.row(i))) s += d.weight(i);
    return s;
}

struct BudgetDecision {
    std::uint8_t label;
    bool used_cloud;
};

/// Where the sides agree the answer is local; elsewhere the cloud label is
/// returned verbatim.
template <Decider L, Decider U>
BudgetDecision budget_predict(const BracketT<L, U>& b, std::span<const double> x,
                              std::uint8_t cloud_label) {
    const std::uint8_t lo = b.lower.predict(x);
    const std::uint8_t hi = b.upper.predict(x);
    if (lo == hi) return {hi, false};
    return {cloud_label, true};
}

/// Agreement rate with the cloud labels; deferred rows agree by construction.
template <Decider L, Decider U>
double accuracy_vs_cloud(const BracketT<L, U>& b, const Dataset& d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.n; ++i) {
        const auto out = budget_predict(b, d.row(i), d.label(i));
        if (out.label == d.label(i)) s += d.weight(i);
    }
    return s;
}

template <Decider L, Decider U>
double measured_ordering_violation(const BracketT<L, U>& b, const Dataset& d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.n; ++i)
        if (b.lower.predict(d.row(i)) == 1 && b.upper.predict(d.row(i)) == 0) s += d.weight(i);
    return s;
}

/// Mass where lower <= cloud <= upper holds.
template <Decider L, Decider U>
double containment_mass(const BracketT<L, U>& b, const Dataset& d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.n; ++i) {
        const std::uint8_t y = d.label(i);
        if (b.lower.predict(d.row(i)) <= y && y <= b.upper.predict(d.row(i))) s += d.weight(i);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Gating formulation
// ---------------------------------------------------------------------------

/// gamma AND pi: predict 1 only where the gate keeps the point local and the
/// local predictor says 1.
template <Decider G, Decider P>
struct GatedLowerT {
    G gate;
    P predictor;
    std::uint8_t predict(std::span<const double> x) const {
        return gate.predict(x) && predictor.predict(x) ? 1 : 0;
    }
};

/// pi where gated local, 1 where deferred.
template <Decider G, Decider P>
struct GatedUpperT {
    G gate;
    P predictor;
    std::uint8_t predict(std::span<const double> x) const {
        return gate.predict(x) ? predictor.predict(x) : 1;
    }
};

template <Decider G, Decider P>
using GatedBracketT = BracketT<GatedLowerT<G, P>, GatedUpperT<G, P>>;

using GatedLower = GatedLowerT<PredictorModel, PredictorModel>;
using GatedUpper = GatedUpperT<PredictorModel, PredictorModel>;
using GatedBracket = GatedBracketT<PredictorModel, PredictorModel>;

/// A gate/predictor pair induces a bracket deferring exactly where the gate
/// says cloud: lower = gate AND predictor, upper = predictor-if-gated else 1.
/// lower <= upper pointwise by construction.
template <Decider G, Decider P>
GatedBracketT<G, P> gating_to_bracket(const G& gamma, const P& pi) {
    return {GatedLowerT<G, P>{gamma, pi}, GatedUpperT<G, P>{gamma, pi}, 0.0};
}

// ---------------------------------------------------------------------------
// Binomial tail inversion
// ---------------------------------------------------------------------------

struct BinomTailResult {
    double slack;       // p - k*/n, or p when infeasible
    long k_star;        // -1 when infeasible
    bool infeasible;
};

/// Largest k whose exact Binomial(n, p) CDF stays at or below delta,
/// returned as the slack p - k*/n. Log-space pmf summation keeps the CDF
/// accurate for n in the thousands. Infeasible (even k = 0 exceeds delta)
/// means no empirical count can certify the rate p at confidence delta.
inline BinomTailResult binom_tail_inv(std::size_t n, double p, double delta) {
    if (n < 1) throw std::invalid_argument("binom_tail_inv: n must be at least 1");
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("binom_tail_inv: p must lie in (0,1)");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("binom_tail_inv: delta must lie in (0,1)");

    const long double lp = std::log(static_cast<long double>(p));
    const long double lq = std::log1p(static_cast<long double>(-p));
    const long double lgn = std::lgamma(static_cast<long double>(n) + 1.0L);

    long double cdf = 0.0L;
    long k_star = -1;
    for (std::size_t k = 0; k <= n; ++k) {
        const long double lpmf = lgn - std::lgamma(static_cast<long double>(k) + 1.0L) -
                                 std::lgamma(static_cast<long double>(n - k) + 1.0L) +
                                 static_cast<long double>(k) * lp +
                                 static_cast<long double>(n - k) * lq;
        cdf += std::exp(lpmf);
        if (cdf <= static_cast<long double>(delta))
            k_star = static_cast<long>(k);
        else
            break;
    }
    if (k_star < 0) return {p, -1, true};
    return {p - static_cast<double>(k_star) / static_cast<double>(n), k_star, false};
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

struct Certificate {
    double zeta;
    double delta;
    double slack_below;
    double slack_above;
};

struct SelectionResult {
    Bracket bracket;
    double below_xi = 0.0;
    double above_xi = 0.0;
    std::pair<double, double> thresholds{0.5, 0.5};
    double validation_usage = 0.0;
    double validation_accuracy = 0.0;
    std::optional<Certificate> certificate;
};

/// Thrown when no candidate tuple reaches the requested accuracy; carries the
/// best tuple found so callers can still report it.
struct TargetUnattainable : std::runtime_error {
    SelectionResult best;
    explicit TargetUnattainable(const SelectionResult& b)
        : std::runtime_error("target unattainable; best validation accuracy " +
                             std::to_string(b.validation_accuracy)),
          best(b) {}
};

struct CertificationInfeasible : std::runtime_error {
    double slack;
    CertificationInfeasible(const std::string& msg, double s)
        : std::runtime_error(msg), slack(s) {}
};

namespace detail {

inline const OneSidedCandidate* pick_certified_side(const std::vector<OneSidedCandidate>& cands,
                                                    const Dataset& v, Side side, double budget) {
    const OneSidedCandidate* best = nullptr;
    double best_miss = std::numeric_limits<double>::infinity();
    for (const auto& c : cands) {
        const double leak = side == Side::below ? leakage_below(c.model, v) : leakage_above(c.model, v);
        if (leak > budget) continue;
        const double miss = weighted_disagreement(c.model, v);
        if (!best || miss < best_miss - 1e-15 ||
            (std::abs(miss - best_miss) <= 1e-15 && c.xi < best->xi)) {
            best = &c;
            best_miss = miss;
        }
    }
    return best;
}

} // namespace detail

/// High-confidence selection: a candidate qualifies when its validation
/// leakage is at most zeta/2 minus the binomial slack, which converts the
/// empirical count into a true-leakage bound of zeta/2 holding with
/// probability 1 - delta/(2|Xi|) per candidate. Among qualifiers, the one
/// with smallest total validation disagreement wins. The two sides are
/// certified independently, so the assembled bracket contains the cloud up
/// to total mass zeta with probability at least 1 - delta.
inline SelectionResult select_certified(const std::vector<OneSidedCandidate>& below,
                                        const std::vector<OneSidedCandidate>& above,
                                        const Dataset& v, double zeta, double delta) {
    if (below.empty() || above.empty())
        throw std::invalid_argument("select_certified: candidate lists must be nonempty");
    if (!(zeta > 0.0 && zeta <= 1.0)) throw std::invalid_argument("select_certified: zeta must lie in (0,1]");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("select_certified: delta must lie in (0,1)");

    const auto tail_b = binom_tail_inv(v.n, zeta / 2.0, delta / (2.0 * static_cast<double>(below.size())));
    const auto tail_a = binom_tail_inv(v.n, zeta / 2.0, delta / (2.0 * static_cast<double>(above.size())));
    if (tail_b.infeasible || tail_a.infeasible)
        throw CertificationInfeasible(
            "certification infeasible: binomial slack equals zeta/2 (slack " +
                std::to_string(zeta / 2.0) + "); increase the validation set or zeta",
            zeta / 2.0);

    const double budget_b = zeta / 2.0 - tail_b.slack;
    const double budget_a = zeta / 2.0 - tail_a.slack;
    const auto* cb = detail::pick_certified_side(below, v, Side::below, budget_b);
    const auto* ca = detail::pick_certified_side(above, v, Side::above, budget_a);
    if (!cb || !ca) {
        const double slack = !cb ? tail_b.slack : tail_a.slack;
        throw CertificationInfeasible(
            std::string("certification infeasible: no ") + (!cb ? "below" : "above") +
                "-side candidate has validation leakage within " +
                std::to_string((!cb ? budget_b : budget_a)) + " (slack " + std::to_string(slack) +
                "); increase the validation set or zeta",
            slack);
    }

    SelectionResult r;
    r.bracket = Bracket{cb->model, ca->model, 0.0};
    r.bracket.ordering_violation = measured_ordering_violation(r.bracket, v);
    r.below_xi = cb->xi;
    r.above_xi = ca->xi;
    r.thresholds = {cb->model.threshold, ca->model.threshold};
    r.validation_usage = usage(r.bracket, v);
    r.validation_accuracy = accuracy_vs_cloud(r.bracket, v);
    r.certificate = Certificate{zeta, delta, tail_b.slack, tail_a.slack};
    return r;
}

namespace detail {

/// Thresholds making exactly 0, 1, ..., max_leaked training rows leak,
/// as midpoints between adjacent sorted scores. For the below side the
/// leaking rows are negatives scoring above the threshold, so thresholds
/// descend through the sorted negative scores; for the above side they are
/// positives scoring at or below it.
inline std::vector<double> leakage_thresholds(std::vector<double> scores, Side side,
                                              std::size_t max_leaked) {
    std::vector<double> taus;
    taus.reserve(max_leaked + 1);
    if (side == Side::below) {
        std::sort(scores.begin(), scores.end(), std::greater<>());
        for (std::size_t i = 0; i <= max_leaked; ++i) {
            if (scores.empty()) { taus.push_back(0.5); continue; }
            if (i == 0) taus.push_back((scores.front() + 1.0) / 2.0);
            else if (i >= scores.size()) taus.push_back(scores.back() / 2.0);
            else taus.push_back((scores[i - 1] + scores[i]) / 2.0);
        }
    } else {
        std::sort(scores.begin(), scores.end());
        for (std::size_t i = 0; i <= max_leaked; ++i) {
            if (scores.empty()) { taus.push_back(0.5); continue; }
            if (i == 0) taus.push_back(scores.front() / 2.0);
            else if (i >= scores.size()) taus.push_back((scores.back() + 1.0) / 2.0);
            else taus.push_back((scores[i - 1] + scores[i]) / 2.0);
        }
    }
    return taus;
}

} // namespace detail

/// Accuracy-targeted selection over the full candidate cross product.
///
/// For each (below, above) pair and each leak count i up to the target's
/// allowance, thresholds are re-derived on the training set so each side
/// leaks exactly i rows there, then the tuple is scored on validation.
/// The minimum-usage tuple meeting the target wins; ties prefer higher
/// validation accuracy, then smaller multipliers. pair_cap > 0 bounds the
/// number of candidate pairs scanned (first ones kept) for large grids.
inline SelectionResult select_empirical(const std::vector<OneSidedCandidate>& below,
                                        const std::vector<OneSidedCandidate>& above,
                                        const Dataset& train, const Dataset& v,
                                        double target_accuracy, std::size_t pair_cap = 0) {
    if (below.empty() || above.empty())
        throw std::invalid_argument("select_empirical: candidate lists must be nonempty");
    if (!(target_accuracy > 0.0 && target_accuracy < 1.0))
        throw std::invalid_argument("select_empirical: target accuracy must lie in (0,1)");

    const double alpha = 1.0 - target_accuracy;
    const std::size_t max_leaked =
        static_cast<std::size_t>(std::floor(alpha * static_cast<double>(train.n)));

    // Per-candidate training scores on the leaking class, and validation scores.
    std::vector<std::vector<double>> taus_b(below.size()), taus_a(above.size());
    std::vector<std::vector<double>> vscore_b(below.size()), vscore_a(above.size());
    for (std::size_t ci = 0; ci < below.size(); ++ci) {
        std::vector<double> neg;
        for (std::size_t i = 0; i < train.n; ++i)
            if (train.label(i) == 0) neg.push_back(below[ci].model.score(train.row(i)));
        taus_b[ci] = detail::leakage_thresholds(std::move(neg), Side::below, max_leaked);
        vscore_b[ci].reserve(v.n);
        for (std::size_t i = 0; i < v.n; ++i) vscore_b[ci].push_back(below[ci].model.score(v.row(i)));
    }
    for (std::size_t ci = 0; ci < above.size(); ++ci) {
        std::vector<double> pos;
        for (std::size_t i = 0; i < train.n; ++i)
            if (train.label(i) == 1) pos.push_back(above[ci].model.score(train.row(i)));
        taus_a[ci] = detail::leakage_thresholds(std::move(pos), Side::above, max_leaked);
        vscore_a[ci].reserve(v.n);
        for (std::size_t i = 0; i < v.n; ++i) vscore_a[ci].push_back(above[ci].model.score(v.row(i)));
    }

    struct Tuple {
        std::size_t bi, ai, i;
        double tau_b, tau_a, usage, accuracy;
    };
    std::optional<Tuple> winner, best_any;
    auto better_feasible = [&](const Tuple& t, const Tuple& w) {
        if (t.usage != w.usage) return t.usage < w.usage;
        if (t.accuracy != w.accuracy) return t.accuracy > w.accuracy;
        if (below[t.bi].xi != below[w.bi].xi) return below[t.bi].xi < below[w.bi].xi;
        if (above[t.ai].xi != above[w.ai].xi) return above[t.ai].xi < above[w.ai].xi;
        return t.i < w.i;
    };

    std::size_t pairs_seen = 0;
    for (std::size_t bi = 0; bi < below.size() && (pair_cap == 0 || pairs_seen < pair_cap); ++bi) {
        for (std::size_t ai = 0; ai < above.size() && (pair_cap == 0 || pairs_seen < pair_cap); ++ai) {
            ++pairs_seen;
            for (std::size_t i = 0; i <= max_leaked; ++i) {
                const double tb = taus_b[bi][i];
                const double ta = taus_a[ai][i];
                double use = 0.0, acc = 0.0;
                for (std::size_t r = 0; r < v.n; ++r) {
                    const std::uint8_t lo = vscore_b[bi][r] > tb ? 1 : 0;
                    const std::uint8_t hi = vscore_a[ai][r] > ta ? 1 : 0;
                    if (lo != hi) {
                        use += v.weight(r);
                        acc += v.weight(r); // deferral returns the cloud label
                    } else if (hi == v.label(r)) {
                        acc += v.weight(r);
                    }
                }
                Tuple t{bi, ai, i, tb, ta, use, acc};
                if (!best_any || t.accuracy > best_any->accuracy) best_any = t;
                if (acc >= target_accuracy && (!winner || better_feasible(t, *winner))) winner = t;
            }
        }
    }

    auto materialize = [&](const Tuple& t) {
        SelectionResult r;
        r.bracket.lower = below[t.bi].model;
        r.bracket.lower.threshold = t.tau_b;
        r.bracket.upper = above[t.ai].model;
        r.bracket.upper.threshold = t.tau_a;
        r.bracket.ordering_violation = measured_ordering_violation(r.bracket, v);
        r.below_xi = below[t.bi].xi;
        r.above_xi = above[t.ai].xi;
        r.thresholds = {t.tau_b, t.tau_a};
        r.validation_usage = t.usage;
        r.validation_accuracy = t.accuracy;
        return r;
    };

    if (!winner) throw TargetUnattainable(materialize(*best_any));
    return materialize(*winner);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json selection_to_json(const SelectionResult& r) {
    nlohmann::json j{{"below", model_to_json(r.bracket.lower)},
                     {"above", model_to_json(r.bracket.upper)},
                     {"below_xi", r.below_xi},
                     {"above_xi", r.above_xi},
                     {"thresholds", {r.thresholds.first, r.thresholds.second}},
                     {"validation_usage", r.validation_usage},
                     {"validation_accuracy", r.validation_accuracy},
                     {"ordering_violation", r.bracket.ordering_violation}};
    if (r.certificate) {
        j["certificate"] = {{"zeta", r.certificate->zeta},
                            {"delta", r.certificate->delta},
                            {"slack", std::max(r.certificate->slack_below, r.certificate->slack_above)},
                            {"slack_below", r.certificate->slack_below},
                            {"slack_above", r.certificate->slack_above}};
    }
    return j;
}

inline SelectionResult selection_from_json(const nlohmann::json& j) {
    SelectionResult r;
    try {
        r.bracket.lower = model_from_json(j.at("below"));
        r.bracket.upper = model_from_json(j.at("above"));
        r.below_xi = j.at("below_xi").get<double>();
        r.above_xi = j.at("above_xi").get<double>();
        r.thresholds = {j.at("thresholds").at(0).get<double>(), j.at("thresholds").at(1).get<double>()};
        r.validation_usage = j.at("validation_usage").get<double>();
        r.validation_accuracy = j.at("validation_accuracy").get<double>();
        r.bracket.ordering_violation = j.value("ordering_violation", 0.0);
        if (j.contains("certificate")) {
            const auto& c = j.at("certificate");
            r.certificate = Certificate{c.at("zeta").get<double>(), c.at("delta").get<double>(),
                                        c.at("slack_below").get<double>(),
                                        c.at("slack_above").get<double>()};
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed selection json: ") + e.what());
    }
    return r;
}

inline void save_selection(const SelectionResult& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << selection_to_json(r).dump(2) << '\n';
}

inline SelectionResult load_selection(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    return selection_from_json(j);
}

} // namespace bracketlearn
