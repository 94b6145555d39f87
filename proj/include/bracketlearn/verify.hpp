#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bracketlearn/bracketing.hpp"
#include "bracketlearn/dataset.hpp"
#include "bracketlearn/finite.hpp"
#include "bracketlearn/geometry.hpp"
#include "bracketlearn/model.hpp"
#include "bracketlearn/rng.hpp"

namespace bracketlearn {

struct VerifyCase {
    std::string name;
    bool pass;
    std::string detail;
};

struct VerifyReport {
    std::string suite;
    std::vector<VerifyCase> cases;

    bool all_pass() const {
        for (const auto& c : cases)
            if (!c.pass) return false;
        return true;
    }
};

inline nlohmann::json verify_report_to_json(const VerifyReport& r) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : r.cases)
        arr.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    return nlohmann::json{{"suite", r.suite}, {"all_pass", r.all_pass()}, {"cases", arr}};
}

// ---------------------------------------------------------------------------
// Random fixture generators (shared with the test suite)
// ---------------------------------------------------------------------------

inline FiniteConcept random_concept(std::size_t n, Rng& rng) {
    FiniteConcept c;
    c.bits.reserve(n);
    for (std::size_t i = 0; i < n; ++i) c.bits.push_back(rng.below(2) ? 1 : 0);
    return c;
}

/// Complement-closed class containing the constants, at most max_size
/// concepts (max_size must be even and at least 4).
inline FiniteClass random_complement_closed_class(std::size_t n, std::size_t max_size, Rng& rng) {
    FiniteClass H;
    H.name = "random";
    H.domain_size = n;
    H.ensure_constants();
    const std::size_t extra = 1 + rng.below(max_size / 2 > 1 ? max_size / 2 - 1 : 1);
    for (std::size_t i = 0; i < extra; ++i) H.add(random_concept(n, rng));
    H.close_under_complement();
    return H;
}

inline FiniteMeasure random_rational_measure(std::size_t n, Rng& rng) {
    std::vector<long long> counts(n);
    for (auto& c : counts) c = 1 + static_cast<long long>(rng.below(1000));
    return FiniteMeasure::from_counts(counts);
}

inline PredictorModel random_linear_model(std::size_t k, Rng& rng) {
    PredictorModel m;
    m.weights.resize(k);
    for (auto& w : m.weights) w = rng.normal();
    m.bias = rng.normal();
    m.threshold = 0.5;
    return m;
}

/// Small dataset with random features, labels, and positive normalized
/// weights, for fixtures that need an arbitrary empirical measure.
inline Dataset random_weighted_dataset(std::size_t n, std::size_t k, Rng& rng) {
    Dataset d;
    d.n = n;
    d.k = k;
    d.features.reserve(n * k);
    d.cloud_labels.reserve(n);
    d.weights.reserve(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) d.features.push_back(rng.uniform(-2.0, 2.0));
        d.cloud_labels.push_back(rng.below(2) ? 1 : 0);
        const double w = 0.1 + rng.uniform();
        d.weights.push_back(w);
        total += w;
    }
    for (auto& w : d.weights) w /= total;
    return d;
}

/// Random strictly convex polygon: D well-separated angles on an ellipse.
inline ConvexPolygon random_convex_polygon(std::size_t D, Rng& rng) {
    const double a = rng.uniform(0.6, 1.8);
    const double b = rng.uniform(0.6, 1.8);
    std::vector<double> angles(D);
    // Angle gaps bounded away from zero keep the polygon far from degenerate.
    double total = 0.0;
    for (auto& g : angles) {
        g = 0.35 + rng.uniform();
        total += g;
    }
    ConvexPolygon P;
    double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    for (std::size_t i = 0; i < D; ++i) {
        theta += angles[i] / total * 2.0 * 3.14159265358979323846;
        P.vertices.push_back({a * std::cos(theta), b * std::sin(theta)});
    }
    P.validate();
    return P;
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

/// The optimal bracket usage must equal the sum of the two one-sided
/// inefficiencies, each found by independent exhaustive search, exactly.
inline VerifyReport verify_decoupling(std::uint64_t seed, std::size_t instances = 200) {
    VerifyReport rep{"decoupling", {}};
    std::size_t failures = 0;
    std::string first_failure;
    for (std::size_t t = 0; t < instances; ++t) {
        Rng rng = Rng::derived(seed, 0xdc01, t);
        const std::size_t n = 3 + rng.below(8); // domain size 3..10
        auto H = random_complement_closed_class(n, 64, rng);
        auto mu = random_rational_measure(n, rng);
        auto g = random_concept(n, rng);

        const auto bracket = optimal_bracket(g, mu, H);
        const auto below = inefficiency_below(g, mu, H);
        const auto above = inefficiency_below(finite_complement(g), mu, H);
        const bool ok = bracket.usage == below.value + above.value;
        if (!ok && failures++ == 0) {
            std::ostringstream os;
            os << "instance " << t << ": bracket " << bracket.usage.numerator() << "/"
               << bracket.usage.denominator() << " vs sum "
               << (below.value + above.value).numerator() << "/"
               << (below.value + above.value).denominator();
            first_failure = os.str();
        }
    }
    rep.cases.push_back({std::to_string(instances) + " random complement-closed instances",
                         failures == 0,
                         failures == 0 ? "bracket optimum = below + above inefficiency on all"
                                       : first_failure});
    return rep;
}

/// The induced bracket must defer exactly where the gate says cloud and
/// reproduce the gated prediction pointwise; equalities are exact.
inline VerifyReport verify_gating(std::uint64_t seed, std::size_t fixtures = 100) {
    VerifyReport rep{"gating", {}};
    std::size_t failures = 0;
    std::string first_failure;
    for (std::size_t t = 0; t < fixtures; ++t) {
        Rng rng = Rng::derived(seed, 0x6a71, t);
        const std::size_t n = 5 + rng.below(16);
        const std::size_t k = 1 + rng.below(4);
        auto d = random_weighted_dataset(n, k, rng);
        auto gamma = random_linear_model(k, rng);
        auto pi = random_linear_model(k, rng);

        auto bracket = gating_to_bracket(gamma, pi);
        double gate_zero_mass = 0.0;
        bool pointwise_ok = true;
        for (std::size_t i = 0; i < d.n; ++i) {
            const bool local = gamma.predict(d.row(i)) == 1;
            if (!local) gate_zero_mass += d.weight(i);
            const std::uint8_t expected = local ? pi.predict(d.row(i)) : d.label(i);
            const auto got = budget_predict(bracket, d.row(i), d.label(i));
            if (got.label != expected || got.used_cloud != !local) pointwise_ok = false;
        }
        const bool ok = pointwise_ok && usage(bracket, d) == gate_zero_mass &&
                        measured_ordering_violation(bracket, d) == 0.0;
        if (!ok && failures++ == 0) first_failure = "fixture " + std::to_string(t);
    }
    rep.cases.push_back({std::to_string(fixtures) + " random gate/predictor fixtures", failures == 0,
                         failures == 0 ? "usage and pointwise predictions match exactly"
                                       : first_failure});
    return rep;
}

namespace detail {

inline Rational true_leakage(const FiniteConcept& h, const FiniteConcept& g,
                             const FiniteMeasure& mu) {
    Rational s(0);
    for (std::size_t i = 0; i < h.bits.size(); ++i)
        if (h.bits[i] == 1 && g.bits[i] == 0) s += mu.mass[i];
    return s;
}

inline Rational true_missed(const FiniteConcept& h, const FiniteConcept& g,
                            const FiniteMeasure& mu) {
    Rational s(0);
    for (std::size_t i = 0; i < h.bits.size(); ++i)
        if (h.bits[i] == 0 && g.bits[i] == 1) s += mu.mass[i];
    return s;
}

inline std::size_t sample_point(const std::vector<double>& cdf, Rng& rng) {
    const double u = rng.uniform();
    return static_cast<std::size_t>(
        std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
}

} // namespace detail

/// Monte-Carlo check of the two-phase learner at the printed sample sizes:
/// the returned hypothesis keeps true leakage at most lambda and true missed
/// mass within eps of the best zero-leakage competitor, and phase 1's kept
/// set sandwiches between the true leakage level sets.
inline VerifyReport verify_osl_pac(std::uint64_t seed, std::size_t trials = 500) {
    VerifyReport rep{"osl-pac", {}};
    const double lambda = 0.2, eps = 0.2, delta = 0.1;
    const std::size_t class_size = 32, domain = 40;
    const std::size_t m1 = osl_testing_samples(lambda, class_size, delta);
    const std::size_t m2 = osl_optimisation_samples(eps, class_size, delta);

    std::size_t guarantee_ok = 0, sandwich_ok = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        Rng rng = Rng::derived(seed, 0x05c1, t);

        FiniteClass H;
        H.name = "osl";
        H.domain_size = domain;
        H.add(FiniteConcept{std::vector<std::uint8_t>(domain, 0)}); // zero leakage anchor
        while (H.concepts.size() < class_size) H.add(random_concept(domain, rng));
        auto mu = random_rational_measure(domain, rng);
        auto g = random_concept(domain, rng);

        std::vector<double> cdf(domain);
        double acc = 0.0;
        for (std::size_t i = 0; i < domain; ++i) {
            acc += boost::rational_cast<double>(mu.mass[i]);
            cdf[i] = acc;
        }
        cdf.back() = 1.0;

        auto draw = [&](std::size_t m) {
            std::vector<LabeledDraw> s;
            s.reserve(m);
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t x = detail::sample_point(cdf, rng);
                s.push_back({x, g.bits[x]});
            }
            return s;
        };
        const auto testing = draw(m1);
        const auto optimisation = draw(m2);

        const auto kept = osl_testing_phase(testing, H, lambda);
        if (kept.empty()) continue; // counts as failure of both events
        const std::size_t picked = osl_optimisation_phase(optimisation, H, kept);

        // Exact true functionals.
        std::vector<Rational> leak(class_size), missed(class_size);
        for (std::size_t hi = 0; hi < class_size; ++hi) {
            leak[hi] = detail::true_leakage(H.concepts[hi], g, mu);
            missed[hi] = detail::true_missed(H.concepts[hi], g, mu);
        }
        Rational zero_leak_best(1);
        for (std::size_t hi = 0; hi < class_size; ++hi)
            if (leak[hi] == Rational(0) && missed[hi] < zero_leak_best) zero_leak_best = missed[hi];

        const bool leak_ok = boost::rational_cast<double>(leak[picked]) <= lambda;
        const bool excess_ok =
            boost::rational_cast<double>(missed[picked] - zero_leak_best) <= eps;
        if (leak_ok && excess_ok) ++guarantee_ok;

        bool sandwich = true;
        std::vector<std::uint8_t> in_kept(class_size, 0);
        for (std::size_t hi : kept) in_kept[hi] = 1;
        for (std::size_t hi = 0; hi < class_size; ++hi) {
            const double l = boost::rational_cast<double>(leak[hi]);
            if (l <= lambda / 4.0 && !in_kept[hi]) sandwich = false;   // lower set must survive
            if (in_kept[hi] && l > 3.0 * lambda / 4.0) sandwich = false; // kept must stay small
        }
        if (sandwich) ++sandwich_ok;
    }

    const double frac_g = static_cast<double>(guarantee_ok) / static_cast<double>(trials);
    const double frac_s = static_cast<double>(sandwich_ok) / static_cast<double>(trials);
    rep.cases.push_back({"leakage and excess guarantee (m1=" + std::to_string(m1) +
                             ", m2=" + std::to_string(m2) + ")",
                         frac_g >= 0.9,
                         std::to_string(guarantee_ok) + "/" + std::to_string(trials) + " trials"});
    rep.cases.push_back({"phase-1 level-set sandwich", frac_s >= 0.9,
                         std::to_string(sandwich_ok) + "/" + std::to_string(trials) + " trials"});
    return rep;
}

/// Inner/outer polygon approximations stay within the coverage budget on
/// uniform box samples, with Monte-Carlo tolerance.
inline VerifyReport verify_polygon(std::uint64_t seed, std::size_t polygons = 100,
                                   std::size_t samples = 10000) {
    VerifyReport rep{"polygon", {}};
    std::size_t failures = 0;
    std::string first_failure;
    for (std::size_t t = 0; t < polygons; ++t) {
        Rng rng = Rng::derived(seed, 0x9017, t);
        const std::size_t D = 6 + rng.below(7);  // 6..12
        const std::size_t d = 4 + rng.below(2);  // 4 or 5
        auto P = random_convex_polygon(D, rng);

        double x0 = P.vertices[0].x, x1 = x0, y0 = P.vertices[0].y, y1 = y0;
        for (const auto& v : P.vertices) {
            x0 = std::min(x0, v.x); x1 = std::max(x1, v.x);
            y0 = std::min(y0, v.y); y1 = std::max(y1, v.y);
        }
        std::vector<WeightedPoint> sample;
        sample.reserve(samples);
        for (std::size_t i = 0; i < samples; ++i)
            sample.push_back({rng.uniform(x0, x1), rng.uniform(y0, y1), 1.0});

        const auto budget = polygon_budget(P, sample, d);
        const double m = std::ceil(static_cast<double>(D) / static_cast<double>(d - 2));
        const double bound = 1.0 - 1.0 / m + 0.02;
        if (budget.usage > bound && failures++ == 0) {
            std::ostringstream os;
            os << "polygon " << t << " (D=" << D << ", d=" << d << "): usage " << budget.usage
               << " > " << bound;
            first_failure = os.str();
        }
    }
    rep.cases.push_back({std::to_string(polygons) + " random polygons vs coverage bound",
                         failures == 0,
                         failures == 0 ? "all usages within bound + 0.02" : first_failure});
    return rep;
}

/// Exact checks of the discrete constructions: sparse capture, tensorized
/// thresholds (against the exhaustive optimum), and rectangle partitions on
/// a dense-measure grid fixture.
inline VerifyReport verify_constructions(std::uint64_t seed) {
    VerifyReport rep{"constructions", {}};
    Rng rng = Rng::derived(seed, 0xc025);

    { // sparse: usage exactly 1 - d/D on uniform support measures
        bool ok = true;
        std::string detail = "usage = 1 - d/D exactly for all D <= 10, d <= D";
        for (std::size_t D = 1; D <= 10 && ok; ++D) {
            const std::size_t n = D + 3;
            FiniteConcept g;
            g.bits.assign(n, 0);
            std::vector<long long> counts(n, 0);
            for (std::size_t i = 0; i < D; ++i) {
                g.bits[i] = 1;
                counts[i] = 1;
            }
            FiniteMeasure mu = FiniteMeasure::from_counts(counts);
            for (std::size_t d = 1; d <= D && ok; ++d) {
                const auto b = sparse_bracket(g, mu, d);
                const Rational expect =
                    Rational(1) - Rational(static_cast<long long>(d), static_cast<long long>(D));
                if (b.usage != expect || !pointwise_leq(b.lower, g) ||
                    !pointwise_leq(g, b.upper)) {
                    ok = false;
                    detail = "failed at D=" + std::to_string(D) + ", d=" + std::to_string(d);
                }
            }
        }
        rep.cases.push_back({"sparse capture", ok, detail});
    }

    { // tensorized thresholds vs the uniform bound and the exhaustive optimum
        bool ok = true;
        std::string detail = "usage <= 1 - (d-1)/D and >= exhaustive optimum on all fixtures";
        const std::pair<std::size_t, std::size_t> shapes[] = {{2, 2}, {3, 2}, {2, 3}, {4, 3}, {3, 4}, {6, 2}};
        for (const auto& [blocks, len] : shapes) {
            const std::size_t n = blocks * len;
            FiniteConcept g;
            g.bits.assign(n, 0);
            for (std::size_t b = 0; b < blocks; ++b) {
                const std::size_t k = rng.below(len + 1);
                for (std::size_t j = k; j < len; ++j) g.bits[b * len + j] = 1;
            }
            FiniteMeasure mu = FiniteMeasure::uniform(n);
            for (std::size_t d = 1; d <= blocks && ok; ++d) {
                const auto built = tensor_threshold_bracket(g, mu, blocks, d);
                const Rational bound = Rational(1) - Rational(static_cast<long long>(d - 1),
                                                              static_cast<long long>(blocks));
                const auto H = tensor_threshold_class(blocks, d, len);
                const auto opt = optimal_bracket(g, mu, H);
                if (built.usage > bound || built.usage < opt.usage ||
                    !pointwise_leq(built.lower, g) || !pointwise_leq(g, built.upper)) {
                    ok = false;
                    detail = "failed at blocks=" + std::to_string(blocks) +
                             ", len=" + std::to_string(len) + ", d=" + std::to_string(d);
                }
            }
        }
        rep.cases.push_back({"tensorized thresholds", ok, detail});
    }

    { // rectangle partition on a lower-bounded-density grid
        const std::size_t G = 10;
        std::vector<long long> counts(G * G);
        long long min_count = 2000, total = 0;
        for (auto& c : counts) {
            c = 800 + static_cast<long long>(rng.below(401));
            min_count = std::min(min_count, c);
            total += c;
        }
        FiniteMeasure mu = FiniteMeasure::from_counts(counts);
        // Checkerboard of 8 parts, each at least 10 cells (volume 0.1 of the unit square).
        std::vector<GridRect> parts;
        const std::size_t xs[] = {0, 5, 10};
        const std::size_t ys[] = {0, 2, 5, 7, 10};
        for (std::size_t yi = 0; yi + 1 < 5; ++yi)
            for (std::size_t xi = 0; xi + 1 < 3; ++xi)
                parts.push_back({xs[xi], xs[xi + 1], ys[yi], ys[yi + 1],
                                 static_cast<std::uint8_t>((xi + yi) % 2)});

        const std::size_t dim = 2, vc_budget = 16;
        const std::size_t kappa = vc_budget / (2 * dim) - 1;
        const Rational V(1, 10);
        const Rational rho = Rational(min_count * static_cast<long long>(G * G), total);
        const Rational bound =
            Rational(1) - rho * Rational(static_cast<long long>(kappa)) * V / Rational(3);

        const auto b = rectangle_bracket(parts, mu, G, G, kappa);
        FiniteConcept g;
        g.bits.assign(G * G, 0);
        for (const auto& r : parts)
            for (std::size_t y = r.y0; y < r.y1; ++y)
                for (std::size_t x = r.x0; x < r.x1; ++x) g.bits[y * G + x] = r.label;
        const bool ok = b.usage <= bound && pointwise_leq(b.lower, g) && pointwise_leq(g, b.upper);
        std::ostringstream os;
        os << "usage " << boost::rational_cast<double>(b.usage) << " vs bound "
           << boost::rational_cast<double>(bound) << " (kappa=" << kappa << ")";
        rep.cases.push_back({"rectangle partition density bound", ok, os.str()});
    }

    return rep;
}

/// Cross-check the log-space tail inversion against a direct recurrence
/// evaluation of the same CDF.
inline VerifyReport verify_binom(std::size_t n_max = 200) {
    VerifyReport rep{"binom", {}};
    for (double delta : {0.01, 0.05, 0.1}) {
        std::size_t mismatches = 0;
        std::string first;
        for (std::size_t n = 1; n <= n_max; ++n) {
            for (int pi = 1; pi <= 50; ++pi) {
                const double p = static_cast<double>(pi) / 100.0;
                const auto got = binom_tail_inv(n, p, delta);

                // Independent route: multiplicative pmf recurrence.
                const long double ratio = static_cast<long double>(p) / (1.0L - static_cast<long double>(p));
                long double pmf = std::pow(1.0L - static_cast<long double>(p), static_cast<long double>(n));
                long double cdf = pmf;
                long want = cdf <= static_cast<long double>(delta) ? 0 : -1;
                for (std::size_t k = 0; k + 1 <= n && want == static_cast<long>(k); ++k) {
                    pmf *= ratio * static_cast<long double>(n - k) / static_cast<long double>(k + 1);
                    cdf += pmf;
                    if (cdf <= static_cast<long double>(delta)) want = static_cast<long>(k + 1);
                }
                if (got.k_star != want && mismatches++ == 0)
                    first = "n=" + std::to_string(n) + ", p=" + std::to_string(p) +
                            ": k*=" + std::to_string(got.k_star) + " vs " + std::to_string(want);
            }
        }
        rep.cases.push_back({"delta=" + std::to_string(delta), mismatches == 0,
                             mismatches == 0 ? "exact k* agreement on the full grid" : first});
    }
    return rep;
}

inline VerifyReport run_verify_suite(const std::string& suite, std::uint64_t seed) {
    if (suite == "decoupling") return verify_decoupling(seed);
    if (suite == "gating") return verify_gating(seed);
    if (suite == "osl-pac") return verify_osl_pac(seed);
    if (suite == "polygon") return verify_polygon(seed);
    if (suite == "constructions") return verify_constructions(seed);
    if (suite == "binom") return verify_binom();
    throw std::invalid_argument("unknown suite: " + suite);
}

} // namespace bracketlearn
