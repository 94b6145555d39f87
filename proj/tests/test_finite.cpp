#include <catch_amalgamated.hpp>

#include <algorithm>
#include <bit>
#include <set>
#include <vector>

#include <bracketlearn/bracketlearn.hpp>

using namespace bracketlearn;

namespace {

FiniteConcept concept_of(std::initializer_list<int> bits) {
    FiniteConcept c;
    for (int b : bits) c.bits.push_back(static_cast<std::uint8_t>(b));
    return c;
}

FiniteClass constants(std::size_t n) {
    FiniteClass H;
    H.name = "constants";
    H.domain_size = n;
    H.ensure_constants();
    return H;
}

} // namespace

TEST_CASE("complement flips every bit and is an involution") {
    auto g = concept_of({1, 0, 1, 1, 0});
    auto c = finite_complement(g);
    REQUIRE(c == concept_of({0, 1, 0, 0, 1}));
    REQUIRE(finite_complement(c) == g);
}

TEST_CASE("pointwise order is reflexive and detects single violations") {
    auto a = concept_of({0, 1, 0});
    auto b = concept_of({1, 1, 0});
    REQUIRE(pointwise_leq(a, a));
    REQUIRE(pointwise_leq(a, b));
    REQUIRE_FALSE(pointwise_leq(b, a));
}

TEST_CASE("finite class deduplicates and rejects mismatched domains") {
    FiniteClass H;
    H.add(concept_of({1, 0}));
    H.add(concept_of({1, 0}));
    H.add(concept_of({0, 0}));
    REQUIRE(H.concepts.size() == 2);
    REQUIRE(H.domain_size == 2);
    REQUIRE_THROWS_AS(H.add(concept_of({1, 0, 1})), std::invalid_argument);

    FiniteClass empty;
    REQUIRE_THROWS_AS(empty.validate(), std::invalid_argument);
}

TEST_CASE("constant and complement closure are idempotent") {
    FiniteClass H;
    H.add(concept_of({1, 1, 0}));
    H.ensure_constants();
    REQUIRE(H.concepts.size() == 3);
    H.ensure_constants();
    REQUIRE(H.concepts.size() == 3);

    H.close_under_complement();
    REQUIRE(H.concepts.size() == 4); // complements of the constants already present
    const auto before = H.concepts;
    H.close_under_complement();
    REQUIRE(H.concepts == before);
    for (const auto& c : H.concepts) {
        auto comp = finite_complement(c);
        REQUIRE(std::find(H.concepts.begin(), H.concepts.end(), comp) != H.concepts.end());
    }
}

TEST_CASE("measures are exact: uniform and counted masses sum to one") {
    auto u = FiniteMeasure::uniform(7);
    Rational total(0);
    for (const auto& m : u.mass) total += m;
    REQUIRE(total == Rational(1));
    u.validate();

    auto mu = FiniteMeasure::from_counts({3, 0, 5, 2});
    REQUIRE(mu.mass[0] == Rational(3, 10));
    REQUIRE(mu.mass[1] == Rational(0));
    REQUIRE(mu.mass[2] == Rational(1, 2));
    REQUIRE(mu.mass[3] == Rational(1, 5));
    mu.validate();

    REQUIRE_THROWS_AS(FiniteMeasure::from_counts({0, 0}), std::invalid_argument);
    REQUIRE_THROWS_AS(FiniteMeasure::from_counts({5, -1}), std::invalid_argument);

    FiniteMeasure bad;
    bad.mass = {Rational(1, 2), Rational(1, 3)};
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad.mass = {Rational(3, 2), Rational(-1, 2)};
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("difference mass is symmetric and exact") {
    auto mu = FiniteMeasure::from_counts({1, 2, 3, 4});
    auto a = concept_of({1, 0, 1, 0});
    auto b = concept_of({1, 1, 0, 0});
    REQUIRE(measure_of_difference(a, b, mu) == Rational(1, 2)); // cells 1 and 2
    REQUIRE(measure_of_difference(b, a, mu) == Rational(1, 2));
    REQUIRE(measure_of_difference(a, a, mu) == Rational(0));
}

TEST_CASE("one-sided oracle: self-approximation costs nothing") {
    auto g = concept_of({1, 1, 0, 1});
    FiniteClass H = constants(4);
    H.add(g);
    auto opt = inefficiency_below(g, FiniteMeasure::uniform(4), H);
    REQUIRE(opt.value == Rational(0));
    REQUIRE(opt.witness == g);
}

TEST_CASE("one-sided oracle under constants on a three-point domain") {
    auto g = concept_of({1, 1, 0});
    auto mu = FiniteMeasure::uniform(3);
    auto H = constants(3);

    auto below_g = inefficiency_below(g, mu, H);
    REQUIRE(below_g.value == Rational(2, 3));
    REQUIRE(below_g.witness == concept_of({0, 0, 0}));

    auto below_comp = inefficiency_below(finite_complement(g), mu, H);
    REQUIRE(below_comp.value == Rational(1, 3));
    REQUIRE(below_comp.witness == concept_of({0, 0, 0}));
}

TEST_CASE("one-sided oracle throws when nothing lies below the target") {
    FiniteClass H;
    H.add(concept_of({1, 1, 1}));
    REQUIRE_THROWS_AS(inefficiency_below(concept_of({1, 1, 0}), FiniteMeasure::uniform(3), H),
                      std::runtime_error);
}

TEST_CASE("one-sided oracle returns a feasible minimizer on random instances") {
    auto rng = Rng(404);
    for (int t = 0; t < 40; ++t) {
        const std::size_t n = 3 + rng.below(6);
        auto H = random_complement_closed_class(n, 24, rng);
        auto mu = random_rational_measure(n, rng);
        auto g = random_concept(n, rng);

        auto opt = inefficiency_below(g, mu, H);
        REQUIRE(std::find(H.concepts.begin(), H.concepts.end(), opt.witness) != H.concepts.end());
        REQUIRE(pointwise_leq(opt.witness, g));
        REQUIRE(measure_of_difference(opt.witness, g, mu) == opt.value);
        for (const auto& h : H.concepts) {
            if (!pointwise_leq(h, g)) continue;
            REQUIRE(measure_of_difference(h, g, mu) >= opt.value);
        }
    }
}

TEST_CASE("bracketing oracle: constants force the trivial bracket") {
    auto g = concept_of({1, 0, 1});
    auto b = optimal_bracket(g, FiniteMeasure::uniform(3), constants(3));
    REQUIRE(b.usage == Rational(1));
    REQUIRE(b.lower == concept_of({0, 0, 0}));
    REQUIRE(b.upper == concept_of({1, 1, 1}));
}

TEST_CASE("bracketing oracle: a member of the class brackets itself for free") {
    auto g = concept_of({0, 1, 1, 0});
    auto H = constants(4);
    H.add(g);
    auto b = optimal_bracket(g, FiniteMeasure::from_counts({1, 1, 2, 4}), H);
    REQUIRE(b.usage == Rational(0));
    REQUIRE(b.lower == g);
    REQUIRE(b.upper == g);
}

TEST_CASE("bracketing oracle throws when no pair is feasible") {
    FiniteClass H;
    H.add(concept_of({1, 0}));
    REQUIRE_THROWS_AS(optimal_bracket(concept_of({0, 1}), FiniteMeasure::uniform(2), H),
                      std::runtime_error);
}

TEST_CASE("bracket cost splits exactly into the two one-sided costs") {
    // Random complement-closed classes with constants: the cheapest bracket
    // equals approximating g from below plus approximating 1-g from below,
    // as exact rationals.
    auto rng = Rng(911);
    for (int t = 0; t < 60; ++t) {
        const std::size_t n = 3 + rng.below(8); // domains up to 10 points
        auto H = random_complement_closed_class(n, 64, rng);
        auto mu = random_rational_measure(n, rng);
        auto g = random_concept(n, rng);

        auto bracket = optimal_bracket(g, mu, H);
        auto below = inefficiency_below(g, mu, H);
        auto above = inefficiency_below(finite_complement(g), mu, H);
        REQUIRE(bracket.usage == below.value + above.value);
        REQUIRE(pointwise_leq(bracket.lower, g));
        REQUIRE(pointwise_leq(g, bracket.upper));
        REQUIRE(measure_of_difference(bracket.lower, bracket.upper, mu) == bracket.usage);
    }
}

TEST_CASE("two-phase sample sizes match the stated formulas") {
    // 24/lambda * log(4|H|/delta) and 2/eps^2 * log(4|H|/delta), rounded up.
    // At |H|=32, lambda=eps=0.2, delta=0.1 the log factor is log(1280).
    REQUIRE(osl_testing_samples(0.2, 32, 0.1) == 859);
    REQUIRE(osl_optimisation_samples(0.2, 32, 0.1) == 358);

    // Independent arithmetic: 120 * 7.1546... and 50 * 7.1546...
    const double logf = std::log(1280.0);
    REQUIRE(static_cast<std::size_t>(std::ceil(120.0 * logf)) == 859);
    REQUIRE(static_cast<std::size_t>(std::ceil(50.0 * logf)) == 358);

    REQUIRE(osl_testing_samples(0.1, 32, 0.1) > osl_testing_samples(0.2, 32, 0.1));
    REQUIRE(osl_optimisation_samples(0.1, 32, 0.1) > osl_optimisation_samples(0.2, 32, 0.1));
}

TEST_CASE("testing phase keeps leakage strictly below half lambda") {
    // Domain {0,1}; draws put 4 zero-labeled hits on point 0 out of 10.
    // A hypothesis firing on point 0 has empirical leakage 0.4: kept only
    // when 0.4 < lambda/2.
    FiniteClass H;
    H.add(concept_of({0, 0})); // never leaks
    H.add(concept_of({1, 0})); // leaks on the zero-labeled point
    std::vector<LabeledDraw> draws;
    for (int i = 0; i < 4; ++i) draws.push_back({0, 0});
    for (int i = 0; i < 6; ++i) draws.push_back({1, 1});

    auto kept_loose = osl_testing_phase(draws, H, 0.9); // threshold 0.45
    REQUIRE(kept_loose == std::vector<std::size_t>{0, 1});
    auto kept_exact = osl_testing_phase(draws, H, 0.8); // threshold 0.40, strict
    REQUIRE(kept_exact == std::vector<std::size_t>{0});

    REQUIRE_THROWS_AS(osl_testing_phase(std::vector<LabeledDraw>{}, H, 0.5),
                      std::invalid_argument);
}

TEST_CASE("optimisation phase minimizes missed mass and ties break earliest") {
    FiniteClass H;
    H.add(concept_of({1, 0})); // misses point 1
    H.add(concept_of({0, 1})); // misses point 0
    H.add(concept_of({1, 1})); // misses nothing
    std::vector<LabeledDraw> draws = {{0, 1}, {1, 1}, {0, 1}};

    std::vector<std::size_t> all = {0, 1, 2};
    REQUIRE(osl_optimisation_phase(draws, H, all) == 2);

    // Restricting to the two partial hypotheses: 0 misses one draw, 1 misses
    // two, so 0 wins; with symmetric draws the earlier index wins the tie.
    std::vector<std::size_t> partial = {0, 1};
    REQUIRE(osl_optimisation_phase(draws, H, partial) == 0);
    std::vector<LabeledDraw> tied = {{0, 1}, {1, 1}};
    REQUIRE(osl_optimisation_phase(tied, H, partial) == 0);

    REQUIRE_THROWS_AS(osl_optimisation_phase(draws, H, std::vector<std::size_t>{}),
                      std::runtime_error);
    REQUIRE_THROWS_AS(osl_optimisation_phase(std::vector<LabeledDraw>{}, H, all),
                      std::invalid_argument);
}

TEST_CASE("two-phase learner on degenerate classes") {
    auto g = concept_of({1, 0, 1});
    FiniteClass singleton;
    singleton.add(g);
    std::vector<LabeledDraw> t = {{0, 1}, {1, 0}};
    std::vector<LabeledDraw> o = {{2, 1}};
    REQUIRE(finite_osl_learn(t, o, singleton, 0.5) == g);

    // All labels one: both constants survive testing, and the all-ones
    // constant wins optimisation with zero missed mass.
    auto H = constants(3);
    std::vector<LabeledDraw> ones_t = {{0, 1}, {1, 1}, {2, 1}};
    std::vector<LabeledDraw> ones_o = {{1, 1}, {2, 1}};
    REQUIRE(finite_osl_learn(ones_t, ones_o, H, 0.1) == concept_of({1, 1, 1}));
}

TEST_CASE("learner output always passes its own leakage test") {
    auto rng = Rng(77);
    const double lambda = 0.3;
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 4 + rng.below(4);
        auto H = random_complement_closed_class(n, 32, rng);
        auto g = random_concept(n, rng);
        std::vector<LabeledDraw> t, o;
        for (int i = 0; i < 60; ++i) {
            std::size_t p = rng.below(n);
            t.push_back({p, g.bits[p]});
            p = rng.below(n);
            o.push_back({p, g.bits[p]});
        }
        const auto& h = finite_osl_learn(t, o, H, lambda);
        std::size_t leaked = 0;
        for (const auto& s : t)
            if (h.bits[s.point] == 1 && s.label == 0) ++leaked;
        REQUIRE(static_cast<double>(leaked) / static_cast<double>(t.size()) < lambda / 2.0);
    }
}

TEST_CASE("sparse capture: uniform support gives usage 1 - d/D") {
    // Support of size 5 inside a domain of 8, uniform over the domain.
    auto g = concept_of({1, 0, 1, 1, 0, 1, 1, 0});
    auto mu = FiniteMeasure::uniform(8);
    auto b = sparse_bracket(g, mu, 2);
    REQUIRE(b.usage == Rational(1) - Rational(2, 8));
    REQUIRE(pointwise_leq(b.lower, g));
    REQUIRE(b.upper == concept_of({1, 1, 1, 1, 1, 1, 1, 1}));

    // Uniform restricted to the support: usage is exactly 1 - d/D.
    auto mu_s = FiniteMeasure::from_counts({1, 0, 1, 1, 0, 1, 1, 0});
    REQUIRE(sparse_bracket(g, mu_s, 2).usage == Rational(3, 5));
    REQUIRE(sparse_bracket(g, mu_s, 5).usage == Rational(0));
}

TEST_CASE("sparse capture: concentration, clamping, greedy optimality") {
    auto g = concept_of({1, 1, 1, 0});
    auto mu = FiniteMeasure::from_counts({1, 90, 4, 5});
    auto b1 = sparse_bracket(g, mu, 1);
    REQUIRE(b1.lower == concept_of({0, 1, 0, 0})); // heaviest support point
    REQUIRE(b1.usage == Rational(1) - Rational(9, 10));

    // d larger than the support clamps to full capture of the support.
    auto bc = sparse_bracket(g, mu, 9);
    REQUIRE(bc.usage == Rational(1) - Rational(95, 100));

    // No size-<=d subset of the support beats the greedy pick.
    auto rng = Rng(5150);
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = 4 + rng.below(9); // up to 12 points
        auto gg = random_concept(n, rng);
        auto mm = random_rational_measure(n, rng);
        std::vector<std::size_t> support;
        for (std::size_t i = 0; i < n; ++i)
            if (gg.bits[i]) support.push_back(i);
        const std::size_t d = 1 + rng.below(3);
        auto greedy = sparse_bracket(gg, mm, d);
        for (std::size_t mask = 0; mask < (std::size_t{1} << support.size()); ++mask) {
            if (static_cast<std::size_t>(std::popcount(mask)) > d) continue;
            Rational captured(0);
            for (std::size_t i = 0; i < support.size(); ++i)
                if (mask & (std::size_t{1} << i)) captured += mm.mass[support[i]];
            REQUIRE(Rational(1) - captured >= greedy.usage);
        }
    }
}

TEST_CASE("block threshold shapes are recognized exactly") {
    // Three blocks of length 2; thresholds 0 (all ones), 1, 2 (all zeros).
    auto g = concept_of({1, 1, 0, 1, 0, 0});
    auto ks = tensor_threshold_shape(g, 3);
    REQUIRE(ks == std::vector<std::size_t>{0, 1, 2});

    REQUIRE_THROWS_AS(tensor_threshold_shape(concept_of({1, 0, 1, 0}), 2),
                      std::invalid_argument); // 10 inside a block
    REQUIRE_THROWS_AS(tensor_threshold_shape(g, 4), std::invalid_argument); // 6 % 4 != 0
    REQUIRE_THROWS_AS(tensor_threshold_shape(g, 0), std::invalid_argument);
}

TEST_CASE("block threshold capture: budget goes to the heaviest blocks") {
    // Blocks of length 2 with masses 1/10, 6/10, 3/10.
    auto g = concept_of({0, 1, 0, 1, 1, 1});
    auto mu = FiniteMeasure::from_counts({1, 0, 2, 4, 3, 0});
    auto b = tensor_threshold_bracket(g, mu, 3, 2); // one block captured
    REQUIRE(b.usage == Rational(4, 10)); // everything outside the middle block
    for (std::size_t j = 2; j < 4; ++j) {
        REQUIRE(b.lower.bits[j] == g.bits[j]);
        REQUIRE(b.upper.bits[j] == g.bits[j]);
    }
    REQUIRE(pointwise_leq(b.lower, g));
    REQUIRE(pointwise_leq(g, b.upper));

    // d = blocks: a single collapsed block remains and its whole mass defers.
    auto b3 = tensor_threshold_bracket(g, mu, 3, 3);
    REQUIRE(b3.usage == Rational(1, 10)); // lightest block left collapsed
    // d past the block count captures everything.
    REQUIRE(tensor_threshold_bracket(g, mu, 3, 4).usage == Rational(0));

    // Single block, d = 1: nothing selected, full deferral.
    auto one = tensor_threshold_bracket(concept_of({0, 1}), FiniteMeasure::uniform(2), 1, 1);
    REQUIRE(one.usage == Rational(1));
    REQUIRE_THROWS_AS(tensor_threshold_bracket(g, mu, 3, 0), std::invalid_argument);
}

TEST_CASE("threshold family enumeration is deduplicated and shape-valid") {
    auto H = tensor_threshold_class(3, 2, 2);
    std::set<std::vector<std::uint8_t>> seen;
    for (const auto& c : H.concepts) {
        REQUIRE(seen.insert(c.bits).second);
        REQUIRE_NOTHROW(tensor_threshold_shape(c, 3)); // constants fill is threshold-shaped
    }
    // Constants are the empty-subset members.
    REQUIRE(std::find(H.concepts.begin(), H.concepts.end(),
                      concept_of({0, 0, 0, 0, 0, 0})) != H.concepts.end());
    REQUIRE(std::find(H.concepts.begin(), H.concepts.end(),
                      concept_of({1, 1, 1, 1, 1, 1})) != H.concepts.end());
}

TEST_CASE("block threshold capture is valid but never beats exhaustive search") {
    auto rng = Rng(31337);
    const struct { std::size_t blocks, d, len; } shapes[] = {
        {2, 2, 2}, {3, 2, 2}, {2, 3, 2}, {4, 2, 3}, {3, 3, 4}, {6, 2, 2},
    };
    for (const auto& sh : shapes) {
        const std::size_t n = sh.blocks * sh.len;
        // Random block-threshold target.
        FiniteConcept g;
        g.bits.assign(n, 0);
        for (std::size_t b = 0; b < sh.blocks; ++b) {
            const std::size_t k = rng.below(sh.len + 1);
            for (std::size_t j = k; j < sh.len; ++j) g.bits[b * sh.len + j] = 1;
        }
        auto mu = random_rational_measure(n, rng);
        auto built = tensor_threshold_bracket(g, mu, sh.blocks, sh.d);
        REQUIRE(pointwise_leq(built.lower, g));
        REQUIRE(pointwise_leq(g, built.upper));

        auto H = tensor_threshold_class(sh.blocks, sh.d, sh.len);
        auto opt = optimal_bracket(g, mu, H);
        REQUIRE(built.usage >= opt.usage);

        // Uniform measure: the stated ceiling 1 - (d-1)/blocks holds exactly.
        auto uni = tensor_threshold_bracket(g, FiniteMeasure::uniform(n), sh.blocks, sh.d);
        REQUIRE(uni.usage <= Rational(1) - Rational(static_cast<long long>(sh.d - 1),
                                                    static_cast<long long>(sh.blocks)));
    }
}

TEST_CASE("rectangle capture on the checkerboard splits the square in half") {
    // 2x2 grid, four unit parts, labels alternating; one part captured per
    // side leaves exactly half the mass deferred.
    std::vector<GridRect> parts = {
        {0, 1, 0, 1, 1}, {1, 2, 0, 1, 0}, {0, 1, 1, 2, 0}, {1, 2, 1, 2, 1},
    };
    auto mu = FiniteMeasure::uniform(4);
    auto b = rectangle_bracket(parts, mu, 2, 2, 1);
    REQUIRE(b.usage == Rational(1, 2));

    // The grid target assembled from part labels is bracketed pointwise.
    FiniteConcept g;
    g.bits = {1, 0, 0, 1};
    REQUIRE(pointwise_leq(b.lower, g));
    REQUIRE(pointwise_leq(g, b.upper));

    REQUIRE(rectangle_bracket(parts, mu, 2, 2, 2).usage == Rational(0));
    REQUIRE(rectangle_bracket(parts, mu, 2, 2, 9).usage == Rational(0));
}

TEST_CASE("rectangle capture favors heavy parts and validates its input") {
    // 3x1 grid, three parts; masses 1/6, 3/6, 2/6; labels 1, 0, 1.
    std::vector<GridRect> parts = {
        {0, 1, 0, 1, 1}, {1, 2, 0, 1, 0}, {2, 3, 0, 1, 1},
    };
    auto mu = FiniteMeasure::from_counts({1, 3, 2});
    auto b = rectangle_bracket(parts, mu, 3, 1, 1);
    // Captures the heavier 1-part (mass 2/6) and the only 0-part (3/6).
    REQUIRE(b.usage == Rational(1, 6));
    REQUIRE(b.lower.bits == std::vector<std::uint8_t>{0, 0, 1});
    REQUIRE(b.upper.bits == std::vector<std::uint8_t>{1, 0, 1});

    std::vector<GridRect> overlapping = {{0, 2, 0, 1, 1}, {1, 3, 0, 1, 0}};
    REQUIRE_THROWS_AS(rectangle_bracket(overlapping, mu, 3, 1, 1), std::invalid_argument);
    std::vector<GridRect> gap = {{0, 1, 0, 1, 1}, {2, 3, 0, 1, 0}};
    REQUIRE_THROWS_AS(rectangle_bracket(gap, mu, 3, 1, 1), std::invalid_argument);
    std::vector<GridRect> oob = {{0, 4, 0, 1, 1}};
    REQUIRE_THROWS_AS(rectangle_bracket(oob, mu, 3, 1, 1), std::invalid_argument);
    std::vector<GridRect> empty_rect = {{1, 1, 0, 1, 1}};
    REQUIRE_THROWS_AS(rectangle_bracket(empty_rect, mu, 3, 1, 1), std::invalid_argument);
    REQUIRE_THROWS_AS(rectangle_bracket(parts, FiniteMeasure::uniform(4), 3, 1, 1),
                      std::invalid_argument);
}

TEST_CASE("finite class json round trip preserves order and content") {
    FiniteClass H;
    H.name = "demo";
    H.add(concept_of({1, 0, 1}));
    H.add(concept_of({0, 0, 0}));
    auto j = finite_class_to_json(H);
    auto back = finite_class_from_json(j);
    REQUIRE(back.name == "demo");
    REQUIRE(back.domain_size == 3);
    REQUIRE(back.concepts == H.concepts);

    REQUIRE_THROWS_WITH(finite_class_from_json(nlohmann::json{{"name", "x"}}),
                        Catch::Matchers::ContainsSubstring("malformed finite class json"));
    nlohmann::json bad = {{"name", "x"}, {"N", 2}, {"concepts", {"1x"}}};
    REQUIRE_THROWS(finite_class_from_json(bad));
}
