#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <unistd.h>

#include <bracketlearn/baselines.hpp>
#include <bracketlearn/bracketing.hpp>
#include <bracketlearn/dataset.hpp>
#include <bracketlearn/experiment.hpp>
#include <bracketlearn/oneside.hpp>
#include <bracketlearn/sgd.hpp>
#include <bracketlearn/verify.hpp>

using namespace bracketlearn;

namespace {

// Probability-rigged dataset: single feature equal to the logit of the
// wanted prediction so a unit-weight zero-bias model reproduces it.
Dataset rigged(std::vector<double> probs, std::vector<std::uint8_t> labels) {
    Dataset d;
    d.n = probs.size();
    d.k = 1;
    for (double p : probs) d.features.push_back(std::log(p / (1.0 - p)));
    d.cloud_labels = std::move(labels);
    d.weights.assign(d.n, 1.0 / static_cast<double>(d.n));
    return d;
}

PredictorModel unit_model() {
    PredictorModel m;
    m.weights = {1.0};
    m.bias = 0.0;
    return m;
}

} // namespace

TEST_CASE("per-example gradients match central finite differences") {
    Rng rng(31);
    const double h = 1e-5;
    for (int probe = 0; probe < 100; ++probe) {
        const double margin = rng.uniform(-3.0, 3.0);
        const std::uint8_t y = rng.below(2) ? 1 : 0;
        const double xi = rng.uniform(0.0, 24.0);

        // The objectives consume a probability but report the gradient with
        // respect to the margin, so the probe perturbs the margin.
        auto check = [&](auto&& obj) {
            const auto g = obj(sigmoid(margin), y);
            const double up = obj(sigmoid(margin + h), y).value;
            const double dn = obj(sigmoid(margin - h), y).value;
            const double fd = (up - dn) / (2.0 * h);
            if (std::abs(fd) > 1e-8)
                REQUIRE(g.dmargin == Catch::Approx(fd).epsilon(1e-4));
            else
                REQUIRE(std::abs(g.dmargin) < 1e-6);
        };
        check(LogisticObjective{});
        check(OneSidedObjective{&surrogate("logistic"), &surrogate("logistic"), xi});
        check(OneSidedObjective{&surrogate("squared_hinge"), &surrogate("squared_hinge"), xi});
        check(OneSidedObjective{&surrogate("logistic"), &surrogate("squared_hinge"), xi});
    }
}

TEST_CASE("sgd training is bit-reproducible and decreases the loss") {
    auto d = generate_synthetic(600, 19);
    TrainConfig cfg;
    cfg.seed = 5;
    std::vector<double> first_epoch_losses;

    auto run = [&](std::vector<double>* losses) {
        TrainConfig c = cfg;
        return sgd_train(d, LogisticObjective{}, c, nullptr,
                         [&](std::size_t, std::span<const double> params) {
                             if (losses) {
                                 PredictorModel m;
                                 m.weights.assign(params.begin(), params.end() - 1);
                                 m.bias = params.back();
                                 double total = 0;
                                 for (std::size_t i = 0; i < d.n; ++i)
                                     total += d.weight(i) *
                                              logistic_loss(sigmoid(m.margin(d.row(i))), d.label(i));
                                 losses->push_back(total);
                             }
                         });
    };
    auto m1 = run(&first_epoch_losses);
    auto m2 = run(nullptr);
    REQUIRE(m1.weights == m2.weights); // bitwise
    REQUIRE(m1.bias == m2.bias);
    REQUIRE(first_epoch_losses.size() == cfg.epochs);
    REQUIRE(first_epoch_losses.back() < first_epoch_losses.front());
}

TEST_CASE("sgd rejects non-finite gradients with a located error") {
    auto d = generate_synthetic(64, 3);
    TrainConfig cfg;
    cfg.seed = 1;
    std::vector<double> params(5, 0.0);
    std::vector<double> mask(5, 1.0);
    REQUIRE_THROWS_WITH(
        sgd_minimize(params, mask, d, cfg,
                     [](std::span<const double>, std::size_t, std::span<double> grad,
                        double) -> double {
                         grad[0] += std::numeric_limits<double>::quiet_NaN();
                         return 0.0;
                     }),
        Catch::Matchers::ContainsSubstring("epoch"));
}

TEST_CASE("warm start requires matching dimensionality") {
    auto d = generate_synthetic(64, 3);
    TrainConfig cfg;
    PredictorModel wrong;
    wrong.weights = {1.0, 2.0}; // dataset has 4 features
    wrong.bias = 0.0;
    REQUIRE_THROWS(sgd_train(d, LogisticObjective{}, cfg, &wrong));
}

TEST_CASE("plain logistic local model reaches the reference accuracy band") {
    auto d = generate_synthetic(2500, 23);
    auto [train, val] = split_train_val(d, 0.9, 23);
    TrainConfig cfg;
    cfg.seed = 23;
    auto m = train_local(train, cfg);
    auto test = generate_synthetic(20000, 555);
    const double acc = weighted_accuracy(m, test);
    REQUIRE(acc >= 0.81);
    REQUIRE(acc <= 0.87);
}

TEST_CASE("one-sided loss at xi=0 is minimized by the all-ones decision") {
    // Every +/-10-margin decision pattern on an 8-point fixture.
    Dataset base = rigged({0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 1, 0, 1, 0, 1});
    const auto& f = surrogate("logistic");
    PredictorModel m = unit_model();
    double best = 1e18;
    double all_ones = 0.0;
    for (unsigned pat = 0; pat < 256; ++pat) {
        Dataset d = base;
        for (int i = 0; i < 8; ++i) d.features[i] = (pat >> i) & 1 ? 10.0 : -10.0;
        const double loss = one_sided_loss(m, d, 0.0, f, f);
        best = std::min(best, loss);
        if (pat == 255) all_ones = loss;
    }
    REQUIRE(all_ones == Catch::Approx(best).margin(1e-12));
    REQUIRE(all_ones < 1e-3);
}

TEST_CASE("xi=0 below-training yields the all-ones decision") {
    auto d = generate_synthetic(400, 29);
    OneSidedConfig cfg;
    cfg.xi_grid = {0.0};
    cfg.train_cfg.seed = 29;
    cfg.train_cfg.epochs = 40;
    auto cands = train_below(d, cfg);
    REQUIRE(cands.size() == 1);
    double neg_mass = 0.0;
    for (std::size_t i = 0; i < d.n; ++i)
        if (d.label(i) == 0) neg_mass += d.weight(i);
    REQUIRE(cands[0].train_leakage == Catch::Approx(neg_mass));
    REQUIRE(cands[0].train_miss == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("leakage trends downward across the multiplier grid") {
    auto d = generate_synthetic(2000, 23);
    OneSidedConfig cfg;
    cfg.xi_grid = linspace(0.0, 24.0, 21);
    cfg.train_cfg.seed = 23;
    cfg.train_cfg.learning_rate = 1e-3;
    auto below = train_below(d, cfg);
    REQUIRE(below.size() == 21);
    // Weak trend: final grid point leaks far less than the unconstrained fit,
    // and the largest late-grid leakage stays under the early-grid minimum.
    REQUIRE(below.back().train_leakage <= 0.02);
    double early_min = 1.0, late_max = 0.0;
    for (std::size_t i = 1; i <= 5; ++i) early_min = std::min(early_min, below[i].train_leakage);
    for (std::size_t i = 16; i < 21; ++i) late_max = std::max(late_max, below[i].train_leakage);
    REQUIRE(late_max <= early_min + 1e-9);
}

TEST_CASE("above-side training is the label-flipped complement of below") {
    auto d = generate_synthetic(500, 41);
    OneSidedConfig cfg;
    cfg.xi_grid = {0.0, 2.0, 8.0};
    cfg.train_cfg.seed = 41;
    cfg.train_cfg.epochs = 30;

    auto above = train_above(d, cfg);
    auto flipped = flip_labels(d);
    auto below_on_flipped = train_below(flipped, cfg);
    REQUIRE(above.size() == below_on_flipped.size());
    for (std::size_t i = 0; i < above.size(); ++i) {
        const auto comp = complement(below_on_flipped[i].model);
        REQUIRE(above[i].model.weights == comp.weights); // bitwise
        REQUIRE(above[i].model.bias == comp.bias);
        REQUIRE(above[i].model.threshold == comp.threshold);
        REQUIRE(above[i].side == Side::above);
    }
}

TEST_CASE("candidate list json round trip") {
    auto d = generate_synthetic(300, 47);
    OneSidedConfig cfg;
    cfg.xi_grid = {1.0, 3.0};
    cfg.train_cfg.seed = 47;
    cfg.train_cfg.epochs = 20;
    auto cands = train_below(d, cfg);
    const std::string path = "/tmp/bl_cands_" + std::to_string(::getpid()) + ".json";
    save_candidates(cands, path);
    auto back = load_candidates(path);
    std::remove(path.c_str());
    REQUIRE(back.size() == cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i) {
        REQUIRE(back[i].model.weights == cands[i].model.weights);
        REQUIRE(back[i].xi == cands[i].xi);
        REQUIRE(back[i].side == cands[i].side);
        REQUIRE(back[i].train_leakage == cands[i].train_leakage);
    }
}

TEST_CASE("binomial tail inversion matches the worked examples") {
    const auto r1 = binom_tail_inv(100, 0.05, 0.05);
    REQUIRE_FALSE(r1.infeasible);
    REQUIRE(r1.k_star == 1);
    REQUIRE(r1.slack == Catch::Approx(0.05 - 0.01));

    const auto r2 = binom_tail_inv(1, 0.5, 0.4);
    REQUIRE(r2.infeasible);
    REQUIRE(r2.slack == Catch::Approx(0.5));
    REQUIRE(r2.k_star == -1);

    REQUIRE_THROWS(binom_tail_inv(0, 0.5, 0.1));
    REQUIRE_THROWS(binom_tail_inv(10, 1.5, 0.1));
    REQUIRE_THROWS(binom_tail_inv(10, 0.5, 0.0));
}

TEST_CASE("bracket usage, accuracy, and ordering on a hand fixture") {
    // lower = 1{x > 1}, upper = 1{x > -1}: defers on (-1, 1].
    Dataset d = rigged({0.5, 0.5, 0.5, 0.5}, {1, 1, 0, 0});
    d.features = {-2.0, 0.0, 0.5, 2.0};

    Bracket b;
    b.lower = unit_model();
    b.lower.bias = -1.0;
    b.upper = unit_model();
    b.upper.bias = 1.0;

    REQUIRE(usage(b, d) == Catch::Approx(0.5)); // x=0 and x=0.5 defer
    REQUIRE(measured_ordering_violation(b, d) == 0.0);
    // Non-deferred: x=-2 -> both 0 vs g=1 (wrong); x=2 -> both 1 vs g=0 (wrong).
    REQUIRE(accuracy_vs_cloud(b, d) == Catch::Approx(0.5));
    const auto dec = budget_predict(b, d.row(1), d.label(1));
    REQUIRE(dec.used_cloud);
    REQUIRE(dec.label == 1);
}

TEST_CASE("empirical selection finds the cheapest qualifying pair") {
    // Below candidates score x; above candidates score x. True labels 1{x>0}.
    // Validation has clean structure so the best tuple is forced.
    Dataset train = rigged(std::vector<double>(8, 0.5), {0, 0, 0, 0, 1, 1, 1, 1});
    train.features = {-4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0};
    Dataset val = train;

    auto mk = [&](double bias, double xi, Side s) {
        OneSidedCandidate c;
        c.model = unit_model();
        c.model.bias = bias;
        c.xi = xi;
        c.side = s;
        return c;
    };
    // Below options: exact threshold at 0 (usage-optimal) and a conservative one.
    std::vector<OneSidedCandidate> below{mk(-0.5, 1.0, Side::below), mk(0.5, 2.0, Side::below)};
    std::vector<OneSidedCandidate> above{mk(0.5, 1.0, Side::above), mk(-0.5, 2.0, Side::above)};

    auto sel = select_empirical(below, above, train, val, 0.99);
    REQUIRE(sel.validation_accuracy == Catch::Approx(1.0));
    REQUIRE(sel.validation_usage == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(usage(sel.bracket, val) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("unattainable targets raise and carry the best tuple") {
    // Train-derived thresholds cannot silence a validation negative whose
    // score exceeds every training score, so one forced error caps the
    // validation accuracy at 3/4 for every tuple.
    Dataset train = rigged(std::vector<double>(2, 0.5), {1, 0});
    train.features = {-1.0, -0.5};
    Dataset val = rigged(std::vector<double>(4, 0.5), {1, 0, 0, 1});
    val.features = {-1.0, -0.5, 5.0, 0.5};

    auto mk = [&](double bias, Side s) {
        OneSidedCandidate c;
        c.model = unit_model();
        c.model.bias = bias;
        c.side = s;
        c.xi = 1.0;
        return c;
    };
    std::vector<OneSidedCandidate> below{mk(0.0, Side::below)};
    std::vector<OneSidedCandidate> above{mk(0.0, Side::above)};
    bool threw = false;
    try {
        select_empirical(below, above, train, val, 0.999);
    } catch (const TargetUnattainable& e) {
        threw = true;
        REQUIRE(e.best.validation_accuracy == Catch::Approx(0.75));
    }
    REQUIRE(threw);
}

TEST_CASE("certified selection produces a certificate with the advertised budget") {
    // 500 validation points, clean candidates: leakage 0 on both sides.
    Rng rng(61);
    Dataset val;
    val.n = 500;
    val.k = 1;
    for (std::size_t i = 0; i < val.n; ++i) {
        const double x = rng.uniform(-2.0, 2.0);
        val.features.push_back(x);
        val.cloud_labels.push_back(x > 0 ? 1 : 0);
        val.weights.push_back(1.0 / 500.0);
    }
    auto mk = [&](double bias, double xi, Side s) {
        OneSidedCandidate c;
        c.model = unit_model();
        c.model.bias = bias;
        c.xi = xi;
        c.side = s;
        return c;
    };
    std::vector<OneSidedCandidate> below{mk(-0.3, 1.0, Side::below), mk(-0.6, 2.0, Side::below)};
    std::vector<OneSidedCandidate> above{mk(0.3, 1.0, Side::above), mk(0.6, 2.0, Side::above)};

    auto sel = select_certified(below, above, val, 0.2, 0.1);
    REQUIRE(sel.certificate.has_value());
    REQUIRE(sel.certificate->zeta == 0.2);
    REQUIRE(sel.certificate->delta == 0.1);
    const auto tail = binom_tail_inv(500, 0.1, 0.1 / 4.0);
    REQUIRE(sel.certificate->slack_below == Catch::Approx(tail.slack));
    REQUIRE(sel.validation_accuracy >= 0.8);

    // Tiny validation sets cannot certify: F(0) > delta.
    Dataset tiny;
    tiny.n = 2;
    tiny.k = 1;
    tiny.features = {-1.0, 1.0};
    tiny.cloud_labels = {0, 1};
    tiny.weights = {0.5, 0.5};
    REQUIRE_THROWS_AS(select_certified(below, above, tiny, 0.2, 0.1), CertificationInfeasible);
}

TEST_CASE("selection json round trip preserves certificate and thresholds") {
    SelectionResult r;
    r.bracket.lower = unit_model();
    r.bracket.lower.bias = -0.25;
    r.bracket.upper = unit_model();
    r.bracket.upper.bias = 0.75;
    r.below_xi = 2.4;
    r.above_xi = 3.6;
    r.thresholds = {0.4375, 0.5625};
    r.validation_usage = 0.125;
    r.validation_accuracy = 0.9921875;
    r.certificate = Certificate{0.1, 0.05, 0.01, 0.02};
    auto back = selection_from_json(selection_to_json(r));
    REQUIRE(back.bracket.lower.bias == r.bracket.lower.bias);
    REQUIRE(back.below_xi == r.below_xi);
    REQUIRE(back.thresholds == r.thresholds);
    REQUIRE(back.certificate.has_value());
    REQUIRE(back.certificate->slack_above == 0.02);
}

TEST_CASE("gated classifiers and their induced brackets agree everywhere") {
    Rng rng(71);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t k = 1 + rng.below(4);
        auto d = random_weighted_dataset(40, k, rng);
        GatedClassifier gc;
        gc.gate = random_linear_model(k, rng);
        gc.predictor = random_linear_model(k, rng);
        gc.gate_threshold = trial % 2 ? 0.5 : rng.uniform(0.3, 0.9);
        gc.gate_rule = trial % 3 ? GateRule::score_above : GateRule::confidence_at_least;
        auto b = to_bracket(gc);
        REQUIRE(usage(gc, d) == usage(b, d)); // bitwise-identical accumulation
        REQUIRE(accuracy_vs_cloud(gc, d) == accuracy_vs_cloud(b, d));
        for (std::size_t i = 0; i < d.n; ++i) {
            const auto x = d.row(i);
            const bool defer_gc = !gc.local(x);
            const bool defer_b = b.lower.predict(x) != b.upper.predict(x);
            REQUIRE(defer_gc == defer_b);
        }
    }
}

TEST_CASE("confidence deferral keeps the most confident points local") {
    auto d = rigged({0.05, 0.45, 0.55, 0.95}, {0, 0, 1, 1});
    GatedClassifier gc;
    gc.gate = unit_model();
    gc.predictor = unit_model();
    gc.gate_rule = GateRule::confidence_at_least;
    gc.gate_threshold = 0.9;
    // Confidence max(p, 1-p): 0.95, 0.55, 0.55, 0.95 -> only extremes local.
    REQUIRE(gc.local(d.row(0)));
    REQUIRE_FALSE(gc.local(d.row(1)));
    REQUIRE_FALSE(gc.local(d.row(2)));
    REQUIRE(gc.local(d.row(3)));
    REQUIRE(usage(gc, d) == Catch::Approx(0.5));
}

TEST_CASE("local threshold scan meets the target with the least deferral") {
    auto d = generate_synthetic(2000, 23);
    auto [train, val] = split_train_val(d, 0.9, 23);
    TrainConfig cfg;
    cfg.seed = 23;
    auto m = train_local(train, cfg);
    auto gc = local_threshold_scan(m, train, val, 0.99);
    REQUIRE(gc.method_name == "local-thresh");
    REQUIRE(accuracy_vs_cloud(gc, val) >= 0.99);
    // Brute-force check: no attained-confidence cutoff with lower usage
    // also meets the target.
    const double won = usage(gc, val);
    std::vector<double> taus;
    for (std::size_t i = 0; i < train.n; ++i) {
        const double s = sigmoid(m.margin(train.row(i)));
        taus.push_back(std::max(s, 1.0 - s));
    }
    taus.push_back(1.5);
    for (double tau : taus) {
        GatedClassifier probe = gc;
        probe.gate_threshold = tau;
        if (accuracy_vs_cloud(probe, val) >= 0.99)
            REQUIRE(usage(probe, val) >= won - 1e-12);
    }
}

TEST_CASE("hostile local models fall back to full deferral") {
    // Model anti-correlated with labels: the only way to meet 0.999 is the
    // above-all-confidence cutoff, which defers everything.
    auto d = rigged({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1});
    auto m = unit_model();
    auto gc = local_threshold_scan(m, d, d, 0.999);
    REQUIRE(usage(gc, d) == Catch::Approx(1.0));
    REQUIRE(accuracy_vs_cloud(gc, d) == Catch::Approx(1.0));
}

TEST_CASE("alternating minimisation improves or keeps validation accuracy and is deterministic") {
    auto d = generate_synthetic(800, 37);
    AltMinConfig cfg;
    cfg.lambda = 0.4;
    cfg.train_cfg.seed = 37;
    cfg.train_cfg.epochs = 40;
    auto g1 = train_alt_min(d, cfg);
    auto g2 = train_alt_min(d, cfg);
    REQUIRE(g1.gate.weights == g2.gate.weights); // bitwise determinism
    REQUIRE(g1.predictor.weights == g2.predictor.weights);
    REQUIRE(g1.method_name == "alt-min");
    const double acc = accuracy_vs_cloud(g1, d);
    REQUIRE(acc >= 0.8); // deferral must lift accuracy above the plain local fit
}

TEST_CASE("sum relaxation trains a usable gate and records its hyperparameter") {
    auto d = generate_synthetic(800, 43);
    TrainConfig cfg;
    cfg.seed = 43;
    cfg.epochs = 60;
    auto gc = train_sum_relax(d, 0.2, cfg);
    REQUIRE(gc.method_name == "sum-relax");
    REQUIRE(gc.hyperparameters.at("c").get<double>() == 0.2);
    const double usg = usage(gc, d);
    REQUIRE(usg >= 0.0);
    REQUIRE(usg <= 1.0);
    REQUIRE(accuracy_vs_cloud(gc, d) >= 0.8);
}

TEST_CASE("gated classifier json round trip") {
    GatedClassifier gc;
    gc.gate = unit_model();
    gc.gate.bias = 0.5;
    gc.predictor = unit_model();
    gc.gate_threshold = 0.75;
    gc.gate_rule = GateRule::confidence_at_least;
    gc.method_name = "local-thresh";
    gc.hyperparameters = {{"tau", 0.75}};
    auto back = gated_from_json(gated_to_json(gc));
    REQUIRE(back.gate.bias == 0.5);
    REQUIRE(back.gate_rule == GateRule::confidence_at_least);
    REQUIRE(back.method_name == "local-thresh");
    REQUIRE(back.hyperparameters.at("tau").get<double>() == 0.75);
}

TEST_CASE("experiment config json round trip keeps defaults for missing keys") {
    auto cfg = default_config();
    cfg.train.learning_rate = 1e-3;
    cfg.xi_grid = {0.0, 5.0};
    auto back = config_from_json(config_to_json(cfg));
    REQUIRE(back.train.learning_rate == 1e-3);
    REQUIRE(back.xi_grid == cfg.xi_grid);
    REQUIRE(back.lambda_grid == cfg.lambda_grid);

    auto sparse = config_from_json(nlohmann::json{{"seed", 5}});
    REQUIRE(sparse.seed == 5);
    REQUIRE(sparse.train.seed == 5);
    REQUIRE(sparse.train.epochs == 120);
    REQUIRE(sparse.xi_grid.size() == 21);
    REQUIRE(sparse.c_grid.size() == 25);
    REQUIRE(sparse.c_grid.back() == Catch::Approx(0.495));
}
