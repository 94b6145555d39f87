#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bracketlearn/baselines.hpp"
#include "bracketlearn/bracketing.hpp"
#include "bracketlearn/dataset.hpp"
#include "bracketlearn/oneside.hpp"
#include "bracketlearn/report.hpp"
#include "bracketlearn/sgd.hpp"

namespace bracketlearn {

/// Everything an experiment run depends on, with the published defaults
/// pre-filled: optimizer schedule, the three hyperparameter grids, and the
/// split fractions used when a raw CSV must be cut into train/val/test.
struct ExperimentConfig {
    std::uint64_t seed = 20240817;
    double train_fraction = 0.8;
    double validation_fraction = 0.1;
    TrainConfig train;
    std::vector<double> xi_grid;
    std::string surrogate = "logistic";
    std::string constraint_surrogate = "logistic";
    bool per_class_normalization = false;
    bool warm_start = true;
    std::size_t selection_pair_cap = 0;
    std::vector<double> lambda_grid;
    double alt_min_kl_weight = 1.0;
    std::size_t alt_min_rounds = 10;
    std::vector<double> c_grid;
};

inline std::vector<double> linspace(double lo, double hi, std::size_t count) {
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i)
        v[i] = count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
    return v;
}

inline ExperimentConfig default_config() {
    ExperimentConfig c;
    c.train.seed = c.seed;
    c.xi_grid = linspace(0.0, 24.0, 21);
    c.lambda_grid = linspace(0.0, 1.0, 25);
    c.c_grid = linspace(0.0, 0.495, 25);
    return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    return nlohmann::json{
        {"seed", c.seed},
        {"split", {{"train_fraction", c.train_fraction}, {"validation_fraction", c.validation_fraction}}},
        {"optimizer",
         {{"learning_rate", c.train.learning_rate},
          {"lr_halving_period", c.train.lr_halving_period},
          {"epochs", c.train.epochs},
          {"batch_size", c.train.batch_size},
          {"l2_penalty", c.train.l2_penalty}}},
        {"one_sided",
         {{"xi_grid", c.xi_grid},
          {"surrogate", c.surrogate},
          {"constraint_surrogate", c.constraint_surrogate},
          {"per_class_normalization", c.per_class_normalization},
          {"warm_start", c.warm_start},
          {"selection_pair_cap", c.selection_pair_cap}}},
        {"alt_min",
         {{"lambda_grid", c.lambda_grid},
          {"kl_weight", c.alt_min_kl_weight},
          {"max_rounds", c.alt_min_rounds}}},
        {"sum_relax", {{"c_grid", c.c_grid}}}};
}

/// Missing keys keep their defaults so configs can be sparse.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c = default_config();
    try {
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("split")) {
            const auto& s = j.at("split");
            if (s.contains("train_fraction")) c.train_fraction = s.at("train_fraction").get<double>();
            if (s.contains("validation_fraction"))
                c.validation_fraction = s.at("validation_fraction").get<double>();
        }
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            if (o.contains("learning_rate")) c.train.learning_rate = o.at("learning_rate").get<double>();
            if (o.contains("lr_halving_period"))
                c.train.lr_halving_period = o.at("lr_halving_period").get<std::size_t>();
            if (o.contains("epochs")) c.train.epochs = o.at("epochs").get<std::size_t>();
            if (o.contains("batch_size")) c.train.batch_size = o.at("batch_size").get<std::size_t>();
            if (o.contains("l2_penalty")) c.train.l2_penalty = o.at("l2_penalty").get<double>();
        }
        if (j.contains("one_sided")) {
            const auto& o = j.at("one_sided");
            if (o.contains("xi_grid")) c.xi_grid = o.at("xi_grid").get<std::vector<double>>();
            if (o.contains("surrogate")) c.surrogate = o.at("surrogate").get<std::string>();
            if (o.contains("constraint_surrogate"))
                c.constraint_surrogate = o.at("constraint_surrogate").get<std::string>();
            if (o.contains("per_class_normalization"))
                c.per_class_normalization = o.at("per_class_normalization").get<bool>();
            if (o.contains("warm_start")) c.warm_start = o.at("warm_start").get<bool>();
            if (o.contains("selection_pair_cap"))
                c.selection_pair_cap = o.at("selection_pair_cap").get<std::size_t>();
        }
        if (j.contains("alt_min")) {
            const auto& a = j.at("alt_min");
            if (a.contains("lambda_grid")) c.lambda_grid = a.at("lambda_grid").get<std::vector<double>>();
            if (a.contains("kl_weight")) c.alt_min_kl_weight = a.at("kl_weight").get<double>();
            if (a.contains("max_rounds")) c.alt_min_rounds = a.at("max_rounds").get<std::size_t>();
        }
        if (j.contains("sum_relax")) {
            const auto& s = j.at("sum_relax");
            if (s.contains("c_grid")) c.c_grid = s.at("c_grid").get<std::vector<double>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed config json: ") + e.what());
    }
    c.train.seed = c.seed;
    return c;
}

struct RunOutcome {
    ExperimentReport report;
    nlohmann::json bundle;                      // serialized selected model(s)
    std::vector<ExperimentReport> sub_reports;  // one per sweep point, when sweeping
    bool attained = true;
};

namespace detail {

template <Decider L, Decider U>
void fill_bracket_metrics(ExperimentReport& r, const BracketT<L, U>& b, const Dataset& test) {
    r.usage = usage(b, test);
    r.achieved_accuracy = accuracy_vs_cloud(b, test);
    double lb = 0.0, la = 0.0;
    for (std::size_t i = 0; i < test.n; ++i) {
        const auto x = test.row(i);
        if (b.lower.predict(x) == 1 && test.label(i) == 0) lb += test.weight(i);
        if (b.upper.predict(x) == 0 && test.label(i) == 1) la += test.weight(i);
    }
    r.leakage_below = lb;
    r.leakage_above = la;
    r.finalize_rate();
}

inline std::string run_digest(const ExperimentConfig& cfg, const std::string& method,
                              double target) {
    nlohmann::json j{{"config", config_to_json(cfg)}, {"method", method}, {"target", target}};
    return digest_hex(config_digest(j));
}

class WallClock {
  public:
    WallClock() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_;
};

} // namespace detail

struct CertifyOptions {
    double zeta = 0.1;
    double delta = 0.1;
};

inline RunOutcome run_bracketing(const Dataset& train, const Dataset& val, const Dataset& test,
                                 double target, const ExperimentConfig& cfg,
                                 const std::optional<CertifyOptions>& certify = std::nullopt) {
    detail::WallClock clock;
    OneSidedConfig oc;
    oc.xi_grid = cfg.xi_grid;
    oc.surrogate_name = cfg.surrogate;
    oc.constraint_surrogate_name = cfg.constraint_surrogate;
    oc.train_cfg = cfg.train;
    oc.per_class_normalization = cfg.per_class_normalization;
    oc.warm_start = cfg.warm_start;
    oc.validate();

    const auto below = train_below(train, oc);
    const auto above = train_above(train, oc);

    RunOutcome out;
    SelectionResult sel;
    if (certify) {
        sel = select_certified(below, above, val, certify->zeta, certify->delta);
    } else {
        try {
            sel = select_empirical(below, above, train, val, target, cfg.selection_pair_cap);
        } catch (const TargetUnattainable& e) {
            sel = e.best;
            out.attained = false;
        }
    }

    out.report.method = "bracketing";
    out.report.target_accuracy = target;
    detail::fill_bracket_metrics(out.report, sel.bracket, test);
    out.report.wall_time_seconds = clock.seconds();
    out.report.config_digest = detail::run_digest(cfg, "bracketing", target);
    out.bundle = selection_to_json(sel);
    return out;
}

inline RunOutcome run_local_thresh(const Dataset& train, const Dataset& val, const Dataset& test,
                                   double target, const ExperimentConfig& cfg) {
    detail::WallClock clock;
    const PredictorModel m = train_local(train, cfg.train);

    RunOutcome out;
    GatedClassifier gc;
    try {
        gc = local_threshold_scan(m, train, val, target);
    } catch (const BaselineTargetUnattainable& e) {
        gc = e.best;
        out.attained = false;
    }

    out.report.method = "local-thresh";
    out.report.target_accuracy = target;
    detail::fill_bracket_metrics(out.report, to_bracket(gc), test);
    out.report.wall_time_seconds = clock.seconds();
    out.report.config_digest = detail::run_digest(cfg, "local-thresh", target);
    out.bundle = gated_to_json(gc);
    return out;
}

namespace detail {

/// Shared tail for the two sweep baselines: evaluate every candidate on the
/// validation split, keep the cheapest one meeting the target (fall back to
/// the most accurate), and report the winner on the test split.
inline RunOutcome pick_from_sweep(std::vector<GatedClassifier> candidates, const Dataset& val,
                                  const Dataset& test, double target, const std::string& method,
                                  const ExperimentConfig& cfg, WallClock clock) {
    RunOutcome out;
    std::size_t winner = candidates.size();
    double winner_usage = 2.0, best_acc = -1.0;
    std::size_t best_acc_at = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const double acc = accuracy_vs_cloud(candidates[i], val);
        const double usg = usage(candidates[i], val);
        ExperimentReport sub;
        sub.method = method;
        sub.target_accuracy = target;
        fill_bracket_metrics(sub, to_bracket(candidates[i]), test);
        sub.wall_time_seconds = 0.0;
        sub.config_digest =
            digest_hex(config_digest(candidates[i].hyperparameters));
        out.sub_reports.push_back(sub);
        if (acc > best_acc) {
            best_acc = acc;
            best_acc_at = i;
        }
        if (acc >= target && usg < winner_usage) {
            winner_usage = usg;
            winner = i;
        }
    }
    if (winner == candidates.size()) {
        winner = best_acc_at;
        out.attained = false;
    }

    out.report.method = method;
    out.report.target_accuracy = target;
    fill_bracket_metrics(out.report, to_bracket(candidates[winner]), test);
    out.report.wall_time_seconds = clock.seconds();
    out.report.config_digest = run_digest(cfg, method, target);
    out.bundle = gated_to_json(candidates[winner]);
    return out;
}

} // namespace detail

inline RunOutcome run_alt_min(const Dataset& train, const Dataset& val, const Dataset& test,
                              double target, const ExperimentConfig& cfg) {
    detail::WallClock clock;
    std::vector<GatedClassifier> candidates;
    candidates.reserve(cfg.lambda_grid.size());
    for (std::size_t i = 0; i < cfg.lambda_grid.size(); ++i) {
        AltMinConfig amc;
        amc.lambda = cfg.lambda_grid[i];
        amc.max_rounds = cfg.alt_min_rounds;
        amc.kl_weight = cfg.alt_min_kl_weight;
        amc.train_cfg = cfg.train;
        amc.train_cfg.seed = Rng::mix_seed(cfg.seed, 0xa17, i);
        candidates.push_back(train_alt_min(train, amc));
    }
    return detail::pick_from_sweep(std::move(candidates), val, test, target, "alt-min", cfg, clock);
}

inline RunOutcome run_sum_relax(const Dataset& train, const Dataset& val, const Dataset& test,
                                double target, const ExperimentConfig& cfg) {
    detail::WallClock clock;
    std::vector<GatedClassifier> candidates;
    candidates.reserve(cfg.c_grid.size());
    for (std::size_t i = 0; i < cfg.c_grid.size(); ++i) {
        TrainConfig tc = cfg.train;
        tc.seed = Rng::mix_seed(cfg.seed, 0x50c, i);
        GatedClassifier gc = train_sum_relax(train, cfg.c_grid[i], tc);
        // Post-hoc gate threshold refinement; keep the raw model when the
        // scan cannot reach the target either.
        const auto scan = scan_gate_threshold(gc, train, val, target);
        candidates.push_back(scan.gc);
    }
    return detail::pick_from_sweep(std::move(candidates), val, test, target, "sum-relax", cfg, clock);
}

inline RunOutcome run_experiment(const std::string& method, const Dataset& train,
                                 const Dataset& val, const Dataset& test, double target,
                                 const ExperimentConfig& cfg,
                                 const std::optional<CertifyOptions>& certify = std::nullopt) {
    if (method == "bracketing") return run_bracketing(train, val, test, target, cfg, certify);
    if (certify) throw std::invalid_argument("certification applies to the bracketing method only");
    if (method == "local-thresh") return run_local_thresh(train, val, test, target, cfg);
    if (method == "alt-min") return run_alt_min(train, val, test, target, cfg);
    if (method == "sum-relax") return run_sum_relax(train, val, test, target, cfg);
    throw std::invalid_argument("unknown method: " + method);
}

} // namespace bracketlearn
