#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bracketlearn/bracketing.hpp"
#include "bracketlearn/dataset.hpp"
#include "bracketlearn/losses.hpp"
#include "bracketlearn/model.hpp"
#include "bracketlearn/rng.hpp"
#include "bracketlearn/sgd.hpp"

namespace bracketlearn {

/// How the gate decides "local": by its raw score exceeding the threshold,
/// or by prediction confidence max(p, 1-p) reaching it. The confidence rule
/// serves local thresholding, where the gate is the predictor itself.
enum class GateRule { score_above, confidence_at_least };

inline const char* gate_rule_name(GateRule r) {
    return r == GateRule::score_above ? "score_above" : "confidence_at_least";
}

struct GatedClassifier {
    PredictorModel gate;      // decision 1 = predict locally
    PredictorModel predictor; // pi, consulted only where the gate says local
    double gate_threshold = 0.5;
    GateRule gate_rule = GateRule::score_above;
    std::string method_name;
    nlohmann::json hyperparameters = nlohmann::json::object();

    bool local(std::span<const double> x) const {
        const double s = gate.score(x);
        if (gate_rule == GateRule::score_above) return s > gate_threshold;
        return std::max(s, 1.0 - s) >= gate_threshold;
    }
};

/// Gate decision as a standalone decider, so gated classifiers can flow
/// through the bracket transform.
struct GateView {
    PredictorModel gate;
    double threshold;
    GateRule rule;
    std::uint8_t predict(std::span<const double> x) const {
        const double s = gate.score(x);
        if (rule == GateRule::score_above) return s > threshold ? 1 : 0;
        return std::max(s, 1.0 - s) >= threshold ? 1 : 0;
    }
};

inline GateView gate_view(const GatedClassifier& gc) {
    return {gc.gate, gc.gate_threshold, gc.gate_rule};
}

inline GatedBracketT<GateView, PredictorModel> to_bracket(const GatedClassifier& gc) {
    return gating_to_bracket(gate_view(gc), gc.predictor);
}

inline double usage(const GatedClassifier& gc, const Dataset& d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.n; ++i)
        if (!gc.local(d.row(i))) s += d.weight(i);
    return s;
}

inline double accuracy_vs_cloud(const GatedClassifier& gc, const Dataset& d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.n; ++i) {
        if (!gc.local(d.row(i))) s += d.weight(i); // cloud answers for itself
        else if (gc.predictor.predict(d.row(i)) == d.label(i)) s += d.weight(i);
    }
    return s;
}

struct BaselineTargetUnattainable : std::runtime_error {
    GatedClassifier best;
    double best_accuracy;
    double best_usage;
    BaselineTargetUnattainable(GatedClassifier b, double acc, double use)
        : std::runtime_error("target unattainable; best validation accuracy " + std::to_string(acc)),
          best(std::move(b)), best_accuracy(acc), best_usage(use) {}
};

// ---------------------------------------------------------------------------
// Local thresholding
// ---------------------------------------------------------------------------

/// Defer the examples the frozen local model is least confident about.
/// Candidate cutoffs are the confidence values attained on the training set
/// (plus an all-defer sentinel); the smallest-usage cutoff meeting the target
/// validation accuracy wins.
inline GatedClassifier local_threshold_scan(const PredictorModel& m, const Dataset& train,
                                            const Dataset& v, double target_accuracy) {
    std::vector<double> taus;
    taus.reserve(train.n + 1);
    for (std::size_t i = 0; i < train.n; ++i) {
        const double p = m.score(train.row(i));
        taus.push_back(std::max(p, 1.0 - p));
    }
    taus.push_back(1.5); // above any attainable confidence: defer everything
    std::sort(taus.begin(), taus.end());
    taus.erase(std::unique(taus.begin(), taus.end()), taus.end());

    std::vector<double> conf(v.n);
    std::vector<std::uint8_t> correct(v.n);
    for (std::size_t i = 0; i < v.n; ++i) {
        const double p = m.score(v.row(i));
        conf[i] = std::max(p, 1.0 - p);
        correct[i] = m.predict(v.row(i)) == v.label(i) ? 1 : 0;
    }

    auto make = [&](double tau) {
        GatedClassifier gc;
        gc.gate = m;
        gc.predictor = m;
        gc.gate_threshold = tau;
        gc.gate_rule = GateRule::confidence_at_least;
        gc.method_name = "local-thresh";
        gc.hyperparameters = {{"tau", tau}};
        return gc;
    };

    bool have_winner = false, have_best = false;
    double win_tau = 0.0, win_use = 0.0, win_acc = 0.0;
    double best_tau = 0.0, best_use = 0.0, best_acc = -1.0;
    for (double tau : taus) {
        double use = 0.0, acc = 0.0;
        for (std::size_t i = 0; i < v.n; ++i) {
            if (conf[i] < tau) {
                use += v.weight(i);
                acc += v.weight(i);
            } else if (correct[i]) {
                acc += v.weight(i);
            }
        }
        if (!have_best || acc > best_acc) {
            have_best = true;
            best_tau = tau; best_use = use; best_acc = acc;
        }
        if (acc >= target_accuracy &&
            (!have_winner || use < win_use || (use == win_use && acc > win_acc))) {
            have_winner = true;
            win_tau = tau; win_use = use; win_acc = acc;
        }
    }
    if (!have_winner) throw BaselineTargetUnattainable(make(best_tau), best_acc, best_use);
    return make(win_tau);
}

// ---------------------------------------------------------------------------
// Gate threshold scan shared by the trained-gate baselines
// ---------------------------------------------------------------------------

struct GateScanOutcome {
    bool feasible = false;
    GatedClassifier gc; // winner when feasible, else the highest-accuracy cutoff
    double val_usage = 0.0;
    double val_accuracy = 0.0;
};

/// Re-threshold a trained gate on the values it attains on training rows;
/// pick the minimum-usage cutoff meeting the target validation accuracy.
inline GateScanOutcome scan_gate_threshold(const GatedClassifier& gc0, const Dataset& train,
                                           const Dataset& v, double target_accuracy) {
    std::vector<double> taus;
    taus.reserve(train.n + 2);
    for (std::size_t i = 0; i < train.n; ++i) taus.push_back(gc0.gate.score(train.row(i)));
    taus.push_back(0.0); // below any sigmoid score: everything local
    taus.push_back(1.5); // above: everything deferred
    std::sort(taus.begin(), taus.end());
    taus.erase(std::unique(taus.begin(), taus.end()), taus.end());

    std::vector<double> gs(v.n);
    std::vector<std::uint8_t> correct(v.n);
    for (std::size_t i = 0; i < v.n; ++i) {
        gs[i] = gc0.gate.score(v.row(i));
        correct[i] = gc0.predictor.predict(v.row(i)) == v.label(i) ? 1 : 0;
    }

    GateScanOutcome out;
    double best_acc = -1.0;
    for (double tau : taus) {
        double use = 0.0, acc = 0.0;
        for (std::size_t i = 0; i < v.n; ++i) {
            if (!(gs[i] > tau)) {
                use += v.weight(i);
                acc += v.weight(i);
            } else if (correct[i]) {
                acc += v.weight(i);
            }
        }
        const bool ok = acc >= target_accuracy;
        const bool better_feasible =
            ok && (!out.feasible || use < out.val_usage ||
                   (use == out.val_usage && acc > out.val_accuracy));
        const bool better_fallback = !out.feasible && !ok && acc > best_acc;
        if (better_feasible || (better_fallback && best_acc < target_accuracy)) {
            out.gc = gc0;
            out.gc.gate_threshold = tau;
            out.gc.gate_rule = GateRule::score_above;
            out.val_usage = use;
            out.val_accuracy = acc;
            out.feasible = ok;
        }
        if (acc > best_acc) best_acc = acc;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Alternating minimisation
// ---------------------------------------------------------------------------

struct AltMinConfig {
    double lambda = 0.5;        // price of deferring one unit of mass
    std::size_t max_rounds = 10;
    double kl_weight = 1.0;     // strength of the u-to-gate coupling
    TrainConfig train_cfg;

    void validate() const {
        if (!(lambda >= 0.0)) throw std::invalid_argument("alt-min: lambda must be nonnegative");
        if (max_rounds < 1) throw std::invalid_argument("alt-min: max_rounds must be at least 1");
        if (!(kl_weight > 0.0)) throw std::invalid_argument("alt-min: kl_weight must be positive");
        train_cfg.validate();
    }
};

/// Joint gate/predictor training through a per-example auxiliary u in [0,1]:
/// each round (a) updates u in closed form to balance the predictor's loss,
/// the deferral price lambda, and a KL pull toward the current gate score,
/// (b) refits the predictor with examples weighted by u, (c) refits the gate
/// toward the soft targets u. Rounds stop when u moves by less than 1e-4 in
/// sup norm.
inline GatedClassifier train_alt_min(const Dataset& d, const AltMinConfig& cfg) {
    cfg.validate();

    GatedClassifier gc;
    gc.predictor = train_local(d, cfg.train_cfg);
    gc.gate.feature_map_id = d.feature_map_id;
    gc.gate.weights.assign(d.k, 0.0);
    gc.gate.bias = 0.0;
    gc.method_name = "alt-min";
    gc.hyperparameters = {{"lambda", cfg.lambda},
                          {"kl_weight", cfg.kl_weight},
                          {"max_rounds", cfg.max_rounds}};

    const auto logit = [](double p) { return std::log(clamp_prob(p) / (1.0 - clamp_prob(p))); };
    std::vector<double> u(d.n, 1.0), u_prev(d.n, -1.0);

    for (std::size_t round = 0; round < cfg.max_rounds; ++round) {
        // (a) closed-form u: logit(u_i) = logit(gate score) - (loss_i - lambda) / kl_weight
        for (std::size_t i = 0; i < d.n; ++i) {
            const double loss_i = logistic_loss(gc.predictor.score(d.row(i)), d.label(i));
            u[i] = sigmoid(logit(gc.gate.score(d.row(i))) - (loss_i - cfg.lambda) / cfg.kl_weight);
        }
        double du = 0.0;
        for (std::size_t i = 0; i < d.n; ++i) du = std::max(du, std::abs(u[i] - u_prev[i]));
        if (du < 1e-4) break;
        u_prev = u;

        // (b) predictor refit on u-weighted cross entropy
        double umass = 0.0;
        for (std::size_t i = 0; i < d.n; ++i) umass += d.weight(i) * u[i];
        if (umass > 1e-12) {
            std::vector<double> params(gc.predictor.weights);
            params.push_back(gc.predictor.bias);
            std::vector<double> mask(d.k, 1.0);
            mask.push_back(0.0);
            TrainConfig pc = cfg.train_cfg;
            pc.seed = Rng::mix_seed(cfg.train_cfg.seed, 2 * round + 1);
            sgd_minimize(params, mask, d, pc,
                         [&](std::span<const double> p, std::size_t row, std::span<double> g,
                             double scale) {
                             scale *= u[row] / umass;
                             auto x = d.row(row);
                             double z = p[d.k];
                             for (std::size_t j = 0; j < d.k; ++j) z += p[j] * x[j];
                             const double prob = sigmoid(z);
                             const double c = scale * (prob - static_cast<double>(d.label(row)));
                             for (std::size_t j = 0; j < d.k; ++j) g[j] += c * x[j];
                             g[d.k] += c;
                             return scale * logistic_loss(prob, d.label(row));
                         });
            gc.predictor.weights.assign(params.begin(), params.begin() + d.k);
            gc.predictor.bias = params[d.k];
        }

        // (c) gate refit toward the soft targets u
        {
            std::vector<double> params(gc.gate.weights);
            params.push_back(gc.gate.bias);
            std::vector<double> mask(d.k, 1.0);
            mask.push_back(0.0);
            TrainConfig gcfg = cfg.train_cfg;
            gcfg.seed = Rng::mix_seed(cfg.train_cfg.seed, 2 * round + 2);
            sgd_minimize(params, mask, d, gcfg,
                         [&](std::span<const double> p, std::size_t row, std::span<double> g,
                             double scale) {
                             auto x = d.row(row);
                             double z = p[d.k];
                             for (std::size_t j = 0; j < d.k; ++j) z += p[j] * x[j];
                             const double q = sigmoid(z);
                             const double c = scale * (q - u[row]);
                             for (std::size_t j = 0; j < d.k; ++j) g[j] += c * x[j];
                             g[d.k] += c;
                             const double qc = clamp_prob(q);
                             return scale * (-(u[row] * std::log(qc) +
                                               (1.0 - u[row]) * std::log(1.0 - qc)));
                         });
            gc.gate.weights.assign(params.begin(), params.begin() + d.k);
            gc.gate.bias = params[d.k];
        }
    }
    return gc;
}

// ---------------------------------------------------------------------------
// Sum relaxation
// ---------------------------------------------------------------------------

/// Joint hinge training of a predictor margin h and a gate margin r:
/// per-example max(0, 1 + (r - y'h)/2) + c max(0, 1 - r), y' = 2y - 1.
/// A correct confident h lets r grow (local); c prices abstention. Deferral
/// is r < 0, i.e. a score-above gate at threshold 1/2.
inline GatedClassifier train_sum_relax(const Dataset& d, double c, const TrainConfig& cfg) {
    if (!(c >= 0.0)) throw std::invalid_argument("sum-relax: c must be nonnegative");
    cfg.validate();

    const std::size_t k = d.k;
    std::vector<double> params(2 * k + 2, 0.0); // [wh, bh, wr, br]
    std::vector<double> mask(2 * k + 2, 1.0);
    mask[k] = 0.0;
    mask[2 * k + 1] = 0.0;

    sgd_minimize(params, mask, d, cfg,
                 [&](std::span<const double> p, std::size_t row, std::span<double> g, double scale) {
                     auto x = d.row(row);
                     double h = p[k], r = p[2 * k + 1];
                     for (std::size_t j = 0; j < k; ++j) {
                         h += p[j] * x[j];
                         r += p[k + 1 + j] * x[j];
                     }
                     const double ys = d.label(row) ? 1.0 : -1.0;
                     const double m1 = 1.0 + (r - ys * h) / 2.0;
                     const double m2 = 1.0 - r;
                     double loss = 0.0, dh = 0.0, dr = 0.0;
                     if (m1 > 0.0) {
                         loss += m1;
                         dh += -ys / 2.0;
                         dr += 0.5;
                     }
                     if (m2 > 0.0) {
                         loss += c * m2;
                         dr += -c;
                     }
                     for (std::size_t j = 0; j < k; ++j) {
                         g[j] += scale * dh * x[j];
                         g[k + 1 + j] += scale * dr * x[j];
                     }
                     g[k] += scale * dh;
                     g[2 * k + 1] += scale * dr;
                     return scale * loss;
                 });

    GatedClassifier gc;
    gc.predictor.feature_map_id = d.feature_map_id;
    gc.predictor.weights.assign(params.begin(), params.begin() + k);
    gc.predictor.bias = params[k];
    gc.gate.feature_map_id = d.feature_map_id;
    gc.gate.weights.assign(params.begin() + k + 1, params.begin() + 2 * k + 1);
    gc.gate.bias = params[2 * k + 1];
    gc.gate_threshold = 0.5; // sigma(r) > 1/2 exactly when r > 0
    gc.gate_rule = GateRule::score_above;
    gc.method_name = "sum-relax";
    gc.hyperparameters = {{"c", c}};
    return gc;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json gated_to_json(const GatedClassifier& gc) {
    return nlohmann::json{{"gate", model_to_json(gc.gate)},
                          {"predictor", model_to_json(gc.predictor)},
                          {"gate_threshold", gc.gate_threshold},
                          {"gate_rule", gate_rule_name(gc.gate_rule)},
                          {"method_name", gc.method_name},
                          {"hyperparameters", gc.hyperparameters}};
}

inline GatedClassifier gated_from_json(const nlohmann::json& j) {
    GatedClassifier gc;
    try {
        gc.gate = model_from_json(j.at("gate"));
        gc.predictor = model_from_json(j.at("predictor"));
        gc.gate_threshold = j.at("gate_threshold").get<double>();
        const auto rule = j.value("gate_rule", "score_above");
        if (rule == "score_above") gc.gate_rule = GateRule::score_above;
        else if (rule == "confidence_at_least") gc.gate_rule = GateRule::confidence_at_least;
        else throw std::runtime_error("unknown gate_rule: " + rule);
        gc.method_name = j.value("method_name", "");
        gc.hyperparameters = j.value("hyperparameters", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed gated classifier json: ") + e.what());
    }
    return gc;
}

inline void save_gated(const GatedClassifier& gc, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << gated_to_json(gc).dump(2) << '\n';
}

inline GatedClassifier load_gated(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    return gated_from_json(j);
}

} // namespace bracketlearn
