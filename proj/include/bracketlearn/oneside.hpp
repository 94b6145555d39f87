#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bracketlearn/dataset.hpp"
#include "bracketlearn/losses.hpp"
#include "bracketlearn/model.hpp"
#include "bracketlearn/sgd.hpp"

namespace bracketlearn {

enum class Side { below, above };

inline const char* side_name(Side s) { return s == Side::below ? "below" : "above"; }

struct OneSidedConfig {
    std::vector<double> xi_grid;
    std::string surrogate_name = "logistic";
    std::string constraint_surrogate_name = "logistic";
    TrainConfig train_cfg;
    bool per_class_normalization = false; // single 1/N form by default
    bool warm_start = true;

    void validate() const {
        if (xi_grid.empty()) throw std::invalid_argument("one-sided: xi_grid must be nonempty");
        double prev = -1.0;
        for (double xi : xi_grid) {
            if (!(xi >= 0.0)) throw std::invalid_argument("one-sided: xi values must be nonnegative");
            if (!(xi > prev)) throw std::invalid_argument("one-sided: xi_grid must be strictly ascending");
            prev = xi;
        }
        surrogate(surrogate_name);
        surrogate(constraint_surrogate_name);
        train_cfg.validate();
    }
};

struct OneSidedCandidate {
    PredictorModel model;
    double xi = 0.0;
    Side side = Side::below;
    double train_leakage = 0.0; // mass on the forbidden side of the constraint
    double train_miss = 0.0;    // mass the approximation fails to capture
};

inline Dataset flip_labels(const Dataset& d) {
    Dataset f = d;
    for (auto& y : f.cloud_labels) y = y ? 0 : 1;
    return f;
}

/// Scan the multiplier grid, training one candidate per xi against the
/// asymmetric objective: positives pay for scoring low, negatives pay xi
/// times the constraint surrogate for leaking. Larger xi drives leakage
/// down at the cost of coverage. Warm starting continues each run from the
/// previous multiplier's solution to stabilize the sweep.
inline std::vector<OneSidedCandidate> train_below(const Dataset& d, const OneSidedConfig& cfg) {
    cfg.validate();
    const Surrogate& f = surrogate(cfg.surrogate_name);
    const Surrogate& f2 = surrogate(cfg.constraint_surrogate_name);

    double pos_scale = 1.0, neg_scale = 1.0;
    if (cfg.per_class_normalization) {
        double pos_mass = 0.0;
        for (std::size_t i = 0; i < d.n; ++i)
            if (d.label(i)) pos_mass += d.weight(i);
        const double neg_mass = 1.0 - pos_mass;
        pos_scale = pos_mass > 0.0 ? 1.0 / pos_mass : 0.0;
        neg_scale = neg_mass > 0.0 ? 1.0 / neg_mass : 0.0;
    }

    std::vector<OneSidedCandidate> out;
    out.reserve(cfg.xi_grid.size());
    const PredictorModel* warm = nullptr;
    for (double xi : cfg.xi_grid) {
        OneSidedObjective obj{&f, &f2, xi, pos_scale, neg_scale};
        OneSidedCandidate c;
        c.model = sgd_train(d, obj, cfg.train_cfg, warm);
        c.xi = xi;
        c.side = Side::below;
        c.train_leakage = leakage_below(c.model, d);
        c.train_miss = leakage_above(c.model, d);
        out.push_back(std::move(c));
        if (cfg.warm_start) warm = &out.back().model;
    }
    return out;
}

/// Approximations from above are complements of below-approximations of the
/// flipped labels: train on 1-g, then complement every model so the
/// candidates over-cover g directly. Leakage for this side is the mass where
/// the candidate predicts 0 on cloud-positive rows.
inline std::vector<OneSidedCandidate> train_above(const Dataset& d, const OneSidedConfig& cfg) {
    auto flipped = train_below(flip_labels(d), cfg);
    for (auto& c : flipped) {
        c.model = complement(c.model);
        c.side = Side::above;
        c.train_leakage = leakage_above(c.model, d);
        c.train_miss = leakage_below(c.model, d);
    }
    return flipped;
}

// ---------------------------------------------------------------------------
// Candidate bundle serialization
// ---------------------------------------------------------------------------

inline nlohmann::json candidate_to_json(const OneSidedCandidate& c) {
    return nlohmann::json{{"xi", c.xi},
                          {"side", side_name(c.side)},
                          {"model", model_to_json(c.model)},
                          {"train_leakage", c.train_leakage},
                          {"train_miss", c.train_miss}};
}

inline OneSidedCandidate candidate_from_json(const nlohmann::json& j) {
    OneSidedCandidate c;
    try {
        c.xi = j.at("xi").get<double>();
        const auto side = j.at("side").get<std::string>();
        if (side == "below") c.side = Side::below;
        else if (side == "above") c.side = Side::above;
        else throw std::runtime_error("side must be 'below' or 'above'");
        c.model = model_from_json(j.at("model"));
        c.train_leakage = j.at("train_leakage").get<double>();
        c.train_miss = j.at("train_miss").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed candidate json: ") + e.what());
    }
    return c;
}

inline void save_candidates(const std::vector<OneSidedCandidate>& cs, const std::string& path) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : cs) arr.push_back(candidate_to_json(c));
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << arr.dump(2) << '\n';
}

inline std::vector<OneSidedCandidate> load_candidates(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json arr;
    try {
        in >> arr;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    std::vector<OneSidedCandidate> out;
    for (const auto& j : arr) out.push_back(candidate_from_json(j));
    return out;
}

} // namespace bracketlearn
