#pragma once

#include <cmath>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bracketlearn/dataset.hpp"

namespace bracketlearn {

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Thresholded sigmoid-linear classifier: score(x) = sigma(w.x + b),
/// predict(x) = 1{score(x) > threshold}. The probabilistic score is kept
/// because model selection sweeps thresholds over it.
struct PredictorModel {
    std::string feature_map_id = "identity";
    std::vector<double> weights;
    double bias = 0.0;
    double threshold = 0.5;

    double margin(std::span<const double> x) const {
        double z = bias;
        for (std::size_t j = 0; j < weights.size(); ++j) z += weights[j] * x[j];
        return z;
    }
    double score(std::span<const double> x) const { return sigmoid(margin(x)); }
    std::uint8_t predict(std::span<const double> x) const {
        return score(x) > threshold ? 1 : 0;
    }
};

/// Pointwise complement: 1 - sigma(w.x+b) = sigma(-(w.x+b)), and
/// score > t  <=>  complement score <= 1-t, so the complement of the
/// decision set is itself a thresholded sigmoid-linear classifier with
/// (w,b,t) -> (-w,-b,1-t) up to the boundary convention. We keep strict
/// ">" on both, which flips points with score exactly 1-t; those lie on a
/// measure-zero set for continuous data.
inline PredictorModel complement(const PredictorModel& m) {
    PredictorModel c = m;
    for (double& w : c.weights) w = -w;
    c.bias = -c.bias;
    c.threshold = 1.0 - c.threshold;
    return c;
}

inline double weighted_accuracy(const PredictorModel& m, const Dataset& d) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d.n; ++i)
        if (m.predict(d.row(i)) == d.label(i)) acc += d.weight(i);
    return acc;
}

// ---------------------------------------------------------------------------
// Serialization. Doubles survive the round trip bit-for-bit (nlohmann emits
// shortest-exact representations).
// ---------------------------------------------------------------------------

inline nlohmann::json model_to_json(const PredictorModel& m) {
    return nlohmann::json{{"feature_map_id", m.feature_map_id},
                          {"weights", m.weights},
                          {"bias", m.bias},
                          {"threshold", m.threshold}};
}

inline PredictorModel model_from_json(const nlohmann::json& j) {
    PredictorModel m;
    try {
        m.feature_map_id = j.at("feature_map_id").get<std::string>();
        m.weights = j.at("weights").get<std::vector<double>>();
        m.bias = j.at("bias").get<double>();
        m.threshold = j.at("threshold").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed model json: ") + e.what());
    }
    return m;
}

inline void save_model(const PredictorModel& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << model_to_json(m).dump(2) << '\n';
}

inline PredictorModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    return model_from_json(j);
}

} // namespace bracketlearn
