#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bracketlearn/dataset.hpp"
#include "bracketlearn/losses.hpp"
#include "bracketlearn/model.hpp"
#include "bracketlearn/rng.hpp"

namespace bracketlearn {

struct TrainConfig {
    double learning_rate = 1e-2;
    std::size_t lr_halving_period = 25;
    std::size_t epochs = 120;
    std::size_t batch_size = 64;
    double l2_penalty = 1e-5;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
        if (epochs < 1) throw std::invalid_argument("train: epochs must be at least 1");
        if (batch_size < 1) throw std::invalid_argument("train: batch_size must be at least 1");
        if (lr_halving_period < 1) throw std::invalid_argument("train: lr_halving_period must be at least 1");
        if (l2_penalty < 0.0) throw std::invalid_argument("train: l2_penalty must be nonnegative");
    }
};

using EpochHook = std::function<void(std::size_t epoch, std::span<const double> params)>;

/// Deterministic minibatch gradient descent on a flat parameter vector.
///
/// per_example(params, row, grad, scale) adds scale times the row's gradient
/// into grad and returns scale times the row's loss. The engine supplies
/// scale = n * w_row / batch, which makes each batch step an unbiased
/// estimate of the weighted empirical objective. l2_mask selects which
/// parameters receive weight decay (biases get 0).
///
/// The epoch shuffle is drawn from a counter-based stream keyed by
/// (cfg.seed, epoch), so the trajectory is bit-reproducible and prefixes
/// do not depend on the total epoch count.
template <class PerExample>
void sgd_minimize(std::vector<double>& params, std::span<const double> l2_mask, const Dataset& d,
                  const TrainConfig& cfg, PerExample&& per_example, const EpochHook& on_epoch = {}) {
    cfg.validate();
    if (d.n == 0) throw std::invalid_argument("train: empty dataset");
    if (l2_mask.size() != params.size())
        throw std::invalid_argument("train: l2_mask length mismatch");

    const double n = static_cast<double>(d.n);
    std::vector<double> grad(params.size());

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.learning_rate * std::pow(0.5, static_cast<double>(epoch / cfg.lr_halving_period));
        auto order = shuffled_indices(d.n, Rng::derived(cfg.seed, 0x3d9d, epoch));

        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < d.n; start += cfg.batch_size, ++batch_index) {
            const std::size_t stop = std::min(start + cfg.batch_size, d.n);
            const double batch = static_cast<double>(stop - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t t = start; t < stop; ++t) {
                const std::size_t row = order[t];
                per_example(std::span<const double>(params), row, std::span<double>(grad),
                            n * d.weight(row) / batch);
            }
            for (std::size_t j = 0; j < params.size(); ++j)
                grad[j] += cfg.l2_penalty * l2_mask[j] * params[j];
            for (double gj : grad)
                if (!std::isfinite(gj))
                    throw std::runtime_error("non-finite gradient at epoch " + std::to_string(epoch) +
                                             ", batch " + std::to_string(batch_index));
            for (std::size_t j = 0; j < params.size(); ++j)
                params[j] -= lr * grad[j];
        }
        if (on_epoch) on_epoch(epoch, params);
    }
}

/// Train a sigmoid-linear model under a (score, label) -> LossGrad objective.
/// The returned model keeps threshold 1/2; selection adjusts it later.
template <class Objective>
PredictorModel sgd_train(const Dataset& d, Objective obj, const TrainConfig& cfg,
                         const PredictorModel* warm_start = nullptr, const EpochHook& on_epoch = {}) {
    PredictorModel m;
    m.feature_map_id = d.feature_map_id;
    if (warm_start) {
        if (warm_start->weights.size() != d.k)
            throw std::invalid_argument("train: warm start dimension mismatch");
        m = *warm_start;
    } else {
        m.weights.assign(d.k, 0.0);
        m.bias = 0.0;
    }
    m.threshold = 0.5;

    std::vector<double> params(m.weights);
    params.push_back(m.bias);
    std::vector<double> mask(d.k, 1.0);
    mask.push_back(0.0); // bias is not decayed

    sgd_minimize(
        params, mask, d, cfg,
        [&](std::span<const double> p, std::size_t row, std::span<double> g, double scale) {
            auto x = d.row(row);
            double z = p[d.k];
            for (std::size_t j = 0; j < d.k; ++j) z += p[j] * x[j];
            const LossGrad lg = obj(sigmoid(z), d.label(row));
            const double c = scale * lg.dmargin;
            for (std::size_t j = 0; j < d.k; ++j) g[j] += c * x[j];
            g[d.k] += c;
            return scale * lg.value;
        },
        on_epoch);

    m.weights.assign(params.begin(), params.begin() + d.k);
    m.bias = params[d.k];
    return m;
}

inline PredictorModel train_local(const Dataset& d, const TrainConfig& cfg) {
    return sgd_train(d, LogisticObjective{}, cfg);
}

} // namespace bracketlearn
