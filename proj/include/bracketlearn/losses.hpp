#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "bracketlearn/dataset.hpp"
#include "bracketlearn/model.hpp"

namespace bracketlearn {

inline double clamp_prob(double p) { return std::clamp(p, 1e-12, 1.0 - 1e-12); }

/// Plain cross-entropy on a probability. Clamping keeps the value finite;
/// the training gradient p - y is exact for the unclamped expression and is
/// used even at the clamp boundary (the error there is below 1e-12).
inline double logistic_loss(double p, std::uint8_t y) {
    p = clamp_prob(p);
    return y ? -std::log(p) : -std::log(1.0 - p);
}

// ---------------------------------------------------------------------------
// Surrogate registry
//
// A surrogate maps a violation magnitude z in [0,1) to a penalty. Convention:
// for an example that should score high, z = 1 - p; for a leakage constraint,
// z = p. Each entry carries its analytic derivative so trainings can be
// checked against finite differences.
// ---------------------------------------------------------------------------

struct Surrogate {
    const char* name;
    double (*value)(double z);
    double (*deriv)(double z);
};

namespace detail {

inline double clamp_violation(double z) { return std::clamp(z, 0.0, 1.0 - 1e-12); }

inline double logistic_value(double z) { return -std::log(1.0 - clamp_violation(z)); }
inline double logistic_deriv(double z) { return 1.0 / (1.0 - clamp_violation(z)); }
inline double squared_hinge_value(double z) { z = clamp_violation(z); return z * z; }
inline double squared_hinge_deriv(double z) { return 2.0 * clamp_violation(z); }

} // namespace detail

inline const std::vector<Surrogate>& surrogate_registry() {
    static const std::vector<Surrogate> table = {
        {"logistic", detail::logistic_value, detail::logistic_deriv},
        {"squared_hinge", detail::squared_hinge_value, detail::squared_hinge_deriv},
    };
    return table;
}

inline const Surrogate& surrogate(const std::string& name) {
    for (const auto& s : surrogate_registry())
        if (name == s.name) return s;
    throw std::invalid_argument("unknown surrogate: " + name);
}

// ---------------------------------------------------------------------------
// Per-example losses consumed by the SGD engine. Each functor maps
// (score p, label y) to the loss value and its derivative in the margin;
// the chain factor through the sigmoid, p(1-p), is applied here.
// ---------------------------------------------------------------------------

struct LossGrad {
    double value;
    double dmargin;
};

/// Symmetric cross-entropy; d/dmargin = p - y.
struct LogisticObjective {
    LossGrad operator()(double p, std::uint8_t y) const {
        return {logistic_loss(p, y), p - static_cast<double>(y)};
    }
};

/// One term of the Lagrangian program: examples the target labels 1 pay
/// f(1 - p) for scoring low, examples it labels 0 pay xi * f2(p) for leaking.
/// With f = f2 = logistic this is exactly cross-entropy on the positives plus
/// xi times cross-entropy on the negatives.
struct OneSidedObjective {
    const Surrogate* f;  // positive-side penalty
    const Surrogate* f2; // constraint penalty
    double xi;
    double pos_scale = 1.0; // per-class normalization factors; 1 = single 1/N
    double neg_scale = 1.0;

    LossGrad operator()(double p, std::uint8_t y) const {
        const double chain = p * (1.0 - p);
        if (y) {
            return {pos_scale * f->value(1.0 - p), pos_scale * -f->deriv(1.0 - p) * chain};
        }
        return {neg_scale * xi * f2->value(p), neg_scale * xi * f2->deriv(p) * chain};
    }
};

// ---------------------------------------------------------------------------
// Dataset-level empirical functionals
// ---------------------------------------------------------------------------

/// Weighted value of the one-sided program at a model: sum_i w_i of the
/// per-example objective (single-normalization form).
inline double one_sided_loss(const PredictorModel& m, const Dataset& d, double xi,
                             const Surrogate& f = surrogate("logistic"),
                             const Surrogate& f2 = surrogate("logistic")) {
    OneSidedObjective obj{&f, &f2, xi};
    double total = 0.0;
    for (std::size_t i = 0; i < d.n; ++i)
        total += d.weight(i) * obj(m.score(d.row(i)), d.label(i)).value;
    return total;
}

inline double weighted_disagreement(const PredictorModel& m, const Dataset& d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.n; ++i)
        if (m.predict(d.row(i)) != d.label(i)) s += d.weight(i);
    return s;
}

/// Mass predicted 1 where the cloud says 0 (a below-approximation's defect).
inline double leakage_below(const PredictorModel& m, const Dataset& d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.n; ++i)
        if (d.label(i) == 0 && m.predict(d.row(i)) == 1) s += d.weight(i);
    return s;
}

/// Mass predicted 0 where the cloud says 1 (an above-approximation's defect).
inline double leakage_above(const PredictorModel& m, const Dataset& d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.n; ++i)
        if (d.label(i) == 1 && m.predict(d.row(i)) == 0) s += d.weight(i);
    return s;
}

} // namespace bracketlearn
