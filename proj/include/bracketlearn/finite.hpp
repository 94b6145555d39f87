#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/rational.hpp>
#include <nlohmann/json.hpp>

namespace bracketlearn {

using Rational = boost::rational<long long>;

/// A binary function on the finite domain [0:N).
struct FiniteConcept {
    std::vector<std::uint8_t> bits;

    std::size_t size() const { return bits.size(); }
    bool operator==(const FiniteConcept&) const = default;
};

inline FiniteConcept finite_complement(const FiniteConcept& g) {
    FiniteConcept c = g;
    for (auto& b : c.bits) b = b ? 0 : 1;
    return c;
}

inline bool pointwise_leq(const FiniteConcept& a, const FiniteConcept& b) {
    for (std::size_t i = 0; i < a.bits.size(); ++i)
        if (a.bits[i] > b.bits[i]) return false;
    return true;
}

/// Deduplicated hypothesis class over a shared domain. Enumeration order is
/// insertion order; ties everywhere break toward the earlier concept.
struct FiniteClass {
    std::string name;
    std::size_t domain_size = 0;
    std::vector<FiniteConcept> concepts;

    void add(FiniteConcept c) {
        if (concepts.empty() && domain_size == 0) domain_size = c.size();
        if (c.size() != domain_size)
            throw std::invalid_argument("finite class: concept domain mismatch");
        if (std::find(concepts.begin(), concepts.end(), c) == concepts.end())
            concepts.push_back(std::move(c));
    }

    void ensure_constants() {
        add(FiniteConcept{std::vector<std::uint8_t>(domain_size, 0)});
        add(FiniteConcept{std::vector<std::uint8_t>(domain_size, 1)});
    }

    void close_under_complement() {
        const std::size_t base = concepts.size();
        for (std::size_t i = 0; i < base; ++i) add(finite_complement(concepts[i]));
    }

    void validate() const {
        if (concepts.empty()) throw std::invalid_argument("finite class: must be nonempty");
        for (const auto& c : concepts)
            if (c.size() != domain_size)
                throw std::invalid_argument("finite class: concept domain mismatch");
    }
};

/// Exact probability measure on [0:N): nonnegative rationals summing to one,
/// so identity checks downstream are equalities rather than tolerances.
struct FiniteMeasure {
    std::vector<Rational> mass;

    std::size_t size() const { return mass.size(); }

    void validate() const {
        Rational total(0);
        for (const auto& m : mass) {
            if (m < Rational(0)) throw std::invalid_argument("finite measure: negative mass");
            total += m;
        }
        if (total != Rational(1)) throw std::invalid_argument("finite measure: masses must sum to 1");
    }

    static FiniteMeasure uniform(std::size_t n) {
        FiniteMeasure mu;
        mu.mass.assign(n, Rational(1, static_cast<long long>(n)));
        return mu;
    }

    /// Positive integer masses over a shared denominator; exact by
    /// construction.
    static FiniteMeasure from_counts(const std::vector<long long>& counts) {
        long long total = std::accumulate(counts.begin(), counts.end(), 0LL);
        if (total <= 0) throw std::invalid_argument("finite measure: counts must be positive");
        FiniteMeasure mu;
        mu.mass.reserve(counts.size());
        for (long long c : counts) {
            if (c < 0) throw std::invalid_argument("finite measure: negative count");
            mu.mass.emplace_back(c, total);
        }
        return mu;
    }
};

inline Rational measure_of_difference(const FiniteConcept& a, const FiniteConcept& b,
                                      const FiniteMeasure& mu) {
    Rational s(0);
    for (std::size_t i = 0; i < a.bits.size(); ++i)
        if (a.bits[i] != b.bits[i]) s += mu.mass[i];
    return s;
}

// ---------------------------------------------------------------------------
// Exhaustive one-sided and bracketing oracles
// ---------------------------------------------------------------------------

struct OneSidedOptimum {
    Rational value;
    FiniteConcept witness;
};

/// Exhaustive minimum of mu(h != g) over every h in H lying below g
/// pointwise. The all-zeros concept is always feasible when present.
inline OneSidedOptimum inefficiency_below(const FiniteConcept& g, const FiniteMeasure& mu,
                                          const FiniteClass& H) {
    const FiniteConcept* best = nullptr;
    Rational best_value(0);
    for (const auto& h : H.concepts) {
        if (!pointwise_leq(h, g)) continue;
        Rational v = measure_of_difference(h, g, mu);
        if (!best || v < best_value) {
            best = &h;
            best_value = v;
        }
    }
    if (!best)
        throw std::runtime_error("inefficiency_below: no hypothesis lies below the target");
    return {best_value, *best};
}

struct FiniteBracket {
    FiniteConcept lower, upper;
    Rational usage;
};

/// Exhaustive minimum usage over ordered pairs h1 <= g <= h2 from H.
inline FiniteBracket optimal_bracket(const FiniteConcept& g, const FiniteMeasure& mu,
                                     const FiniteClass& H) {
    const FiniteConcept* blo = nullptr;
    const FiniteConcept* bhi = nullptr;
    Rational best(0);
    for (const auto& h1 : H.concepts) {
        if (!pointwise_leq(h1, g)) continue;
        for (const auto& h2 : H.concepts) {
            if (!pointwise_leq(g, h2)) continue;
            Rational v = measure_of_difference(h1, h2, mu);
            if (!blo || v < best) {
                blo = &h1;
                bhi = &h2;
                best = v;
            }
        }
    }
    if (!blo) throw std::runtime_error("optimal_bracket: no feasible bracket in the class");
    return {*blo, *bhi, best};
}

// ---------------------------------------------------------------------------
// Two-phase finite-class learner
// ---------------------------------------------------------------------------

struct LabeledDraw {
    std::size_t point;
    std::uint8_t label;
};

/// Sample sizes making the two-phase guarantees hold with probability
/// 1 - delta over a class of the given size.
inline std::size_t osl_testing_samples(double lambda, std::size_t class_size, double delta) {
    return static_cast<std::size_t>(
        std::ceil(24.0 / lambda * std::log(4.0 * static_cast<double>(class_size) / delta)));
}

inline std::size_t osl_optimisation_samples(double eps, std::size_t class_size, double delta) {
    return static_cast<std::size_t>(
        std::ceil(2.0 / (eps * eps) * std::log(4.0 * static_cast<double>(class_size) / delta)));
}

/// Phase 1: keep hypotheses whose empirical leakage (predicting 1 where the
/// label is 0) stays strictly below lambda/2. Returns indices into H.
inline std::vector<std::size_t> osl_testing_phase(std::span<const LabeledDraw> samples,
                                                  const FiniteClass& H, double lambda) {
    if (samples.empty()) throw std::invalid_argument("osl: testing phase needs samples");
    std::vector<std::size_t> kept;
    const double m = static_cast<double>(samples.size());
    for (std::size_t hi = 0; hi < H.concepts.size(); ++hi) {
        std::size_t leaked = 0;
        for (const auto& s : samples)
            if (H.concepts[hi].bits[s.point] == 1 && s.label == 0) ++leaked;
        if (static_cast<double>(leaked) / m < lambda / 2.0) kept.push_back(hi);
    }
    return kept;
}

/// Phase 2: among the kept hypotheses, minimize empirical missed mass
/// (predicting 0 where the label is 1). Ties break to the earliest index.
inline std::size_t osl_optimisation_phase(std::span<const LabeledDraw> samples,
                                          const FiniteClass& H,
                                          std::span<const std::size_t> kept) {
    if (kept.empty()) throw std::runtime_error("osl: no hypothesis passed the leakage test");
    if (samples.empty()) throw std::invalid_argument("osl: optimisation phase needs samples");
    std::size_t best = kept.front();
    std::size_t best_missed = samples.size() + 1;
    for (std::size_t hi : kept) {
        std::size_t missed = 0;
        for (const auto& s : samples)
            if (H.concepts[hi].bits[s.point] == 0 && s.label == 1) ++missed;
        if (missed < best_missed) {
            best = hi;
            best_missed = missed;
        }
    }
    return best;
}

inline const FiniteConcept& finite_osl_learn(std::span<const LabeledDraw> testing,
                                             std::span<const LabeledDraw> optimisation,
                                             const FiniteClass& H, double lambda) {
    auto kept = osl_testing_phase(testing, H, lambda);
    return H.concepts[osl_optimisation_phase(optimisation, H, kept)];
}

// ---------------------------------------------------------------------------
// Budget-learning constructions
// ---------------------------------------------------------------------------

/// Capture the d heaviest support points exactly and defer everywhere else:
/// lower = those points, upper = everything. Usage is 1 minus the captured
/// mass; on a uniform measure over a support of size D this is 1 - d/D.
inline FiniteBracket sparse_bracket(const FiniteConcept& g, const FiniteMeasure& mu,
                                    std::size_t d) {
    std::vector<std::size_t> support;
    for (std::size_t i = 0; i < g.bits.size(); ++i)
        if (g.bits[i]) support.push_back(i);
    d = std::min(d, support.size());
    std::sort(support.begin(), support.end(), [&](std::size_t a, std::size_t b) {
        if (mu.mass[a] != mu.mass[b]) return mu.mass[a] > mu.mass[b];
        return a < b;
    });

    FiniteBracket out;
    out.lower.bits.assign(g.bits.size(), 0);
    out.upper.bits.assign(g.bits.size(), 1);
    Rational captured(0);
    for (std::size_t i = 0; i < d; ++i) {
        out.lower.bits[support[i]] = 1;
        captured += mu.mass[support[i]];
    }
    out.usage = Rational(1) - captured;
    return out;
}

/// Per-block threshold positions of a tensorized threshold concept: block b
/// equals indicator(position >= k_b) with k_b in [0, block_len], position
/// counted within the block. Throws when any block is not threshold shaped.
inline std::vector<std::size_t> tensor_threshold_shape(const FiniteConcept& g, std::size_t blocks) {
    if (blocks == 0 || g.size() % blocks != 0)
        throw std::invalid_argument("tensor threshold: domain not divisible into blocks");
    const std::size_t len = g.size() / blocks;
    std::vector<std::size_t> ks(blocks);
    for (std::size_t b = 0; b < blocks; ++b) {
        std::size_t k = len;
        for (std::size_t j = 0; j < len; ++j) {
            const bool on = g.bits[b * len + j] != 0;
            if (on && k == len) k = j;
            if (!on && k != len)
                throw std::invalid_argument("tensor threshold: block " + std::to_string(b) +
                                            " is not threshold shaped");
        }
        ks[b] = k;
    }
    return ks;
}

/// Spend the budget on the d-1 heaviest blocks: reproduce the true threshold
/// there, and collapse every remaining block to the trivial bracket [0, 1].
/// Usage is exactly the unselected blocks' mass.
inline FiniteBracket tensor_threshold_bracket(const FiniteConcept& g, const FiniteMeasure& mu,
                                              std::size_t blocks, std::size_t d) {
    if (d < 1) throw std::invalid_argument("tensor threshold: d must be at least 1");
    tensor_threshold_shape(g, blocks); // validates the shape
    const std::size_t len = g.size() / blocks;

    std::vector<std::size_t> order(blocks);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Rational> block_mass(blocks, Rational(0));
    for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t j = 0; j < len; ++j) block_mass[b] += mu.mass[b * len + j];
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (block_mass[a] != block_mass[b]) return block_mass[a] > block_mass[b];
        return a < b;
    });

    const std::size_t chosen = std::min(d - 1, blocks);
    FiniteBracket out;
    out.lower.bits.assign(g.size(), 0);
    out.upper.bits.assign(g.size(), 1);
    out.usage = Rational(1);
    for (std::size_t i = 0; i < chosen; ++i) {
        const std::size_t b = order[i];
        for (std::size_t j = 0; j < len; ++j) {
            out.lower.bits[b * len + j] = g.bits[b * len + j];
            out.upper.bits[b * len + j] = g.bits[b * len + j];
        }
        out.usage -= block_mass[b];
    }
    return out;
}

/// All concepts formed by thresholding at most d-1 chosen blocks and placing
/// one constant on the collapsed remainder. This is the family the
/// tensorized construction selects from; used to cross-check its usage
/// against the exhaustive bracketing optimum.
inline FiniteClass tensor_threshold_class(std::size_t blocks, std::size_t d, std::size_t len) {
    FiniteClass H;
    H.name = "tensor-threshold";
    H.domain_size = blocks * len;

    std::vector<std::size_t> subset;
    auto emit = [&]() {
        // thresholds per chosen block range over [0, len]
        std::vector<std::size_t> ks(subset.size(), 0);
        for (;;) {
            for (std::uint8_t rest : {0, 1}) {
                FiniteConcept c;
                c.bits.assign(blocks * len, rest);
                for (std::size_t s = 0; s < subset.size(); ++s) {
                    const std::size_t b = subset[s];
                    for (std::size_t j = 0; j < len; ++j)
                        c.bits[b * len + j] = j >= ks[s] ? 1 : 0;
                }
                H.add(std::move(c));
            }
            std::size_t pos = 0;
            while (pos < ks.size() && ks[pos] == len) ks[pos++] = 0;
            if (pos == ks.size()) break;
            ++ks[pos];
        }
    };
    auto rec = [&](auto&& self, std::size_t start) -> void {
        emit();
        if (subset.size() + 1 >= d && d > 0) return; // at most d-1 chosen blocks
        for (std::size_t b = start; b < blocks; ++b) {
            subset.push_back(b);
            self(self, b + 1);
            subset.pop_back();
        }
    };
    rec(rec, 0);
    return H;
}

// ---------------------------------------------------------------------------
// Rectangle partitions on a grid
// ---------------------------------------------------------------------------

/// Half-open cell rectangle [x0, x1) x [y0, y1) with a constant label.
struct GridRect {
    std::size_t x0, x1, y0, y1;
    std::uint8_t label;
};

/// Capture the kappa heaviest parts of each label: lower = union of chosen
/// 1-parts, upper = complement of the union of chosen 0-parts. The cells
/// outside both unions are deferred. The partition must tile the grid.
inline FiniteBracket rectangle_bracket(const std::vector<GridRect>& parts, const FiniteMeasure& mu,
                                       std::size_t width, std::size_t height, std::size_t kappa) {
    if (mu.size() != width * height)
        throw std::invalid_argument("rectangle bracket: measure size must match the grid");
    std::vector<int> owner(width * height, -1);
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto& r = parts[p];
        if (r.x1 > width || r.y1 > height || r.x0 >= r.x1 || r.y0 >= r.y1)
            throw std::invalid_argument("rectangle bracket: part " + std::to_string(p) +
                                        " is out of bounds or empty");
        for (std::size_t y = r.y0; y < r.y1; ++y)
            for (std::size_t x = r.x0; x < r.x1; ++x) {
                auto& o = owner[y * width + x];
                if (o >= 0)
                    throw std::invalid_argument("rectangle bracket: overlapping rectangles at cell (" +
                                                std::to_string(x) + "," + std::to_string(y) + ")");
                o = static_cast<int>(p);
            }
    }
    for (std::size_t i = 0; i < owner.size(); ++i)
        if (owner[i] < 0)
            throw std::invalid_argument("rectangle bracket: partition does not cover the grid");

    std::vector<Rational> part_mass(parts.size(), Rational(0));
    for (std::size_t i = 0; i < owner.size(); ++i)
        part_mass[static_cast<std::size_t>(owner[i])] += mu.mass[i];

    auto heaviest = [&](std::uint8_t label) {
        std::vector<std::size_t> idx;
        for (std::size_t p = 0; p < parts.size(); ++p)
            if (parts[p].label == label) idx.push_back(p);
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            if (part_mass[a] != part_mass[b]) return part_mass[a] > part_mass[b];
            return a < b;
        });
        if (idx.size() > kappa) idx.resize(kappa);
        return idx;
    };

    std::vector<std::uint8_t> in_lower(parts.size(), 0), out_upper(parts.size(), 0);
    for (std::size_t p : heaviest(1)) in_lower[p] = 1;
    for (std::size_t p : heaviest(0)) out_upper[p] = 1;

    FiniteBracket out;
    out.lower.bits.assign(width * height, 0);
    out.upper.bits.assign(width * height, 1);
    out.usage = Rational(0);
    for (std::size_t i = 0; i < owner.size(); ++i) {
        const auto p = static_cast<std::size_t>(owner[i]);
        if (in_lower[p]) out.lower.bits[i] = 1;
        if (out_upper[p]) out.upper.bits[i] = 0;
        if (out.lower.bits[i] != out.upper.bits[i]) out.usage += mu.mass[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json finite_class_to_json(const FiniteClass& H) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : H.concepts) {
        std::string s;
        s.reserve(c.size());
        for (auto b : c.bits) s.push_back(b ? '1' : '0');
        arr.push_back(s);
    }
    return nlohmann::json{{"name", H.name}, {"N", H.domain_size}, {"concepts", arr}};
}

inline FiniteClass finite_class_from_json(const nlohmann::json& j) {
    FiniteClass H;
    try {
        H.name = j.at("name").get<std::string>();
        H.domain_size = j.at("N").get<std::size_t>();
        for (const auto& s : j.at("concepts")) {
            const auto str = s.get<std::string>();
            FiniteConcept c;
            c.bits.reserve(str.size());
            for (char ch : str) {
                if (ch != '0' && ch != '1')
                    throw std::runtime_error("concept strings must be over {0,1}");
                c.bits.push_back(ch == '1' ? 1 : 0);
            }
            H.add(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed finite class json: ") + e.what());
    }
    H.validate();
    return H;
}

} // namespace bracketlearn
