#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace bracketlearn {

struct Point {
    double x, y;
};

struct WeightedPoint {
    double x, y, w;
};

inline double cross3(const Point& o, const Point& a, const Point& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

/// Strictly convex polygon, vertices in counterclockwise order.
struct ConvexPolygon {
    std::vector<Point> vertices;

    std::size_t size() const { return vertices.size(); }

    void validate() const {
        if (vertices.size() < 3)
            throw std::invalid_argument("polygon: need at least 3 vertices");
        const std::size_t n = vertices.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Point& a = vertices[i];
            const Point& b = vertices[(i + 1) % n];
            const Point& c = vertices[(i + 2) % n];
            if (cross3(a, b, c) <= 1e-12)
                throw std::invalid_argument(
                    "polygon: vertices must be strictly convex counterclockwise (violation near vertex " +
                    std::to_string((i + 1) % n) + ")");
        }
    }
};

/// Inside-or-on test with absolute slack on the orientation predicate.
inline bool contains(const ConvexPolygon& P, const Point& p, double slack = 1e-9) {
    const std::size_t n = P.vertices.size();
    for (std::size_t i = 0; i < n; ++i)
        if (cross3(P.vertices[i], P.vertices[(i + 1) % n], p) < -slack) return false;
    return true;
}

inline double sample_mass(const ConvexPolygon& P, std::span<const WeightedPoint> sample) {
    double s = 0.0;
    for (const auto& wp : sample)
        if (contains(P, {wp.x, wp.y})) s += wp.w;
    return s;
}

namespace detail {

inline bool in_triangle(const Point& a, const Point& b, const Point& c, const Point& p,
                        double slack = 1e-9) {
    // a, b, c counterclockwise
    return cross3(a, b, p) >= -slack && cross3(b, c, p) >= -slack && cross3(c, a, p) >= -slack;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Inner approximation
// ---------------------------------------------------------------------------

/// Consecutive vertex runs from a shared apex; each fan is a sub-polygon of
/// at most d vertices and the fans tile P.
inline std::vector<ConvexPolygon> inner_fans(const ConvexPolygon& P, std::size_t d) {
    P.validate();
    const std::size_t D = P.size();
    if (d < 3) throw std::invalid_argument("inner approximation: d must be at least 3");
    if (d >= D) return {P};
    std::vector<ConvexPolygon> fans;
    // Runs of d-2 triangles (v0, v_i, v_{i+1}); consecutive runs share one edge.
    for (std::size_t start = 1; start + 1 < D; start += d - 2) {
        const std::size_t stop = std::min(start + (d - 2), D - 1);
        ConvexPolygon fan;
        fan.vertices.push_back(P.vertices[0]);
        for (std::size_t i = start; i <= stop; ++i) fan.vertices.push_back(P.vertices[i]);
        fans.push_back(std::move(fan));
    }
    return fans;
}

/// Heaviest fan of the apex decomposition: a sub-polygon with at most d
/// vertices carrying at least 1/ceil((D-2)/(d-2)) of P's sample mass.
inline ConvexPolygon inner_approx(const ConvexPolygon& P, std::span<const WeightedPoint> sample,
                                  std::size_t d) {
    auto fans = inner_fans(P, d);
    std::size_t best = 0;
    double best_mass = -1.0;
    for (std::size_t i = 0; i < fans.size(); ++i) {
        const double m = sample_mass(fans[i], sample);
        if (m > best_mass) {
            best = i;
            best_mass = m;
        }
    }
    return fans[best];
}

// ---------------------------------------------------------------------------
// Outer approximation
// ---------------------------------------------------------------------------

/// One side-removal round: drop side (i, i+1) by extending its neighbor
/// sides until they meet. Reduces the vertex count by one and adds the
/// triangle (v_i, v_{i+1}, w) to the region.
namespace detail {

struct SideExtension {
    bool ok = false;
    Point apex{};
    double added_mass = 0.0;
};

inline SideExtension extend_side(const ConvexPolygon& P, std::size_t i,
                                 std::span<const WeightedPoint> sample) {
    const std::size_t n = P.size();
    const Point& prev = P.vertices[(i + n - 1) % n];
    const Point& a = P.vertices[i];
    const Point& b = P.vertices[(i + 1) % n];
    const Point& next = P.vertices[(i + 2) % n];

    const Point da{a.x - prev.x, a.y - prev.y}; // forward along the edge into a
    const Point db{b.x - next.x, b.y - next.y}; // backward along the edge out of b
    const double den = da.x * db.y - da.y * db.x;
    const double scale = std::max({1.0, std::abs(da.x) + std::abs(da.y),
                                   std::abs(db.x) + std::abs(db.y)});
    if (std::abs(den) < 1e-12 * scale * scale) return {}; // parallel: no meeting point

    // a + t*da = b + s*db
    const double rx = b.x - a.x, ry = b.y - a.y;
    const double t = (rx * db.y - ry * db.x) / den;
    const double s = (rx * da.y - ry * da.x) / den;
    if (!(t > 1e-12) || !(s > 1e-12)) return {}; // rays diverge
    const Point w{a.x + t * da.x, a.y + t * da.y};
    if (std::abs(w.x) > 1e6 || std::abs(w.y) > 1e6) return {}; // effectively parallel

    SideExtension ext;
    ext.ok = true;
    ext.apex = w;
    ext.added_mass = 0.0;
    for (const auto& wp : sample)
        if (in_triangle(a, b, w, {wp.x, wp.y})) ext.added_mass += wp.w;
    return ext;
}

} // namespace detail

/// Shrink the vertex count to d by repeatedly deleting the side whose
/// replacement triangle holds the least sample mass. Every round only grows
/// the region, so the result contains P.
inline ConvexPolygon outer_approx(const ConvexPolygon& P, std::span<const WeightedPoint> sample,
                                  std::size_t d) {
    P.validate();
    if (d < 4) throw std::invalid_argument("outer approximation: d must be at least 4");
    ConvexPolygon cur = P;
    while (cur.size() > d) {
        const std::size_t n = cur.size();
        std::size_t best_side = n;
        detail::SideExtension best;
        for (std::size_t i = 0; i < n; ++i) {
            const auto ext = detail::extend_side(cur, i, sample);
            if (!ext.ok) continue;
            if (best_side == n || ext.added_mass < best.added_mass) {
                best_side = i;
                best = ext;
            }
        }
        if (best_side == n)
            throw std::runtime_error("outer approximation: no side can be extended (degenerate geometry)");
        ConvexPolygon nextP;
        nextP.vertices.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == best_side) {
                nextP.vertices.push_back(best.apex);
                ++j; // skip the second endpoint of the removed side
                continue;
            }
            nextP.vertices.push_back(cur.vertices[j]);
        }
        if (best_side + 1 == n) nextP.vertices.erase(nextP.vertices.begin()); // wrapped endpoint
        cur = std::move(nextP);
        cur.validate();
    }
    return cur;
}

// ---------------------------------------------------------------------------
// Combined budget
// ---------------------------------------------------------------------------

struct PolygonBudget {
    double usage; // deferred fraction of the sample's total weight
    ConvexPolygon inner;
    ConvexPolygon outer;
};

/// Defer exactly between the two approximations: points inside outer but
/// outside inner. Containment of inner in P in outer is asserted on the
/// vertices.
inline PolygonBudget polygon_budget(const ConvexPolygon& P, std::span<const WeightedPoint> sample,
                                    std::size_t d) {
    P.validate();
    PolygonBudget out;
    out.inner = d >= P.size() ? P : inner_approx(P, sample, d);
    out.outer = d >= P.size() ? P : outer_approx(P, sample, d);

    for (const auto& v : out.inner.vertices)
        if (!contains(P, v, 1e-6))
            throw std::runtime_error("polygon budget: inner approximation escapes the polygon");
    for (const auto& v : P.vertices)
        if (!contains(out.outer, v, 1e-6))
            throw std::runtime_error("polygon budget: outer approximation fails to contain the polygon");

    double total = 0.0, deferred = 0.0;
    for (const auto& wp : sample) {
        total += wp.w;
        const Point p{wp.x, wp.y};
        if (contains(out.outer, p) && !contains(out.inner, p)) deferred += wp.w;
    }
    out.usage = total > 0.0 ? deferred / total : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json polygon_to_json(const ConvexPolygon& P) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : P.vertices) arr.push_back({v.x, v.y});
    return arr;
}

inline ConvexPolygon polygon_from_json(const nlohmann::json& j) {
    ConvexPolygon P;
    try {
        for (const auto& v : j) P.vertices.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed polygon json: ") + e.what());
    }
    P.validate();
    return P;
}

} // namespace bracketlearn
