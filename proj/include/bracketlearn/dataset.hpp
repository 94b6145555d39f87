#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "bracketlearn/rng.hpp"

namespace bracketlearn {

/// Weighted sample of a cloud classifier: rows of features, the cloud's
/// binary label on each row, and nonnegative weights summing to one (the
/// empirical measure). Immutable after construction in normal use; safe to
/// share across threads.
struct Dataset {
    std::vector<double> features; // row-major, n * k
    std::vector<std::uint8_t> cloud_labels;
    std::vector<double> weights;
    std::size_t n = 0;
    std::size_t k = 0;
    std::string feature_map_id = "identity";

    std::span<const double> row(std::size_t i) const {
        return {features.data() + i * k, k};
    }
    std::uint8_t label(std::size_t i) const { return cloud_labels[i]; }
    double weight(std::size_t i) const { return weights[i]; }

    void validate() const;
};

inline void Dataset::validate() const {
    if (features.size() != n * k)
        throw std::invalid_argument("dataset: feature buffer size mismatch");
    if (cloud_labels.size() != n || weights.size() != n)
        throw std::invalid_argument("dataset: label/weight length mismatch");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0))
            throw std::invalid_argument("dataset: negative weight");
        total += w;
    }
    if (n > 0 && std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("dataset: weights must sum to 1");
    for (std::uint8_t y : cloud_labels)
        if (y != 0 && y != 1)
            throw std::invalid_argument("dataset: cloud_labels must be 0/1");
}

struct SplitSpec {
    double train_fraction = 0.8;
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(train_fraction > 0.0 && train_fraction < 1.0) ||
            !(validation_fraction > 0.0 && validation_fraction < 1.0) ||
            train_fraction + validation_fraction > 1.0)
            throw std::invalid_argument("split: fractions must lie in (0,1) and sum to at most 1");
    }
};

// ---------------------------------------------------------------------------
// Feature maps
// ---------------------------------------------------------------------------

/// Named fixed transforms applied to raw input rows.
///  - identity / none: pass-through
///  - conic: (x, y) -> (x, y, x^2, y^2); axis-aligned conic sections become
///    linear classifiers in this representation.
inline std::vector<double> apply_feature_map(const std::string& map_id,
                                             std::span<const double> raw) {
    if (map_id == "identity" || map_id == "none")
        return {raw.begin(), raw.end()};
    if (map_id == "conic") {
        if (raw.size() != 2)
            throw std::invalid_argument("conic feature map expects 2 raw columns, got " +
                                        std::to_string(raw.size()));
        return {raw[0], raw[1], raw[0] * raw[0], raw[1] * raw[1]};
    }
    throw std::invalid_argument("unknown feature map: " + map_id);
}

inline std::size_t feature_map_output_dim(const std::string& map_id, std::size_t raw_k) {
    if (map_id == "conic") return 4;
    return raw_k;
}

// ---------------------------------------------------------------------------
// Synthetic task
// ---------------------------------------------------------------------------

/// Quartic cloud classifier on [-10,10]^2. Points exactly on the decision
/// boundary get label 0 (strict inequality).
inline std::uint8_t synthetic_cloud_label(double x, double y) {
    const double e = x + 4 * x * x + 3 * x * x * x + 3 * x * x * x * x + y + y * y +
                     y * y * y + y * y * y * y + 5 * x * y * y + 30 * x * x * y;
    return e < 1000.0 ? 1 : 0;
}

struct RawPoint {
    double x, y;
    std::uint8_t label;
};

inline std::vector<RawPoint> generate_synthetic_raw(std::size_t n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("generate_synthetic: n must be at least 1");
    std::vector<RawPoint> pts;
    pts.reserve(n);
    Rng rng = Rng::derived(seed, 0x5b7e);
    for (std::size_t i = 0; i < n; ++i) {
        double x = rng.uniform(-10.0, 10.0);
        double y = rng.uniform(-10.0, 10.0);
        pts.push_back({x, y, synthetic_cloud_label(x, y)});
    }
    return pts;
}

/// n uniform points on [-10,10]^2 labeled by the quartic cloud, emitted under
/// the conic map with uniform weights.
inline Dataset generate_synthetic(std::size_t n, std::uint64_t seed) {
    auto pts = generate_synthetic_raw(n, seed);
    Dataset d;
    d.n = n;
    d.k = 4;
    d.feature_map_id = "conic";
    d.features.reserve(n * 4);
    d.cloud_labels.reserve(n);
    d.weights.assign(n, 1.0 / static_cast<double>(n));
    for (const auto& p : pts) {
        auto f = apply_feature_map("conic", std::span<const double>{&p.x, 2});
        d.features.insert(d.features.end(), f.begin(), f.end());
        d.cloud_labels.push_back(p.label);
    }
    d.validate();
    return d;
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    if (!out.empty() && !out.back().empty() && out.back().back() == '\r')
        out.back().pop_back();
    return out;
}

inline bool parse_double(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = b + s.size();
    while (b < e && (*b == ' ' || *b == '\t')) ++b;
    auto [p, ec] = std::from_chars(b, e, out);
    while (p < e && (*p == ' ' || *p == '\t')) ++p;
    return ec == std::errc{} && p == e;
}

} // namespace detail

/// Load a CSV with a header row whose final column is `cloud_label`
/// (values 0/1); the remaining columns are numeric features. The named
/// feature map is applied to each raw row; weights are uniform.
inline Dataset load_csv(const std::string& path, const std::string& feature_map_id = "identity") {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);

    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error(path + ": empty file");
    auto header = detail::split_csv_line(line);
    if (header.empty() || header.back() != "cloud_label")
        throw std::runtime_error(path + ": final header column must be 'cloud_label'");
    const std::size_t raw_k = header.size() - 1;
    if (raw_k == 0) throw std::runtime_error(path + ": no feature columns");

    Dataset d;
    d.feature_map_id = feature_map_id;
    d.k = feature_map_output_dim(feature_map_id, raw_k);

    std::vector<double> raw(raw_k);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw std::runtime_error(path + ": malformed row at line " + std::to_string(line_no) +
                                     " (expected " + std::to_string(header.size()) + " cells, got " +
                                     std::to_string(cells.size()) + ")");
        for (std::size_t j = 0; j < raw_k; ++j)
            if (!detail::parse_double(cells[j], raw[j]))
                throw std::runtime_error(path + ": malformed row at line " + std::to_string(line_no) +
                                         " (bad numeric cell '" + cells[j] + "')");
        double labelv;
        if (!detail::parse_double(cells[raw_k], labelv) || (labelv != 0.0 && labelv != 1.0))
            throw std::runtime_error(path + ": non-binary cloud_label at line " + std::to_string(line_no));
        auto mapped = apply_feature_map(feature_map_id, raw);
        d.features.insert(d.features.end(), mapped.begin(), mapped.end());
        d.cloud_labels.push_back(static_cast<std::uint8_t>(labelv));
        ++d.n;
    }
    if (d.n == 0) throw std::runtime_error(path + ": no data rows");
    d.weights.assign(d.n, 1.0 / static_cast<double>(d.n));
    d.validate();
    return d;
}

/// Write raw (x, y, cloud_label) rows; round-trip exact so that
/// load_csv(path, "conic") reproduces generate_synthetic bit-for-bit.
inline void write_synthetic_csv(const std::string& path, const std::vector<RawPoint>& pts) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "x,y,cloud_label\n";
    char buf[64];
    for (const auto& p : pts) {
        std::snprintf(buf, sizeof(buf), "%.17g", p.x);
        out << buf << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", p.y);
        out << buf << ',' << int(p.label) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

namespace detail {

inline Dataset take_rows(const Dataset& d, std::span<const std::size_t> idx) {
    Dataset out;
    out.k = d.k;
    out.n = idx.size();
    out.feature_map_id = d.feature_map_id;
    out.features.reserve(out.n * out.k);
    double wsum = 0.0;
    for (std::size_t i : idx) wsum += d.weights[i];
    for (std::size_t i : idx) {
        auto r = d.row(i);
        out.features.insert(out.features.end(), r.begin(), r.end());
        out.cloud_labels.push_back(d.cloud_labels[i]);
        out.weights.push_back(wsum > 0.0 ? d.weights[i] / wsum : 0.0);
    }
    return out;
}

} // namespace detail

/// Deterministic disjoint train/validation/test partition; weights are
/// renormalized within each split.
inline std::tuple<Dataset, Dataset, Dataset> split(const Dataset& d, const SplitSpec& s) {
    s.validate();
    if (d.n < 3) throw std::invalid_argument("split: need at least 3 rows");
    const std::size_t n_train = static_cast<std::size_t>(std::floor(d.n * s.train_fraction));
    const std::size_t n_val = static_cast<std::size_t>(std::floor(d.n * s.validation_fraction));
    if (n_train == 0 || n_val == 0 || n_train + n_val >= d.n)
        throw std::invalid_argument("split: a split of size 0");
    auto idx = shuffled_indices(d.n, Rng::derived(s.seed, 0x57a7));
    std::span<const std::size_t> all(idx);
    return {detail::take_rows(d, all.subspan(0, n_train)),
            detail::take_rows(d, all.subspan(n_train, n_val)),
            detail::take_rows(d, all.subspan(n_train + n_val))};
}

/// Two-way split (train/validation) used when a separate test file exists.
inline std::pair<Dataset, Dataset> split_train_val(const Dataset& d, double train_fraction,
                                                   std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("split_train_val: fraction must lie in (0,1)");
    const std::size_t n_train = static_cast<std::size_t>(std::floor(d.n * train_fraction));
    if (n_train == 0 || n_train >= d.n)
        throw std::invalid_argument("split_train_val: a split of size 0");
    auto idx = shuffled_indices(d.n, Rng::derived(seed, 0x57a7));
    std::span<const std::size_t> all(idx);
    return {detail::take_rows(d, all.subspan(0, n_train)),
            detail::take_rows(d, all.subspan(n_train))};
}

} // namespace bracketlearn
