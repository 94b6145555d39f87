#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace bracketlearn {

/// FNV-1a over the canonical dump of a JSON value; stable across runs and
/// platforms, used to tie a report to the exact configuration that made it.
inline std::uint64_t config_digest(const nlohmann::json& config) {
    const std::string s = config.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string digest_hex(std::uint64_t h) {
    static const char* hexd = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = hexd[h & 0xf];
        h >>= 4;
    }
    return out;
}

struct ExperimentReport {
    std::string method;
    double target_accuracy = 0.0;
    double achieved_accuracy = 0.0;
    double usage = 0.0;
    double rate_of_local = 0.0; // 1/usage; infinity when usage is zero
    double leakage_below = 0.0;
    double leakage_above = 0.0;
    double wall_time_seconds = 0.0;
    std::string config_digest;

    void finalize_rate() {
        rate_of_local = usage > 0.0 ? 1.0 / usage : std::numeric_limits<double>::infinity();
    }

    void check() const {
        if (usage < 0.0 || usage > 1.0) throw std::logic_error("report usage out of [0,1]");
        if (usage == 0.0) {
            if (!std::isinf(rate_of_local)) throw std::logic_error("rate must be inf at zero usage");
        } else if (std::abs(rate_of_local * usage - 1.0) > 1e-9) {
            throw std::logic_error("rate_of_local * usage must be 1 within 1e-9");
        }
    }
};

inline nlohmann::json report_to_json(const ExperimentReport& r) {
    r.check();
    nlohmann::json j{{"method", r.method},
                     {"target_accuracy", r.target_accuracy},
                     {"achieved_accuracy", r.achieved_accuracy},
                     {"usage", r.usage},
                     {"leakage_below", r.leakage_below},
                     {"leakage_above", r.leakage_above},
                     {"wall_time_seconds", r.wall_time_seconds},
                     {"config_digest", r.config_digest}};
    if (std::isinf(r.rate_of_local))
        j["rate_of_local"] = "inf";
    else
        j["rate_of_local"] = r.rate_of_local;
    return j;
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
    ExperimentReport r;
    try {
        r.method = j.at("method").get<std::string>();
        r.target_accuracy = j.at("target_accuracy").get<double>();
        r.achieved_accuracy = j.at("achieved_accuracy").get<double>();
        r.usage = j.at("usage").get<double>();
        if (j.at("rate_of_local").is_string())
            r.rate_of_local = std::numeric_limits<double>::infinity();
        else
            r.rate_of_local = j.at("rate_of_local").get<double>();
        r.leakage_below = j.at("leakage_below").get<double>();
        r.leakage_above = j.at("leakage_above").get<double>();
        r.wall_time_seconds = j.at("wall_time_seconds").get<double>();
        r.config_digest = j.at("config_digest").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed report json: ") + e.what());
    }
    r.check();
    return r;
}

} // namespace bracketlearn
