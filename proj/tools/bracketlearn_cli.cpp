// Command-line front end: dataset synthesis, experiment runs, raster export
// for plotting, and the exact/statistical verification suites.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <bracketlearn/bracketlearn.hpp>

namespace bl = bracketlearn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitUnattained = 3;
constexpr int kExitVerifyFailed = 4;

std::uint64_t resolve_seed(std::uint64_t config_seed) {
    if (const char* env = std::getenv("BRACKETLEARN_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw std::runtime_error("BRACKETLEARN_SEED is not an unsigned integer");
        }
    }
    return config_seed;
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

int cmd_synth(std::size_t n, std::uint64_t seed, const std::string& out_path) {
    const auto pts = bl::generate_synthetic_raw(n, resolve_seed(seed));
    bl::write_synthetic_csv(out_path, pts);
    std::cout << "wrote " << n << " rows to " << out_path << "\n";
    return kExitOk;
}

int cmd_run(const std::string& method, const std::string& data_path, double target,
            const std::string& config_path, const std::string& out_path,
            const std::string& bundle_path, const std::string& feature_map, bool certify,
            double zeta, double delta) {
    bl::ExperimentConfig cfg = bl::default_config();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw std::runtime_error("cannot read " + config_path);
        nlohmann::json j;
        in >> j;
        cfg = bl::config_from_json(j);
    }
    cfg.seed = resolve_seed(cfg.seed);
    cfg.train.seed = cfg.seed;

    const bl::Dataset full = bl::load_csv(data_path, feature_map);
    bl::SplitSpec spec;
    spec.train_fraction = cfg.train_fraction;
    spec.validation_fraction = cfg.validation_fraction;
    spec.seed = cfg.seed;
    const auto [train, val, test] = bl::split(full, spec);

    std::optional<bl::CertifyOptions> copts;
    if (certify) copts = bl::CertifyOptions{zeta, delta};

    bl::RunOutcome out;
    try {
        out = bl::run_experiment(method, train, val, test, target, cfg, copts);
    } catch (const bl::CertificationInfeasible& e) {
        std::cerr << e.what() << "\n";
        return kExitUnattained;
    }

    nlohmann::json rep = bl::report_to_json(out.report);
    rep["attained"] = out.attained;
    if (!out.sub_reports.empty()) {
        nlohmann::json subs = nlohmann::json::array();
        for (const auto& s : out.sub_reports) subs.push_back(bl::report_to_json(s));
        rep["sub_reports"] = subs;
    }
    if (!out_path.empty()) write_json(out_path, rep);
    if (!bundle_path.empty()) write_json(bundle_path, out.bundle);

    std::cout << method << ": accuracy " << out.report.achieved_accuracy << ", usage "
              << out.report.usage << (out.attained ? "" : " (target unattainable)") << "\n";
    return out.attained ? kExitOk : kExitUnattained;
}

int cmd_raster(const std::string& bundle_path, std::size_t grid, const std::string& out_path) {
    std::ifstream in(bundle_path);
    if (!in) throw std::runtime_error("cannot read " + bundle_path);
    nlohmann::json j;
    in >> j;

    // A bundle is either a selection (lower/upper pair) or a gated classifier.
    bl::PredictorModel lower, upper;
    if (j.contains("below") && j.contains("above")) {
        const auto sel = bl::selection_from_json(j);
        lower = sel.bracket.lower;
        upper = sel.bracket.upper;
    } else if (j.contains("gate") && j.contains("predictor")) {
        const auto gc = bl::gated_from_json(j);
        std::ofstream out(out_path);
        if (!out) throw std::runtime_error("cannot write " + out_path);
        out << "x,y,defer,local,cloud\n";
        for (std::size_t iy = 0; iy < grid; ++iy) {
            for (std::size_t ix = 0; ix < grid; ++ix) {
                const double x = -10.0 + 20.0 * (static_cast<double>(ix) + 0.5) / static_cast<double>(grid);
                const double y = -10.0 + 20.0 * (static_cast<double>(iy) + 0.5) / static_cast<double>(grid);
                const double raw[2] = {x, y};
                const auto f = bl::apply_feature_map(gc.predictor.feature_map_id, raw);
                const bool local = gc.local(f);
                const int loc = gc.predictor.predict(f);
                const int cloud = bl::synthetic_cloud_label(x, y);
                out << x << ',' << y << ',' << (local ? 0 : 1) << ',' << loc << ',' << cloud << '\n';
            }
        }
        std::cout << "wrote " << grid << "x" << grid << " raster to " << out_path << "\n";
        return kExitOk;
    } else {
        throw std::runtime_error("bundle missing models: expected a selection or gated classifier");
    }

    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    out << "x,y,defer,local,cloud\n";
    for (std::size_t iy = 0; iy < grid; ++iy) {
        for (std::size_t ix = 0; ix < grid; ++ix) {
            const double x = -10.0 + 20.0 * (static_cast<double>(ix) + 0.5) / static_cast<double>(grid);
            const double y = -10.0 + 20.0 * (static_cast<double>(iy) + 0.5) / static_cast<double>(grid);
            const double raw[2] = {x, y};
            const auto f = bl::apply_feature_map(lower.feature_map_id, raw);
            const int lo = lower.predict(f);
            const int up = upper.predict(f);
            const bool defer = lo != up;
            const int cloud = bl::synthetic_cloud_label(x, y);
            out << x << ',' << y << ',' << (defer ? 1 : 0) << ',' << up << ',' << cloud << '\n';
        }
    }
    std::cout << "wrote " << grid << "x" << grid << " raster to " << out_path << "\n";
    return kExitOk;
}

int cmd_verify(const std::string& suite, std::uint64_t seed, const std::string& out_path) {
    const auto rep = bl::run_verify_suite(suite, resolve_seed(seed));
    for (const auto& c : rep.cases)
        std::cout << "[" << rep.suite << "] " << (c.pass ? "PASS" : "FAIL") << ": " << c.name
                  << " (" << c.detail << ")\n";
    if (!out_path.empty()) write_json(out_path, bl::verify_report_to_json(rep));
    return rep.all_pass() ? kExitOk : kExitVerifyFailed;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"budget-learning toolkit: bracket training, baselines, verification"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate the synthetic quartic dataset as CSV");
    std::size_t synth_n = 2500;
    std::uint64_t synth_seed = 20240817;
    std::string synth_out = "data.csv";
    synth->add_option("--n", synth_n, "number of rows")->check(CLI::PositiveNumber);
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--out", synth_out, "output CSV path");

    auto* run = app.add_subcommand("run", "train, select, and evaluate one method");
    std::string run_method, run_data, run_config, run_out, run_bundle;
    std::string run_map = "conic";
    double run_target = 0.995, run_zeta = 0.1, run_delta = 0.1;
    bool run_certify = false;
    run->add_option("--method", run_method, "bracketing|local-thresh|alt-min|sum-relax")
        ->required()
        ->check(CLI::IsMember({"bracketing", "local-thresh", "alt-min", "sum-relax"}));
    run->add_option("--data", run_data, "input CSV")->required();
    run->add_option("--target-acc", run_target, "target validation accuracy");
    run->add_option("--config", run_config, "JSON config path (defaults are built in)");
    run->add_option("--out", run_out, "report JSON path");
    run->add_option("--bundle-out", run_bundle, "selected model bundle JSON path");
    run->add_option("--feature-map", run_map, "feature map applied to CSV rows");
    run->add_flag("--certify", run_certify, "use certified selection (bracketing only)");
    run->add_option("--zeta", run_zeta, "certified approximation level");
    run->add_option("--delta", run_delta, "certificate failure probability");

    auto* raster = app.add_subcommand("raster", "rasterize a model bundle over [-10,10]^2");
    std::string raster_bundle, raster_out = "raster.csv";
    std::size_t raster_grid = 400;
    raster->add_option("--model-bundle", raster_bundle, "selection or gated bundle JSON")->required();
    raster->add_option("--grid", raster_grid, "cells per axis")->check(CLI::PositiveNumber);
    raster->add_option("--out", raster_out, "output CSV path");

    auto* verify = app.add_subcommand("verify", "run an exact or statistical verification suite");
    std::string verify_suite;
    std::uint64_t verify_seed = 20240817;
    std::string verify_out;
    verify->add_option("--suite", verify_suite,
                       "decoupling|gating|osl-pac|polygon|constructions|binom")
        ->required()
        ->check(CLI::IsMember({"decoupling", "gating", "osl-pac", "polygon", "constructions", "binom"}));
    verify->add_option("--seed", verify_seed, "suite seed");
    verify->add_option("--out", verify_out, "JSON report path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_n, synth_seed, synth_out);
        if (run->parsed())
            return cmd_run(run_method, run_data, run_target, run_config, run_out, run_bundle,
                           run_map, run_certify, run_zeta, run_delta);
        if (raster->parsed()) return cmd_raster(raster_bundle, raster_grid, raster_out);
        if (verify->parsed()) return cmd_verify(verify_suite, verify_seed, verify_out);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitUsage;
}
