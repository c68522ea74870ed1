// surfprobe command-line entry point.
//
//   surfprobe probe run <config.json> [--seed N] [--workers N] [--quiet]
//   surfprobe synth generate <spec.json> <out.jsonl> [--seed N]
//   surfprobe report compare <a.json> <b.json>
//   surfprobe report figures <report.json> <dir>
//
// Failures print one JSON object {"error": kind, "message": ...} on stderr and
// exit nonzero.

#include "surfprobe/errors.hpp"
#include "surfprobe/runner.hpp"
#include "surfprobe/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

namespace {

using namespace surfprobe;
using nlohmann::json;

constexpr int kExitFailure = 1;
constexpr int kExitDifferent = 2;
constexpr int kExitPartial = 3;

int report_error(std::string_view kind, std::string_view message) {
    std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
    return kExitFailure;
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(), 0);
    }
}

int probe_run(const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<int> workers,
              bool quiet) {
    auto config = load_config(config_path);
    if (seed) config.seed = *seed;
    if (workers) config.workers = *workers;
    config.validate();
    LogFn log;
    if (!quiet) log = [](const std::string& line) { std::cerr << line << '\n'; };
    const auto report = run_experiment(config, log);
    write_report(report, config.output_dir);
    for (const auto& row : summary_rows(report)) {
        std::cout << row[0] << (row[1].empty() ? "" : " " + row[1]) << ' ' << row[2] << ' ' << row[3] << '\n';
    }
    std::cout << "wrote " << (config.output_dir / "report.json").string() << '\n';
    if (!report.failures.empty()) {
        std::cerr << json{{"error", "partial_failure"},
                          {"message", std::to_string(report.failures.size()) + " unit(s) failed"},
                          {"failures", to_json(report)["failures"]}}
                         .dump()
                  << '\n';
        return kExitPartial;
    }
    return 0;
}

int synth_generate(const std::string& spec_path, const std::string& out_path, std::optional<std::uint64_t> seed) {
    auto spec = synthetic_spec_from_json(read_json(spec_path));
    if (seed) spec.seed = *seed;
    const auto table = generate(spec);
    save_jsonl(table, out_path);
    std::cout << "wrote " << table.size() << " tokens of dim " << table.dim() << " to " << out_path << '\n';
    return 0;
}

int report_compare(const std::string& a, const std::string& b) {
    const auto diffs = compare_reports(read_json(a), read_json(b));
    std::cout << to_json(diffs).dump(2) << '\n';
    return diffs.empty() ? 0 : kExitDifferent;
}

int report_figures(const std::string& report_path, const std::string& dir) {
    const auto report = load_report(report_path);
    for (const auto& path : export_figure_data(report, dir)) std::cout << "wrote " << path.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Probe embeddings for surface information about their tokens"};
    app.require_subcommand(1);

    auto* probe = app.add_subcommand("probe", "Train and evaluate probes");
    probe->require_subcommand(1);
    auto* run = probe->add_subcommand("run", "Run an experiment config");
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    bool quiet = false;
    run->add_option("config", config_path, "Experiment config (JSON)")->required();
    run->add_option("--seed", seed, "Override the config seed");
    run->add_option("--workers", workers, "Override the worker count");
    run->add_flag("--quiet", quiet, "No per-fold progress on stderr");

    auto* synth = app.add_subcommand("synth", "Synthetic corpora");
    synth->require_subcommand(1);
    auto* generate_cmd = synth->add_subcommand("generate", "Write a synthetic embedding table as JSONL");
    std::string spec_path, out_path;
    generate_cmd->add_option("spec", spec_path, "Synthetic spec (JSON)")->required();
    generate_cmd->add_option("out", out_path, "Output JSONL")->required();
    generate_cmd->add_option("--seed", seed, "Override the spec seed");

    auto* report = app.add_subcommand("report", "Inspect reports");
    report->require_subcommand(1);
    auto* compare = report->add_subcommand("compare", "Structural diff of two reports (exit 2 if they differ)");
    std::string report_a, report_b;
    compare->add_option("a", report_a)->required();
    compare->add_option("b", report_b)->required();
    auto* figures = report->add_subcommand("figures", "Export figure data CSVs");
    std::string figures_report, figures_dir;
    figures->add_option("report", figures_report)->required();
    figures->add_option("dir", figures_dir)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error("usage_error", e.what());
    }

    try {
        if (*run) return probe_run(config_path, seed, workers, quiet);
        if (*generate_cmd) return synth_generate(spec_path, out_path, seed);
        if (*compare) return report_compare(report_a, report_b);
        if (*figures) return report_figures(figures_report, figures_dir);
    } catch (const ProbeError& e) {
        return report_error(e.kind(), e.what());
    } catch (const std::exception& e) {
        return report_error("error", e.what());
    }
    return report_error("usage_error", "no command given");
}
