#pragma once

#include "surfprobe/embedding_store.hpp"
#include "surfprobe/probe_model.hpp"
#include "surfprobe/task_builder.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace surfprobe {

struct ConstitutionTask {
    std::vector<int> positions;
    std::vector<Direction> directions;
};

struct ExperimentConfig {
    std::filesystem::path embeddings;
    EmbeddingFormat format = EmbeddingFormat::jsonl;
    LoadOptions load;

    bool length = false;
    bool substring = false;
    std::optional<ConstitutionTask> constitution;

    int k = 10;
    double negative_ratio = 1.0;
    std::optional<std::size_t> max_eval_pairs = 2'000'000;

    std::size_t hidden_dim = 2096;
    int n_layers = 3;
    TrainConfig train;  // train.seed is ignored; per-probe seeds derive from `seed`

    std::filesystem::path output_dir;
    std::uint64_t seed = 0;
    int workers = 1;
    bool export_datasets = false;

    void validate() const;
};

// Strict JSON schema: unknown keys are ConfigErrors. Relative paths resolve
// against `base_dir`.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);

struct FoldMetrics {
    int fold = 0;
    bool skipped = false;
    std::string note;  // why the fold was skipped or failed
    std::size_t train_size = 0;
    std::size_t eval_size = 0;
    std::map<std::string, double> values;
    std::vector<double> loss_curve;
};

// One probe family evaluated under k-fold cross-validation.
struct MetricsReport {
    std::string task;  // "length", "substring", "constitution"
    int position = 0;  // constitution only
    Direction direction = Direction::forward;

    std::vector<FoldMetrics> folds;
    std::map<std::string, double> mean;  // over folds that were not skipped
    std::map<int, std::size_t> support;  // pooled true-label support over eval sets
    // Length: metrics per true length. Constitution: unused (one report per N).
    std::map<int, std::map<std::string, double>> breakdown;
    std::map<std::string, double> counts;
    std::vector<std::pair<int, double>> predictions;  // length: (true, predicted) per eval example

    std::string id() const;
};

struct Failure {
    std::string unit;
    int fold = -1;
    std::string kind;
    std::string message;
};

struct ExperimentReport {
    nlohmann::json config;
    std::string embedding_sha256;
    std::size_t vocab_size = 0;
    std::size_t dim = 0;
    std::vector<std::size_t> fold_sizes;
    std::vector<MetricsReport> reports;
    std::vector<Failure> failures;

    const MetricsReport* find(const std::string& id) const;
};

nlohmann::json to_json(const MetricsReport& report);
nlohmann::json to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const nlohmann::json& j);
ExperimentReport load_report(const std::filesystem::path& path);

// Table-style summary: MSE / F1% / ACC% per task, two decimals.
std::vector<std::vector<std::string>> summary_rows(const ExperimentReport& report);

using LogFn = std::function<void(const std::string&)>;

// load -> folds -> datasets -> train/evaluate every fold -> aggregate.
// Module errors become entries of `failures`; the rest of the run continues.
ExperimentReport run_experiment(const ExperimentConfig& config, const LogFn& log = {});

// Writes report.json and summary.csv (and failures.json when non-empty).
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

// length_predictions.csv (true_length, predicted_length) and
// constitution_accuracy.csv (N, direction, accuracy). Returns files written.
std::vector<std::filesystem::path> export_figure_data(const ExperimentReport& report,
                                                      const std::filesystem::path& dir);

struct Difference {
    std::string path;
    std::string kind;  // "value", "missing_in_a", "missing_in_b", "type"
    nlohmann::json a;
    nlohmann::json b;
    std::optional<double> delta;  // b - a for numbers
};

std::vector<Difference> compare_reports(const nlohmann::json& a, const nlohmann::json& b);
nlohmann::json to_json(const std::vector<Difference>& diffs);

std::string sha256_file(const std::filesystem::path& path);

}  // namespace surfprobe
