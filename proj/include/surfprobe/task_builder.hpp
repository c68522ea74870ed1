#pragma once

#include "surfprobe/embedding_store.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

namespace surfprobe {

enum class TaskKind { length, substring, constitution };
enum class Direction { forward, backward };

std::string_view to_string(TaskKind kind);
std::string_view to_string(Direction dir);
Direction parse_direction(std::string_view name);

// `token` is the probed word/subword; `other` is the candidate substring
// (substring task only). Labels: length in code points, 0/1 for substring,
// index into the CharSubset for constitution.
struct ProbeExample {
    std::size_t token = 0;
    std::optional<std::size_t> other;
    int label = 0;

    bool operator==(const ProbeExample&) const = default;
};

struct ProbeDataset {
    TaskKind task = TaskKind::length;
    std::vector<ProbeExample> examples;

    // Constitution only.
    int position = 0;
    Direction direction = Direction::forward;
    std::size_t dropped_too_short = 0;
    std::size_t dropped_char_absent = 0;

    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
};

class FoldPlan {
public:
    FoldPlan(int k, std::vector<int> assignments);

    int k() const { return k_; }
    int fold_of(std::size_t token) const { return assignments_.at(token); }
    const std::vector<int>& assignments() const { return assignments_; }
    std::vector<std::size_t> fold_sizes() const;
    std::vector<std::size_t> members(int fold) const;

    bool operator==(const FoldPlan&) const = default;

private:
    int k_;
    std::vector<int> assignments_;
};

// Seeded shuffle of the token ids, dealt round-robin into k folds.
FoldPlan make_folds(const EmbeddingTable& table, int k, std::uint64_t seed);

// Examples (single-token tasks) whose token is outside / inside `fold`.
std::vector<ProbeExample> training_split(const ProbeDataset& data, const FoldPlan& folds, int fold);
std::vector<ProbeExample> test_split(const ProbeDataset& data, const FoldPlan& folds, int fold);

ProbeDataset build_length_dataset(const EmbeddingTable& table);

struct SamplingConfig {
    std::uint64_t seed = 0;
    double negative_ratio = 1.0;
    std::optional<std::size_t> max_eval_pairs = 2'000'000;
};

struct SubstringFold {
    ProbeDataset train;
    ProbeDataset eval;
    std::size_t train_positives = 0;
    std::size_t eval_candidates = 0;  // before subsampling
    bool skipped = false;             // no positive pair inside the training split
};

struct SubstringSplits {
    std::vector<SubstringFold> folds;
    std::optional<std::size_t> max_eval_pairs;
};

// Contiguous containment over Unicode scalar values.
bool is_substring(std::u32string_view part, std::u32string_view whole);

SubstringSplits build_substring_dataset(const EmbeddingTable& table, const FoldPlan& folds,
                                        const SamplingConfig& sampling);

ProbeDataset build_constitution_dataset(const EmbeddingTable& table, const CharSubset& chars, int position,
                                        Direction direction);

// Audit export: one {"w": token, "t": token?, "label": value} object per line.
void export_dataset_jsonl(const ProbeDataset& data, const EmbeddingTable& table, const CharSubset* chars,
                          const std::filesystem::path& path);

}  // namespace surfprobe
