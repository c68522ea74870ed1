#include "surfprobe/task_builder.hpp"

#include "surfprobe/errors.hpp"
#include "surfprobe/rng.hpp"
#include "surfprobe/utf8.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace surfprobe {

std::string_view to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::length: return "length";
        case TaskKind::substring: return "substring";
        case TaskKind::constitution: return "constitution";
    }
    return "?";
}

std::string_view to_string(Direction dir) { return dir == Direction::forward ? "forward" : "backward"; }

Direction parse_direction(std::string_view name) {
    if (name == "forward") return Direction::forward;
    if (name == "backward") return Direction::backward;
    throw ConfigError("unknown direction \"" + std::string(name) + "\" (expected forward or backward)");
}

// ---------------------------------------------------------------- folds

FoldPlan::FoldPlan(int k, std::vector<int> assignments) : k_(k), assignments_(std::move(assignments)) {
    if (k_ < 2) throw ValidationError("k must be at least 2");
    for (int a : assignments_) {
        if (a < 0 || a >= k_) throw ValidationError("fold assignment out of range");
    }
}

std::vector<std::size_t> FoldPlan::fold_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k_), 0);
    for (int a : assignments_) ++sizes[static_cast<std::size_t>(a)];
    return sizes;
}

std::vector<std::size_t> FoldPlan::members(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments_.size(); ++i) {
        if (assignments_[i] == fold) out.push_back(i);
    }
    return out;
}

FoldPlan make_folds(const EmbeddingTable& table, int k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("k must be at least 2, got " + std::to_string(k));
    if (static_cast<std::size_t>(k) > table.size()) {
        throw ValidationError("k=" + std::to_string(k) + " exceeds vocabulary size " + std::to_string(table.size()));
    }
    std::vector<std::size_t> order(table.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span(order));
    std::vector<int> assignments(table.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        assignments[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
    }
    return FoldPlan(k, std::move(assignments));
}

std::vector<ProbeExample> training_split(const ProbeDataset& data, const FoldPlan& folds, int fold) {
    std::vector<ProbeExample> out;
    for (const auto& ex : data.examples) {
        if (folds.fold_of(ex.token) != fold) out.push_back(ex);
    }
    return out;
}

std::vector<ProbeExample> test_split(const ProbeDataset& data, const FoldPlan& folds, int fold) {
    std::vector<ProbeExample> out;
    for (const auto& ex : data.examples) {
        if (folds.fold_of(ex.token) == fold) out.push_back(ex);
    }
    return out;
}

// ---------------------------------------------------------------- length

ProbeDataset build_length_dataset(const EmbeddingTable& table) {
    ProbeDataset data;
    data.task = TaskKind::length;
    data.examples.reserve(table.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
        data.examples.push_back({i, std::nullopt, static_cast<int>(table.token(i).length())});
    }
    return data;
}

// ---------------------------------------------------------------- substring

bool is_substring(std::u32string_view part, std::u32string_view whole) {
    return whole.find(part) != std::u32string_view::npos;
}

namespace {

using PairKey = std::uint64_t;

PairKey pair_key(std::size_t sub, std::size_t word, std::size_t n) {
    return static_cast<PairKey>(sub) * n + static_cast<PairKey>(word);
}

// Every (t, w) with t a strictly shorter contiguous substring of w, ordered by (w, t).
std::vector<std::pair<std::size_t, std::size_t>> all_positive_pairs(const EmbeddingTable& table) {
    std::unordered_map<std::u32string, std::vector<std::size_t>> by_surface;
    std::vector<bool> length_present;
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& chars = table.token(i).chars;
        by_surface[chars].push_back(i);
        if (chars.size() >= length_present.size()) length_present.resize(chars.size() + 1, false);
        length_present[chars.size()] = true;
    }
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<std::size_t> subs;
    for (std::size_t w = 0; w < table.size(); ++w) {
        const std::u32string_view chars = table.token(w).chars;
        subs.clear();
        for (std::size_t len = 1; len < chars.size(); ++len) {
            if (len >= length_present.size() || !length_present[len]) continue;
            for (std::size_t start = 0; start + len <= chars.size(); ++start) {
                auto it = by_surface.find(std::u32string(chars.substr(start, len)));
                if (it == by_surface.end()) continue;
                subs.insert(subs.end(), it->second.begin(), it->second.end());
            }
        }
        std::sort(subs.begin(), subs.end());
        subs.erase(std::unique(subs.begin(), subs.end()), subs.end());
        for (std::size_t t : subs) pairs.emplace_back(t, w);
    }
    return pairs;
}

// Number of (t, w) pairs drawn from `members` with len(t) < len(w).
std::size_t count_candidates(const EmbeddingTable& table, const std::vector<std::size_t>& members) {
    std::vector<std::size_t> lengths;
    lengths.reserve(members.size());
    for (std::size_t m : members) lengths.push_back(table.token(m).length());
    std::sort(lengths.begin(), lengths.end());
    std::size_t total = 0;
    for (std::size_t len : lengths) {
        total += static_cast<std::size_t>(std::lower_bound(lengths.begin(), lengths.end(), len) - lengths.begin());
    }
    return total;
}

std::vector<ProbeExample> sample_negatives(const EmbeddingTable& table, const std::vector<std::size_t>& members,
                                           const std::unordered_set<PairKey>& positives, std::size_t quota,
                                           std::size_t available, Rng& rng) {
    const std::size_t n = table.size();
    std::vector<ProbeExample> out;
    out.reserve(quota);
    if (quota == 0) return out;

    if (quota * 2 >= available) {
        // Dense regime: enumerate, then draw without replacement.
        std::vector<ProbeExample> all;
        all.reserve(available);
        for (std::size_t w : members) {
            for (std::size_t t : members) {
                if (table.token(t).length() >= table.token(w).length()) continue;
                if (positives.contains(pair_key(t, w, n))) continue;
                all.push_back({w, t, 0});
            }
        }
        for (std::size_t i = 0; i < quota; ++i) {
            std::swap(all[i], all[i + rng.index(all.size() - i)]);
            out.push_back(all[i]);
        }
        return out;
    }

    std::unordered_set<PairKey> chosen;
    chosen.reserve(quota * 2);
    while (out.size() < quota) {
        const std::size_t t = members[rng.index(members.size())];
        const std::size_t w = members[rng.index(members.size())];
        if (table.token(t).length() >= table.token(w).length()) continue;
        const PairKey key = pair_key(t, w, n);
        if (positives.contains(key) || !chosen.insert(key).second) continue;
        out.push_back({w, t, 0});
    }
    return out;
}

// All candidate pairs of the test split, or a uniform subsample of `cap` of them.
std::vector<ProbeExample> eval_pairs(const EmbeddingTable& table, const std::vector<std::size_t>& members,
                                     std::optional<std::size_t> cap, Rng& rng, std::size_t& total) {
    std::vector<std::size_t> by_length = members;
    std::stable_sort(by_length.begin(), by_length.end(), [&](std::size_t a, std::size_t b) {
        return table.token(a).length() < table.token(b).length();
    });
    std::vector<std::size_t> lengths;
    for (std::size_t m : by_length) lengths.push_back(table.token(m).length());

    // Word `members[j]` owns candidate indices [offset[j], offset[j+1]); its
    // candidates are the prefix of `by_length` with strictly smaller length.
    std::vector<std::size_t> prefix(members.size());
    std::vector<std::size_t> offset(members.size() + 1, 0);
    for (std::size_t j = 0; j < members.size(); ++j) {
        const auto len = table.token(members[j]).length();
        prefix[j] = static_cast<std::size_t>(std::lower_bound(lengths.begin(), lengths.end(), len) - lengths.begin());
        offset[j + 1] = offset[j] + prefix[j];
    }
    total = offset.back();

    auto make = [&](std::size_t j, std::size_t r) {
        const std::size_t w = members[j];
        const std::size_t t = by_length[r];
        return ProbeExample{w, t, is_substring(table.token(t).chars, table.token(w).chars) ? 1 : 0};
    };

    std::vector<ProbeExample> out;
    if (!cap || total <= *cap) {
        out.reserve(total);
        for (std::size_t j = 0; j < members.size(); ++j) {
            for (std::size_t r = 0; r < prefix[j]; ++r) out.push_back(make(j, r));
        }
        return out;
    }

    // Floyd's algorithm: uniform subset of size cap from [0, total).
    std::unordered_set<std::size_t> picked;
    picked.reserve(*cap * 2);
    for (std::size_t j = total - *cap; j < total; ++j) {
        const std::size_t r = rng.index(j + 1);
        if (!picked.insert(r).second) picked.insert(j);
    }
    std::vector<std::size_t> indices(picked.begin(), picked.end());
    std::sort(indices.begin(), indices.end());
    out.reserve(indices.size());
    std::size_t j = 0;
    for (std::size_t idx : indices) {
        while (offset[j + 1] <= idx) ++j;
        out.push_back(make(j, idx - offset[j]));
    }
    return out;
}

}  // namespace

SubstringSplits build_substring_dataset(const EmbeddingTable& table, const FoldPlan& folds,
                                        const SamplingConfig& sampling) {
    if (folds.assignments().size() != table.size()) throw ValidationError("fold plan does not match table");
    if (sampling.negative_ratio < 0.0 || !std::isfinite(sampling.negative_ratio)) {
        throw ValidationError("negative_ratio must be a non-negative number");
    }
    {
        std::unordered_set<std::size_t> lengths;
        for (const auto& t : table.tokens()) lengths.insert(t.length());
        if (lengths.size() < 2) throw ValidationError("substring task needs tokens of at least two distinct lengths");
    }

    const std::size_t n = table.size();
    const auto positives = all_positive_pairs(table);

    SubstringSplits splits;
    splits.max_eval_pairs = sampling.max_eval_pairs;
    for (int f = 0; f < folds.k(); ++f) {
        SubstringFold fold;
        fold.train.task = fold.eval.task = TaskKind::substring;

        std::vector<std::size_t> train_members, test_members;
        for (std::size_t i = 0; i < n; ++i) (folds.fold_of(i) == f ? test_members : train_members).push_back(i);

        std::unordered_set<PairKey> train_positive_keys;
        for (const auto& [t, w] : positives) {
            if (folds.fold_of(t) != f && folds.fold_of(w) != f) {
                fold.train.examples.push_back({w, t, 1});
                train_positive_keys.insert(pair_key(t, w, n));
            }
        }
        fold.train_positives = fold.train.examples.size();
        fold.skipped = fold.train_positives == 0;

        const std::size_t available = count_candidates(table, train_members) - fold.train_positives;
        const auto quota = std::min<std::size_t>(
            available, static_cast<std::size_t>(std::llround(sampling.negative_ratio *
                                                             static_cast<double>(fold.train_positives))));
        Rng neg_rng(derive_seed(sampling.seed, "substring-negatives", static_cast<std::uint64_t>(f)));
        auto negatives = sample_negatives(table, train_members, train_positive_keys, quota, available, neg_rng);
        fold.train.examples.insert(fold.train.examples.end(), negatives.begin(), negatives.end());

        Rng eval_rng(derive_seed(sampling.seed, "substring-eval", static_cast<std::uint64_t>(f)));
        fold.eval.examples = eval_pairs(table, test_members, sampling.max_eval_pairs, eval_rng, fold.eval_candidates);
        splits.folds.push_back(std::move(fold));
    }
    return splits;
}

// ---------------------------------------------------------------- constitution

ProbeDataset build_constitution_dataset(const EmbeddingTable& table, const CharSubset& chars, int position,
                                        Direction direction) {
    if (position < 1) throw ValidationError("character position must be >= 1, got " + std::to_string(position));
    ProbeDataset data;
    data.task = TaskKind::constitution;
    data.position = position;
    data.direction = direction;
    const auto n = static_cast<std::size_t>(position);
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& surface = table.token(i).chars;
        if (surface.size() < n) {
            ++data.dropped_too_short;
            continue;
        }
        const char32_t target = direction == Direction::forward ? surface[n - 1] : surface[surface.size() - n];
        auto idx = chars.find(target);
        if (!idx) {
            ++data.dropped_char_absent;
            continue;
        }
        data.examples.push_back({i, std::nullopt, static_cast<int>(*idx)});
    }
    if (data.empty()) {
        throw ValidationError("constitution dataset for N=" + std::to_string(position) + " " +
                              std::string(to_string(direction)) + " is empty");
    }
    return data;
}

void export_dataset_jsonl(const ProbeDataset& data, const EmbeddingTable& table, const CharSubset* chars,
                          const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& ex : data.examples) {
        nlohmann::json obj;
        obj["w"] = table.token(ex.token).raw;
        if (ex.other) obj["t"] = table.token(*ex.other).raw;
        switch (data.task) {
            case TaskKind::length: obj["label"] = ex.label; break;
            case TaskKind::substring: obj["label"] = ex.label == 1; break;
            case TaskKind::constitution:
                if (!chars) throw ValidationError("constitution export needs the character subset");
                obj["label"] = utf8::encode(chars->entries().at(static_cast<std::size_t>(ex.label)).ch);
                break;
        }
        out << obj.dump() << '\n';
    }
}

}  // namespace surfprobe
