#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace surfprobe {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class MarkerKind { continuation, word_initial };

struct StripRule {
    std::string marker;
    MarkerKind kind;
};

// "##" (continuation, BERT WordPiece) and U+2581 (word-initial, SentencePiece).
std::vector<StripRule> default_strip_rules();

// Special tokens dropped at load time. Byte-fallback tokens (<0xHH>) are
// handled separately by LoadOptions::exclude_byte_fallback.
std::vector<std::string> default_exclusions();

bool is_byte_fallback(std::string_view raw);

struct LoadOptions {
    std::vector<StripRule> strip_rules = default_strip_rules();
    std::vector<std::string> exclusions = default_exclusions();
    bool exclude_byte_fallback = true;
    // Keep only the first N admitted rows (frequency-ordered files such as GloVe).
    std::optional<std::size_t> max_tokens;
};

struct NormalizedSurface {
    std::string surface;
    bool word_initial = true;
    // Nothing usable remained after stripping: empty, or still starting with a marker.
    bool marker_only = false;
};

// One pass over the rules in order; each rule removes at most one leading
// occurrence of its marker.
NormalizedSurface normalize_surface(std::string_view raw, std::span<const StripRule> rules);

struct Token {
    std::string raw;
    std::string surface;
    bool word_initial = true;
    std::u32string chars;  // surface as Unicode scalar values

    std::size_t length() const { return chars.size(); }
    bool operator==(const Token&) const = default;
};

struct LoadStats {
    std::size_t rows_read = 0;
    std::size_t excluded_special = 0;
    std::size_t excluded_marker_only = 0;
    std::size_t truncated = 0;
};

// Ordered vocabulary with one embedding row per token. Immutable once built.
class EmbeddingTable {
public:
    // Validates uniqueness of raw forms, finiteness and shape.
    EmbeddingTable(std::vector<Token> tokens, RowMatrix vectors, LoadStats stats = {});

    std::size_t size() const { return tokens_.size(); }
    std::size_t dim() const { return static_cast<std::size_t>(vectors_.cols()); }

    const std::vector<Token>& tokens() const { return tokens_; }
    const Token& token(std::size_t i) const { return tokens_.at(i); }
    const RowMatrix& vectors() const { return vectors_; }
    auto row(std::size_t i) const { return vectors_.row(static_cast<Eigen::Index>(i)); }

    std::optional<std::size_t> find(std::string_view raw) const;
    const LoadStats& stats() const { return stats_; }

    bool operator==(const EmbeddingTable& other) const;

private:
    std::vector<Token> tokens_;
    RowMatrix vectors_;
    LoadStats stats_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Builds a table from raw (token, vector) rows, applying normalization and
// exclusion. Used by every loader.
EmbeddingTable make_table(std::vector<std::string> raws, std::vector<std::vector<double>> rows,
                          const LoadOptions& options);

EmbeddingTable load_word2vec_text(const std::filesystem::path& path, const LoadOptions& options = {});
EmbeddingTable load_jsonl(const std::filesystem::path& path, const LoadOptions& options = {});

enum class EmbeddingFormat { jsonl, word2vec };
EmbeddingFormat parse_format(std::string_view name);
EmbeddingTable load_embeddings(const std::filesystem::path& path, EmbeddingFormat format,
                               const LoadOptions& options = {});

void save_jsonl(const EmbeddingTable& table, const std::filesystem::path& path);

// Single-character tokens (the tied decoder vocabulary for the constitution probe).
class CharSubset {
public:
    struct Entry {
        std::size_t token_id;
        char32_t ch;
    };

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    const EmbeddingTable& parent() const { return *parent_; }

    std::optional<std::size_t> find(char32_t ch) const;

    // Rows of the parent table for each entry, in entry order.
    Eigen::MatrixXd vectors() const;

private:
    friend CharSubset char_subset(const EmbeddingTable& table);
    const EmbeddingTable* parent_ = nullptr;
    std::vector<Entry> entries_;
    std::unordered_map<char32_t, std::size_t> by_char_;
};

// When several tokens normalize to the same character, the one whose raw
// form carries no marker wins; remaining ties go to the lowest index.
CharSubset char_subset(const EmbeddingTable& table);

}  // namespace surfprobe
