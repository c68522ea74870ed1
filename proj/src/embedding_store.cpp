#include "surfprobe/embedding_store.hpp"

#include "surfprobe/errors.hpp"
#include "surfprobe/utf8.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <unordered_set>

namespace surfprobe {

std::vector<StripRule> default_strip_rules() {
    return {{"##", MarkerKind::continuation}, {"▁", MarkerKind::word_initial}};
}

std::vector<std::string> default_exclusions() {
    return {"<unk>", "<s>", "</s>", "[CLS]", "[SEP]", "[PAD]", "[MASK]"};
}

bool is_byte_fallback(std::string_view raw) {
    auto hex = [](char c) {
        return (c >= '0' && c <= '9') || (c >= 'A' && c <= 'F') || (c >= 'a' && c <= 'f');
    };
    return raw.size() == 6 && raw.starts_with("<0x") && raw.back() == '>' && hex(raw[3]) && hex(raw[4]);
}

NormalizedSurface normalize_surface(std::string_view raw, std::span<const StripRule> rules) {
    if (raw.empty()) throw ValidationError("empty token");
    NormalizedSurface out;
    std::string_view rest = raw;
    for (const auto& rule : rules) {
        if (rule.marker.empty() || !rest.starts_with(rule.marker)) continue;
        rest.remove_prefix(rule.marker.size());
        out.word_initial = rule.kind == MarkerKind::word_initial;
    }
    out.surface = std::string(rest);
    out.marker_only = rest.empty() || std::any_of(rules.begin(), rules.end(), [&](const StripRule& r) {
                          return !r.marker.empty() && rest.starts_with(r.marker);
                      });
    return out;
}

EmbeddingTable::EmbeddingTable(std::vector<Token> tokens, RowMatrix vectors, LoadStats stats)
    : tokens_(std::move(tokens)), vectors_(std::move(vectors)), stats_(stats) {
    if (vectors_.cols() < 1) throw ValidationError("embedding dimension must be positive");
    if (static_cast<std::size_t>(vectors_.rows()) != tokens_.size()) {
        throw ValidationError("row count " + std::to_string(vectors_.rows()) + " does not match " +
                              std::to_string(tokens_.size()) + " tokens");
    }
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        const auto& t = tokens_[i];
        if (t.surface.empty()) throw ValidationError("token \"" + t.raw + "\" has an empty surface");
        if (!index_.emplace(t.raw, i).second) throw ValidationError("duplicate token \"" + t.raw + "\"");
        if (!vectors_.row(static_cast<Eigen::Index>(i)).allFinite()) {
            throw ValidationError("non-finite value in vector of token \"" + t.raw + "\"");
        }
    }
}

std::optional<std::size_t> EmbeddingTable::find(std::string_view raw) const {
    auto it = index_.find(std::string(raw));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

bool EmbeddingTable::operator==(const EmbeddingTable& other) const {
    if (tokens_ != other.tokens_) return false;
    if (vectors_.rows() != other.vectors_.rows() || vectors_.cols() != other.vectors_.cols()) return false;
    // Bitwise comparison; -0.0 and 0.0 are distinct here.
    return std::equal(vectors_.data(), vectors_.data() + vectors_.size(), other.vectors_.data(),
                      [](double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; });
}

namespace {

// Accumulates admitted rows; shared by all loaders.
class TableBuilder {
public:
    explicit TableBuilder(const LoadOptions& options)
        : options_(options), excluded_(options.exclusions.begin(), options.exclusions.end()) {}

    // Returns false once max_tokens admitted rows have been collected.
    bool add(std::string raw, std::vector<double> values, std::size_t line) {
        ++stats_.rows_read;
        if (dim_ == 0) {
            if (values.empty()) throw ParseError("row has no vector components", line);
            dim_ = values.size();
        } else if (values.size() != dim_) {
            throw ValidationError("line " + std::to_string(line) + ": dimension " + std::to_string(values.size()) +
                                  " differs from " + std::to_string(dim_));
        }
        for (double v : values) {
            if (!std::isfinite(v)) {
                throw ValidationError("line " + std::to_string(line) + ": non-finite value for \"" + raw + "\"");
            }
        }
        if (!seen_.insert(raw).second) {
            throw ValidationError("line " + std::to_string(line) + ": duplicate token \"" + raw + "\"");
        }
        if (excluded_.contains(raw) || (options_.exclude_byte_fallback && is_byte_fallback(raw))) {
            ++stats_.excluded_special;
            return true;
        }
        auto norm = normalize_surface(raw, options_.strip_rules);
        if (norm.marker_only) {
            ++stats_.excluded_marker_only;
            return true;
        }
        if (options_.max_tokens && tokens_.size() >= *options_.max_tokens) {
            ++stats_.truncated;
            return false;
        }
        Token t;
        t.chars = utf8::decode(norm.surface);
        t.surface = std::move(norm.surface);
        t.word_initial = norm.word_initial;
        t.raw = std::move(raw);
        tokens_.push_back(std::move(t));
        rows_.push_back(std::move(values));
        return true;
    }

    bool full() const { return options_.max_tokens && tokens_.size() >= *options_.max_tokens; }

    EmbeddingTable finish() && {
        if (dim_ == 0) throw ValidationError("no embedding rows found");
        RowMatrix m(static_cast<Eigen::Index>(rows_.size()), static_cast<Eigen::Index>(dim_));
        for (std::size_t i = 0; i < rows_.size(); ++i) {
            std::copy(rows_[i].begin(), rows_[i].end(), m.row(static_cast<Eigen::Index>(i)).data());
        }
        return EmbeddingTable(std::move(tokens_), std::move(m), stats_);
    }

private:
    const LoadOptions& options_;
    std::unordered_set<std::string> excluded_;
    std::unordered_set<std::string> seen_;
    std::vector<Token> tokens_;
    std::vector<std::vector<double>> rows_;
    std::size_t dim_ = 0;
    LoadStats stats_;
};

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        if (i == line.size()) break;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
        out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

double parse_double(std::string_view field, std::size_t line) {
    double v = 0.0;
    const char* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, v);
    if (ec == std::errc::result_out_of_range && ptr == end) {
        // Underflow yields a subnormal or zero, overflow yields inf (rejected later).
        return std::strtod(std::string(field).c_str(), nullptr);
    }
    if (ec != std::errc() || ptr != end) throw ParseError("not a number: \"" + std::string(field) + "\"", line);
    return v;
}

bool parse_size(std::string_view field, std::size_t& out) {
    const char* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, out);
    return ec == std::errc() && ptr == end;
}

void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

EmbeddingTable make_table(std::vector<std::string> raws, std::vector<std::vector<double>> rows,
                          const LoadOptions& options) {
    if (raws.size() != rows.size()) throw ValidationError("token and row counts differ");
    TableBuilder builder(options);
    for (std::size_t i = 0; i < raws.size(); ++i) {
        if (!builder.add(std::move(raws[i]), std::move(rows[i]), i + 1)) break;
    }
    return std::move(builder).finish();
}

EmbeddingTable load_word2vec_text(const std::filesystem::path& path, const LoadOptions& options) {
    auto in = open_input(path);
    TableBuilder builder(options);
    std::string line;
    std::size_t line_no = 0;
    std::size_t expected_columns = 0;
    std::optional<std::size_t> header_count;
    std::size_t data_rows = 0;

    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        auto fields = split_fields(line);
        if (fields.empty()) continue;
        if (line_no == 1 && fields.size() == 2) {
            std::size_t count = 0, dim = 0;
            if (parse_size(fields[0], count) && parse_size(fields[1], dim)) {
                if (dim == 0) throw ParseError("header declares zero dimension", line_no);
                header_count = count;
                expected_columns = dim + 1;
                continue;
            }
        }
        if (expected_columns == 0) expected_columns = fields.size();
        if (fields.size() != expected_columns) {
            throw ParseError("expected " + std::to_string(expected_columns) + " columns, found " +
                                 std::to_string(fields.size()),
                             line_no);
        }
        if (fields.size() < 2) throw ParseError("row has no vector components", line_no);
        std::vector<double> values;
        values.reserve(fields.size() - 1);
        for (std::size_t f = 1; f < fields.size(); ++f) values.push_back(parse_double(fields[f], line_no));
        ++data_rows;
        if (!builder.add(std::string(fields[0]), std::move(values), line_no)) break;
    }
    if (header_count && !builder.full() && data_rows != *header_count) {
        throw ValidationError("header declares " + std::to_string(*header_count) + " rows but file has " +
                              std::to_string(data_rows));
    }
    return std::move(builder).finish();
}

EmbeddingTable load_jsonl(const std::filesystem::path& path, const LoadOptions& options) {
    auto in = open_input(path);
    TableBuilder builder(options);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(e.what(), line_no);
        }
        if (!obj.is_object() || !obj.contains("token") || !obj.contains("vector") || !obj["token"].is_string() ||
            !obj["vector"].is_array()) {
            throw ParseError("expected {\"token\": string, \"vector\": [numbers]}", line_no);
        }
        std::vector<double> values;
        values.reserve(obj["vector"].size());
        for (const auto& v : obj["vector"]) {
            if (!v.is_number()) throw ParseError("vector component is not a number", line_no);
            values.push_back(v.get<double>());
        }
        if (!builder.add(obj["token"].get<std::string>(), std::move(values), line_no)) break;
    }
    return std::move(builder).finish();
}

EmbeddingFormat parse_format(std::string_view name) {
    if (name == "jsonl") return EmbeddingFormat::jsonl;
    if (name == "word2vec" || name == "text") return EmbeddingFormat::word2vec;
    throw ConfigError("unknown embedding format \"" + std::string(name) + "\" (expected jsonl or word2vec)");
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, EmbeddingFormat format,
                               const LoadOptions& options) {
    return format == EmbeddingFormat::jsonl ? load_jsonl(path, options) : load_word2vec_text(path, options);
}

void save_jsonl(const EmbeddingTable& table, const std::filesystem::path& path) {
    if (table.size() == 0) throw ValidationError("refusing to save an empty embedding table");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto row = table.row(i);
        nlohmann::json obj;
        obj["token"] = table.token(i).raw;
        obj["vector"] = std::vector<double>(row.begin(), row.end());
        out << obj.dump() << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
}

std::optional<std::size_t> CharSubset::find(char32_t ch) const {
    auto it = by_char_.find(ch);
    if (it == by_char_.end()) return std::nullopt;
    return it->second;
}

Eigen::MatrixXd CharSubset::vectors() const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(entries_.size()), static_cast<Eigen::Index>(parent_->dim()));
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        m.row(static_cast<Eigen::Index>(i)) = parent_->row(entries_[i].token_id);
    }
    return m;
}

CharSubset char_subset(const EmbeddingTable& table) {
    CharSubset subset;
    subset.parent_ = &table;
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& tok = table.token(i);
        if (tok.length() != 1) continue;
        const char32_t ch = tok.chars[0];
        auto [it, inserted] = subset.by_char_.try_emplace(ch, subset.entries_.size());
        if (inserted) {
            subset.entries_.push_back({i, ch});
            continue;
        }
        // Tokens are visited in index order, so only an unmarked challenger
        // against a marked incumbent replaces it.
        auto& incumbent = subset.entries_[it->second];
        const bool incumbent_marked = table.token(incumbent.token_id).raw != table.token(incumbent.token_id).surface;
        if (incumbent_marked && tok.raw == tok.surface) incumbent.token_id = i;
    }
    if (subset.entries_.empty()) throw ValidationError("vocabulary has no single-character tokens");
    return subset;
}

}  // namespace surfprobe
