#pragma once

#include "surfprobe/embedding_store.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace surfprobe {

// positional_onehot: one-hot of the character at each position 1..max_length
//   (zeros past the end), then length / max_length.
// char_bag: counts of every character n-gram with n <= ngram_max, ordered by
//   n, then lexicographically by alphabet position.
// gaussian: i.i.d. N(0, sigma^2) noise of gaussian_dim components.
enum class Scheme { positional_onehot, char_bag, gaussian };

std::string_view to_string(Scheme scheme);

struct SyntheticSpec {
    std::u32string alphabet;
    std::size_t vocab_size = 0;
    std::size_t min_length = 1;
    std::size_t max_length = 10;
    std::vector<double> length_weights;  // one per length in [min, max]; empty means uniform
    Scheme scheme = Scheme::positional_onehot;
    int ngram_max = 3;
    double sigma = 1.0;
    std::size_t gaussian_dim = 64;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t feature_dim() const;
};

// Keys: alphabet (string or list of single characters), vocab_size,
// length {min, max, weights?}, scheme {kind, ngram_max?, sigma?, dim?}, seed.
// Unknown keys are rejected.
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& spec);

// Unique strings, deterministic per seed. Lengths are drawn by weight among
// lengths that still have unused strings.
std::vector<std::u32string> generate_strings(const SyntheticSpec& spec);

std::vector<double> embed_string(const SyntheticSpec& spec, std::u32string_view s);

EmbeddingTable generate(const SyntheticSpec& spec);

// Same strings, different embedding scheme (oracle/floor pairs share a vocabulary).
EmbeddingTable generate_with_strings(const SyntheticSpec& spec, const std::vector<std::u32string>& strings);

}  // namespace surfprobe
