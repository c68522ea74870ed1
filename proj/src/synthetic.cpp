#include "surfprobe/synthetic.hpp"

#include "surfprobe/errors.hpp"
#include "json_util.hpp"
#include "surfprobe/rng.hpp"
#include "surfprobe/utf8.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_set>

namespace surfprobe {

namespace {

constexpr std::size_t kMaxFeatures = 1'000'000;

// alphabet^len, saturating.
std::size_t capacity(std::size_t alphabet, std::size_t len) {
    std::size_t c = 1;
    for (std::size_t i = 0; i < len; ++i) {
        if (c > std::numeric_limits<std::size_t>::max() / alphabet) return std::numeric_limits<std::size_t>::max();
        c *= alphabet;
    }
    return c;
}

}  // namespace

std::string_view to_string(Scheme scheme) {
    switch (scheme) {
        case Scheme::positional_onehot: return "positional_onehot";
        case Scheme::char_bag: return "char_bag";
        case Scheme::gaussian: return "gaussian";
    }
    return "?";
}

void SyntheticSpec::validate() const {
    if (alphabet.empty()) throw ValidationError("alphabet must not be empty");
    if (std::set<char32_t>(alphabet.begin(), alphabet.end()).size() != alphabet.size()) {
        throw ValidationError("alphabet contains duplicate characters");
    }
    if (min_length < 1) throw ValidationError("minimum length must be >= 1");
    if (max_length < min_length) throw ValidationError("maximum length is below minimum length");
    if (!length_weights.empty()) {
        if (length_weights.size() != max_length - min_length + 1) {
            throw ValidationError("need one length weight per length in [min, max]");
        }
        double total = 0.0;
        for (double w : length_weights) {
            if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("length weights must be finite and >= 0");
            total += w;
        }
        if (total <= 0.0) throw ValidationError("length weights sum to zero");
    }
    if (vocab_size == 0) throw ValidationError("vocab_size must be positive");
    std::size_t available = 0;
    for (std::size_t len = min_length; len <= max_length; ++len) {
        const double w = length_weights.empty() ? 1.0 : length_weights[len - min_length];
        if (w <= 0.0) continue;
        const auto cap = capacity(alphabet.size(), len);
        available = cap > std::numeric_limits<std::size_t>::max() - available ? std::numeric_limits<std::size_t>::max()
                                                                               : available + cap;
    }
    if (vocab_size > available) {
        throw ValidationError("vocab_size " + std::to_string(vocab_size) + " exceeds the " +
                              std::to_string(available) + " distinct strings available");
    }
    if (scheme == Scheme::char_bag && ngram_max < 1) throw ValidationError("ngram_max must be >= 1");
    if (scheme == Scheme::gaussian) {
        if (gaussian_dim == 0) throw ValidationError("gaussian dim must be positive");
        if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError("sigma must be positive");
    }
    if (feature_dim() > kMaxFeatures) {
        throw ValidationError("embedding dimension " + std::to_string(feature_dim()) + " is too large");
    }
}

std::size_t SyntheticSpec::feature_dim() const {
    switch (scheme) {
        case Scheme::positional_onehot: return max_length * alphabet.size() + 1;
        case Scheme::char_bag: {
            std::size_t d = 0;
            for (int n = 1; n <= ngram_max; ++n) {
                d += capacity(alphabet.size(), static_cast<std::size_t>(n));
                if (d > kMaxFeatures) return std::numeric_limits<std::size_t>::max();
            }
            return d;
        }
        case Scheme::gaussian: return gaussian_dim;
    }
    return 0;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, {"alphabet", "vocab_size", "length", "scheme", "seed"}, "synthetic spec");
    SyntheticSpec spec;
    try {
        const auto& a = j.at("alphabet");
        if (a.is_string()) {
            spec.alphabet = utf8::decode(a.get<std::string>());
        } else {
            for (const auto& c : a) {
                auto cps = utf8::decode(c.get<std::string>());
                if (cps.size() != 1) throw ConfigError("alphabet entries must be single characters");
                spec.alphabet += cps;
            }
        }
        spec.vocab_size = j.at("vocab_size").get<std::size_t>();
        if (j.contains("length")) {
            const auto& len = j["length"];
            detail::reject_unknown_keys(len, {"min", "max", "weights"}, "length");
            spec.min_length = len.value("min", spec.min_length);
            spec.max_length = len.value("max", spec.max_length);
            if (len.contains("weights")) spec.length_weights = len["weights"].get<std::vector<double>>();
        }
        const auto& s = j.at("scheme");
        detail::reject_unknown_keys(s, {"kind", "ngram_max", "sigma", "dim"}, "scheme");
        const auto kind = s.at("kind").get<std::string>();
        if (kind == "positional_onehot") {
            spec.scheme = Scheme::positional_onehot;
        } else if (kind == "char_bag") {
            spec.scheme = Scheme::char_bag;
        } else if (kind == "gaussian") {
            spec.scheme = Scheme::gaussian;
        } else {
            throw ConfigError("unknown scheme \"" + kind + "\"");
        }
        spec.ngram_max = s.value("ngram_max", spec.ngram_max);
        spec.sigma = s.value("sigma", spec.sigma);
        spec.gaussian_dim = s.value("dim", spec.gaussian_dim);
        spec.seed = j.value("seed", spec.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synthetic spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

nlohmann::json to_json(const SyntheticSpec& spec) {
    nlohmann::json j;
    j["alphabet"] = utf8::encode(spec.alphabet);
    j["vocab_size"] = spec.vocab_size;
    j["length"] = {{"min", spec.min_length}, {"max", spec.max_length}};
    if (!spec.length_weights.empty()) j["length"]["weights"] = spec.length_weights;
    j["scheme"] = {{"kind", std::string(to_string(spec.scheme))}};
    if (spec.scheme == Scheme::char_bag) j["scheme"]["ngram_max"] = spec.ngram_max;
    if (spec.scheme == Scheme::gaussian) {
        j["scheme"]["sigma"] = spec.sigma;
        j["scheme"]["dim"] = spec.gaussian_dim;
    }
    j["seed"] = spec.seed;
    return j;
}

std::vector<std::u32string> generate_strings(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t span = spec.max_length - spec.min_length + 1;
    std::vector<double> weights(span, 1.0);
    if (!spec.length_weights.empty()) weights = spec.length_weights;
    std::vector<std::size_t> used(span, 0);
    std::vector<std::size_t> caps(span);
    for (std::size_t i = 0; i < span; ++i) caps[i] = capacity(spec.alphabet.size(), spec.min_length + i);

    Rng rng(derive_seed(spec.seed, "strings"));
    std::unordered_set<std::u32string> seen;
    std::vector<std::u32string> out;
    out.reserve(spec.vocab_size);
    std::u32string s;
    while (out.size() < spec.vocab_size) {
        double total = 0.0;
        for (std::size_t i = 0; i < span; ++i) total += used[i] < caps[i] ? weights[i] : 0.0;
        double u = rng.uniform() * total;
        std::size_t pick = span;
        for (std::size_t i = 0; i < span; ++i) {
            if (used[i] >= caps[i] || weights[i] <= 0.0) continue;
            pick = i;
            if (u < weights[i]) break;
            u -= weights[i];
        }
        const std::size_t len = spec.min_length + pick;
        s.resize(len);
        for (auto& c : s) c = spec.alphabet[rng.index(spec.alphabet.size())];
        if (!seen.insert(s).second) continue;
        ++used[pick];
        out.push_back(s);
    }
    return out;
}

std::vector<double> embed_string(const SyntheticSpec& spec, std::u32string_view s) {
    const std::size_t a = spec.alphabet.size();
    auto index_of = [&](char32_t c) {
        const auto pos = spec.alphabet.find(c);
        if (pos == std::u32string::npos) throw ValidationError("character outside the alphabet");
        return pos;
    };
    std::vector<double> v(spec.feature_dim(), 0.0);
    switch (spec.scheme) {
        case Scheme::positional_onehot:
            if (s.size() > spec.max_length) throw ValidationError("string longer than max_length");
            for (std::size_t p = 0; p < s.size(); ++p) v[p * a + index_of(s[p])] = 1.0;
            v.back() = static_cast<double>(s.size()) / static_cast<double>(spec.max_length);
            break;
        case Scheme::char_bag: {
            std::size_t offset = 0;
            for (std::size_t n = 1; n <= static_cast<std::size_t>(spec.ngram_max); ++n) {
                for (std::size_t start = 0; start + n <= s.size(); ++start) {
                    std::size_t code = 0;
                    for (std::size_t k = 0; k < n; ++k) code = code * a + index_of(s[start + k]);
                    v[offset + code] += 1.0;
                }
                offset += capacity(a, n);
            }
            break;
        }
        case Scheme::gaussian:
            throw ValidationError("gaussian embeddings are drawn per vocabulary, not per string");
    }
    return v;
}

EmbeddingTable generate_with_strings(const SyntheticSpec& spec, const std::vector<std::u32string>& strings) {
    spec.validate();
    const std::size_t dim = spec.feature_dim();
    RowMatrix m(static_cast<Eigen::Index>(strings.size()), static_cast<Eigen::Index>(dim));
    std::vector<Token> tokens;
    tokens.reserve(strings.size());
    Rng noise(derive_seed(spec.seed, "gaussian"));
    for (std::size_t i = 0; i < strings.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        if (spec.scheme == Scheme::gaussian) {
            for (std::size_t d = 0; d < dim; ++d) m(r, static_cast<Eigen::Index>(d)) = spec.sigma * noise.normal();
        } else {
            const auto v = embed_string(spec, strings[i]);
            std::copy(v.begin(), v.end(), m.row(r).data());
        }
        Token t;
        t.raw = t.surface = utf8::encode(strings[i]);
        t.chars = strings[i];
        t.word_initial = true;
        tokens.push_back(std::move(t));
    }
    return EmbeddingTable(std::move(tokens), std::move(m));
}

EmbeddingTable generate(const SyntheticSpec& spec) { return generate_with_strings(spec, generate_strings(spec)); }

}  // namespace surfprobe
