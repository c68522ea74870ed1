#include "surfprobe/errors.hpp"
#include "surfprobe/rng.hpp"
#include "surfprobe/synthetic.hpp"
#include "surfprobe/utf8.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

using namespace surfprobe;

namespace {

SyntheticSpec onehot_spec(std::u32string alphabet, std::size_t max_len, std::size_t n) {
    SyntheticSpec s;
    s.alphabet = std::move(alphabet);
    s.max_length = max_len;
    s.vocab_size = n;
    s.scheme = Scheme::positional_onehot;
    return s;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("positional one-hot of \"ab\"") {
    const auto spec = onehot_spec(U"ab", 2, 1);
    const auto v = embed_string(spec, U"ab");
    CHECK(v == std::vector<double>{1, 0, 0, 1, 1.0});
    CHECK(embed_string(spec, U"b") == std::vector<double>{0, 1, 0, 0, 0.5});
}

TEST_CASE("positional one-hot decodes back to the string") {
    auto spec = onehot_spec(U"xyzw", 6, 300);
    spec.seed = 4;
    const auto strings = generate_strings(spec);
    const auto t = generate_with_strings(spec, strings);
    std::set<std::vector<double>> distinct;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const auto row = t.row(i);
        std::u32string decoded;
        for (std::size_t p = 0; p < spec.max_length; ++p) {
            for (std::size_t c = 0; c < spec.alphabet.size(); ++c) {
                if (row(static_cast<Eigen::Index>(p * spec.alphabet.size() + c)) == 1.0) decoded += spec.alphabet[c];
            }
        }
        CHECK(decoded == strings[i]);
        CHECK(row(row.size() - 1) == static_cast<double>(strings[i].size()) / 6.0);
        distinct.insert(std::vector<double>(row.begin(), row.end()));
    }
    CHECK(distinct.size() == t.size());
}

TEST_CASE("char bag counts") {
    SyntheticSpec spec;
    spec.alphabet = U"ab";
    spec.vocab_size = 1;
    spec.scheme = Scheme::char_bag;
    spec.ngram_max = 1;
    CHECK(embed_string(spec, U"aab") == std::vector<double>{2, 1});

    spec.ngram_max = 2;
    // Order: a, b, aa, ab, ba, bb.
    CHECK(embed_string(spec, U"aab") == std::vector<double>{2, 1, 1, 1, 0, 0});
    CHECK(spec.feature_dim() == 6);
    spec.alphabet = U"abcdefghijklmnopqrstuvwxyz";
    spec.ngram_max = 3;
    CHECK(spec.feature_dim() == 26 + 676 + 17576);
}

TEST_CASE("generated strings are unique, in range and seed-determined") {
    SyntheticSpec spec = onehot_spec(U"abcdefghijklmnopqrstuvwxyz", 10, 5000);
    spec.seed = 7;
    const auto a = generate_strings(spec);
    CHECK(a.size() == 5000);
    CHECK(std::set<std::u32string>(a.begin(), a.end()).size() == 5000);
    std::map<std::size_t, std::size_t> by_len;
    for (const auto& s : a) {
        CHECK(s.size() >= 1);
        CHECK(s.size() <= 10);
        ++by_len[s.size()];
    }
    CHECK(by_len[1] == 26);  // exhausted, remaining mass goes to other lengths
    CHECK(generate_strings(spec) == a);
    spec.seed = 8;
    CHECK_FALSE(generate_strings(spec) == a);
}

TEST_CASE("length weights") {
    SyntheticSpec spec = onehot_spec(U"abcdef", 4, 500);
    spec.min_length = 3;
    spec.length_weights = {0.0, 1.0};
    for (const auto& s : generate_strings(spec)) CHECK(s.size() == 4);
}

TEST_CASE("gaussian coordinates are uncorrelated with length") {
    SyntheticSpec spec = onehot_spec(U"abcdefghij", 10, 2000);
    spec.scheme = Scheme::gaussian;
    spec.gaussian_dim = 16;
    spec.seed = 3;
    const auto t = generate(spec);
    std::vector<double> len;
    for (const auto& tok : t.tokens()) len.push_back(static_cast<double>(tok.length()));
    for (std::size_t d = 0; d < 16; ++d) {
        std::vector<double> col;
        for (std::size_t i = 0; i < t.size(); ++i) col.push_back(t.row(i)(static_cast<Eigen::Index>(d)));
        CHECK(std::abs(pearson(col, len)) < 0.1);
    }
    CHECK(t.dim() == 16);
}

TEST_CASE("shared strings across schemes") {
    SyntheticSpec a = onehot_spec(U"abc", 5, 100);
    SyntheticSpec b = a;
    b.scheme = Scheme::gaussian;
    CHECK(generate_strings(a) == generate_strings(b));
    const auto ta = generate(a), tb = generate(b);
    for (std::size_t i = 0; i < ta.size(); ++i) CHECK(ta.token(i).raw == tb.token(i).raw);
}

TEST_CASE("normal draws have unit variance") {
    Rng rng(1);
    double s = 0, s2 = 0;
    const int n = 200'000;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        s += z;
        s2 += z * z;
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.01);
}

TEST_CASE("spec validation") {
    CHECK_THROWS_AS(generate(onehot_spec(U"", 3, 1)), ValidationError);
    CHECK_THROWS_AS(generate(onehot_spec(U"aa", 3, 1)), ValidationError);
    CHECK_THROWS_AS(generate(onehot_spec(U"ab", 2, 7)), ValidationError);  // only 2 + 4 strings exist
    CHECK_NOTHROW(generate(onehot_spec(U"ab", 2, 6)));
    auto s = onehot_spec(U"ab", 3, 2);
    s.min_length = 0;
    CHECK_THROWS_AS(generate(s), ValidationError);
    s = onehot_spec(U"ab", 3, 2);
    s.length_weights = {1.0};
    CHECK_THROWS_AS(generate(s), ValidationError);
    s = onehot_spec(U"abcdefghijklmnopqrstuvwxyz", 10, 2);
    s.scheme = Scheme::char_bag;
    s.ngram_max = 5;
    CHECK_THROWS_AS(generate(s), ValidationError);
}

TEST_CASE("spec json") {
    const auto j = nlohmann::json::parse(R"({"alphabet":"日本","vocab_size":3,"length":{"min":1,"max":2},
        "scheme":{"kind":"char_bag","ngram_max":2},"seed":9})");
    const auto spec = synthetic_spec_from_json(j);
    CHECK(spec.alphabet == U"日本");
    CHECK(spec.scheme == Scheme::char_bag);
    CHECK(spec.ngram_max == 2);
    CHECK(synthetic_spec_from_json(to_json(spec)).alphabet == spec.alphabet);

    auto bad = j;
    bad["colour"] = 1;
    CHECK_THROWS_AS(synthetic_spec_from_json(bad), ConfigError);
    bad = j;
    bad["scheme"]["kind"] = "fourier";
    CHECK_THROWS_AS(synthetic_spec_from_json(bad), ConfigError);
    bad = j;
    bad["alphabet"] = nlohmann::json::array({"ab"});
    CHECK_THROWS_AS(synthetic_spec_from_json(bad), ConfigError);
}

TEST_CASE("synthetic tables round trip through JSONL") {
    surfprobe::testing::TempDir dir;
    SyntheticSpec spec = onehot_spec(U"abc", 4, 50);
    spec.scheme = Scheme::gaussian;
    spec.gaussian_dim = 5;
    const auto t = generate(spec);
    save_jsonl(t, dir / "g.jsonl");
    const auto back = load_jsonl(dir / "g.jsonl");
    CHECK(back.vectors() == t.vectors());
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(back.token(i).raw == t.token(i).raw);
}
