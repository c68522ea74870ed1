#include "surfprobe/embedding_store.hpp"
#include "surfprobe/errors.hpp"
#include "surfprobe/utf8.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace surfprobe;
using surfprobe::testing::table_of;
using surfprobe::testing::TempDir;
using surfprobe::testing::write_file;

TEST_CASE("utf8 decode counts scalar values") {
    CHECK(utf8::length("word") == 4);
    CHECK(utf8::length("▁W") == 2);
    CHECK(utf8::length("日本語") == 3);
    CHECK(utf8::length("😀a") == 2);
    CHECK(utf8::encode(utf8::decode("héllo 日本")) == "héllo 日本");
}

TEST_CASE("utf8 rejects malformed input") {
    CHECK_THROWS_AS(utf8::decode("\xC0\xAF"), ValidationError);          // overlong
    CHECK_THROWS_AS(utf8::decode("\xED\xA0\x80"), ValidationError);      // surrogate
    CHECK_THROWS_AS(utf8::decode("\xE6\x97"), ValidationError);          // truncated
    CHECK_THROWS_AS(utf8::decode("\x80"), ValidationError);              // stray continuation
    CHECK_THROWS_AS(utf8::decode("\xF4\x90\x80\x80"), ValidationError);  // above U+10FFFF
}

TEST_CASE("normalize_surface") {
    const auto rules = default_strip_rules();
    auto s = normalize_surface("##string", rules);
    CHECK(s.surface == "string");
    CHECK_FALSE(s.word_initial);
    CHECK_FALSE(s.marker_only);

    s = normalize_surface("▁W", rules);
    CHECK(s.surface == "W");
    CHECK(s.word_initial);

    s = normalize_surface("word", rules);
    CHECK(s.surface == "word");
    CHECK(s.word_initial);

    CHECK(normalize_surface("##", rules).marker_only);
    CHECK(normalize_surface("▁", rules).marker_only);
    // One leading occurrence per rule: what remains still starts with a marker.
    CHECK(normalize_surface("####", rules).marker_only);
    CHECK(normalize_surface("##▁", rules).marker_only);
    CHECK_THROWS_AS(normalize_surface("", rules), ValidationError);
}

TEST_CASE("word2vec text with header") {
    TempDir dir;
    write_file(dir / "v.txt", "2 3\na 1 0 0\nb 0 1 0\n");
    const auto t = load_word2vec_text(dir / "v.txt");
    CHECK(t.size() == 2);
    CHECK(t.dim() == 3);
    CHECK(t.token(1).raw == "b");
    CHECK(t.row(1)(1) == 1.0);
}

TEST_CASE("word2vec text headerless, markers and exclusions") {
    TempDir dir;
    write_file(dir / "v.txt", "##string 0.1 0.2\n<unk> 0 0\n<0x0A> 1 1\n▁Wu 3 4\n## 5 5\n");
    const auto t = load_word2vec_text(dir / "v.txt");
    REQUIRE(t.size() == 2);
    CHECK(t.token(0).raw == "##string");
    CHECK(t.token(0).surface == "string");
    CHECK_FALSE(t.token(0).word_initial);
    CHECK(t.token(0).length() == 6);
    CHECK(t.token(1).surface == "Wu");
    CHECK_FALSE(t.find("<unk>"));
    CHECK_FALSE(t.find("<0x0A>"));
    CHECK(t.stats().excluded_special == 2);
    CHECK(t.stats().excluded_marker_only == 1);
}

TEST_CASE("byte fallback detection") {
    CHECK(is_byte_fallback("<0x0A>"));
    CHECK(is_byte_fallback("<0xff>"));
    CHECK_FALSE(is_byte_fallback("<0x0G>"));
    CHECK_FALSE(is_byte_fallback("<0x0A"));
    CHECK_FALSE(is_byte_fallback("0x0A"));
}

TEST_CASE("word2vec errors") {
    TempDir dir;
    write_file(dir / "cols.txt", "a 1 2\nb 1\n");
    try {
        load_word2vec_text(dir / "cols.txt");
        FAIL("expected an error");
    } catch (const ProbeError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    write_file(dir / "nan.txt", "a 1 nan\n");
    CHECK_THROWS_AS(load_word2vec_text(dir / "nan.txt"), ValidationError);
    write_file(dir / "inf.txt", "a 1 1e400\n");
    CHECK_THROWS_AS(load_word2vec_text(dir / "inf.txt"), ValidationError);
    write_file(dir / "dup.txt", "a 1 2\na 3 4\n");
    CHECK_THROWS_AS(load_word2vec_text(dir / "dup.txt"), ValidationError);
    write_file(dir / "bad.txt", "a 1 x\n");
    CHECK_THROWS_AS(load_word2vec_text(dir / "bad.txt"), ParseError);
    CHECK_THROWS_AS(load_word2vec_text(dir / "missing.txt"), IoError);
}

TEST_CASE("jsonl load") {
    TempDir dir;
    write_file(dir / "a.jsonl", R"({"token":"word","vector":[0,1]})" "\n");
    const auto t = load_jsonl(dir / "a.jsonl");
    CHECK(t.size() == 1);
    CHECK(t.dim() == 2);

    write_file(dir / "wu.jsonl", R"({"token":"▁Wu","vector":[1]})" "\n");
    CHECK(load_jsonl(dir / "wu.jsonl").token(0).surface == "Wu");

    write_file(dir / "dims.jsonl", R"({"token":"a","vector":[0,1]})" "\n" R"({"token":"b","vector":[0,1,2]})" "\n");
    CHECK_THROWS_AS(load_jsonl(dir / "dims.jsonl"), ValidationError);

    write_file(dir / "empty.jsonl", "");
    CHECK_THROWS_AS(load_jsonl(dir / "empty.jsonl"), ValidationError);

    write_file(dir / "garbage.jsonl", "{\"token\":\"a\",\"vector\":[1]}\nnot json\n");
    try {
        load_jsonl(dir / "garbage.jsonl");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
}

TEST_CASE("max_tokens keeps the first admitted rows") {
    TempDir dir;
    write_file(dir / "v.txt", "<unk> 0\nthe 1\n, 2\nof 3\n");
    LoadOptions opt;
    opt.max_tokens = 2;
    const auto t = load_word2vec_text(dir / "v.txt", opt);
    REQUIRE(t.size() == 2);
    CHECK(t.token(0).raw == "the");
    CHECK(t.token(1).raw == ",");
}

TEST_CASE("save_jsonl round trips bit-exactly") {
    TempDir dir;
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> u(-1e3, 1e3);
    std::vector<std::string> raws{"##ab", "▁c", "d", "日本", "e\"q"};
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < raws.size(); ++i) {
        rows.push_back({u(gen), std::nextafter(0.0, 1.0), -0.0, 0.1, u(gen) * 1e-300, 1e308});
    }
    const auto t = make_table(raws, rows, LoadOptions{});
    save_jsonl(t, dir / "t.jsonl");
    const auto back = load_jsonl(dir / "t.jsonl");
    CHECK(back == t);

    const auto one = table_of({"x"});
    save_jsonl(one, dir / "one.jsonl");
    CHECK(load_jsonl(dir / "one.jsonl") == one);
}

TEST_CASE("save_jsonl rejects an empty table") {
    TempDir dir;
    const EmbeddingTable empty({}, RowMatrix(0, 2));
    CHECK_THROWS_AS(save_jsonl(empty, dir / "e.jsonl"), ValidationError);
}

TEST_CASE("admitted tokens never start with a marker and are non-empty") {
    const auto rules = default_strip_rules();
    const auto t = table_of({"##a", "▁b", "c", "##▁d", "▁##e", "f##"});
    for (const auto& tok : t.tokens()) {
        CHECK(tok.length() >= 1);
        for (const auto& r : rules) CHECK_FALSE(tok.surface.starts_with(r.marker));
    }
}

TEST_CASE("char_subset") {
    SUBCASE("single-character surfaces only") {
        const auto t = table_of({"a", "b", "ab"});
        const auto cs = char_subset(t);
        REQUIRE(cs.size() == 2);
        CHECK(cs.entries()[0].ch == U'a');
        CHECK(cs.entries()[1].ch == U'b');
        CHECK_FALSE(cs.find(U'c'));
    }
    SUBCASE("marked and unmarked forms of one character, both orders") {
        for (const auto& raws : {std::vector<std::string>{"##s", "s"}, std::vector<std::string>{"s", "##s"}}) {
            const auto t = table_of(raws);
            const auto cs = char_subset(t);
            REQUIRE(cs.size() == 1);
            CHECK(t.token(cs.entries()[0].token_id).raw == "s");
        }
    }
    SUBCASE("only marked forms: lowest index wins") {
        const auto t = table_of({"x", "▁s", "##s"});
        const auto cs = char_subset(t);
        REQUIRE(cs.find(U's'));
        CHECK(t.token(cs.entries()[*cs.find(U's')].token_id).raw == "▁s");
    }
    SUBCASE("26 letters") {
        std::vector<std::string> raws;
        for (char c = 'a'; c <= 'z'; ++c) raws.emplace_back(1, c);
        CHECK(char_subset(table_of(raws)).size() == 26);
    }
    SUBCASE("multi-byte characters count once") {
        const auto cs = char_subset(table_of({"日", "本語"}));
        CHECK(cs.size() == 1);
    }
    SUBCASE("empty result is an error") { CHECK_THROWS_AS(char_subset(table_of({"ab", "cd"})), ValidationError); }
    SUBCASE("vectors follow entry order") {
        const auto t = table_of({"q", "zz", "p"});
        const auto cs = char_subset(t);
        const auto m = cs.vectors();
        REQUIRE(m.rows() == 2);
        for (std::size_t i = 0; i < cs.size(); ++i) {
            CHECK(m.row(static_cast<Eigen::Index>(i)) == t.row(cs.entries()[i].token_id));
        }
    }
}

TEST_CASE("parse_format") {
    CHECK(parse_format("jsonl") == EmbeddingFormat::jsonl);
    CHECK(parse_format("word2vec") == EmbeddingFormat::word2vec);
    CHECK_THROWS(parse_format("bin"));
}
