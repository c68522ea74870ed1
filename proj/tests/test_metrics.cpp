#include "surfprobe/errors.hpp"
#include "surfprobe/metrics.hpp"
#include "surfprobe/rng.hpp"
#include "metric_oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <vector>

using namespace surfprobe;
namespace oracle = surfprobe::testing;

TEST_CASE("mse") {
    const std::vector<double> a{1, 3}, b{2, 2};
    CHECK(mse(a, a) == 0.0);
    CHECK(mse(a, b) == 1.0);
    CHECK_THROWS_AS(mse(std::vector<double>{}, std::vector<double>{}), ValidationError);
    CHECK_THROWS_AS(mse(a, std::vector<double>{1}), ValidationError);
}

TEST_CASE("round_to_class") {
    CHECK(round_to_class(3.4) == 3);
    CHECK(round_to_class(6.5) == 7);
    CHECK(round_to_class(2.5) == 3);
    CHECK(round_to_class(0.2) == 1);
    CHECK(round_to_class(-4.0) == 1);
    CHECK(round_to_class(1.49999) == 1);
}

TEST_CASE("weighted_f1 hand cases") {
    const std::vector<int> y{1, 2, 3};
    CHECK(weighted_f1(y, y) == 1.0);
    // A=0, B=1: F1_A = 2/3 (support 1), F1_B = 2/3 (support 2).
    CHECK(weighted_f1(std::vector<int>{0, 0, 1}, std::vector<int>{0, 1, 1}) == doctest::Approx(2.0 / 3.0));
    // Everything predicted as one class on balanced binary labels: 0.5 * 2/3.
    CHECK(weighted_f1(std::vector<int>{1, 1, 1, 1}, std::vector<int>{0, 1, 0, 1}) == doctest::Approx(1.0 / 3.0));
    // A predicted class absent from the labels adds nothing but costs precision elsewhere.
    CHECK(weighted_f1(std::vector<int>{5, 5}, std::vector<int>{1, 1}) == 0.0);
    CHECK_THROWS_AS(weighted_f1(std::vector<int>{}, std::vector<int>{}), ValidationError);
    CHECK_THROWS_AS(weighted_f1(std::vector<int>{1}, std::vector<int>{1, 2}), ValidationError);
}

TEST_CASE("accuracy") {
    CHECK(accuracy(std::vector<int>{1, 2}, std::vector<int>{1, 2}) == 1.0);
    CHECK(accuracy(std::vector<int>{1, 2}, std::vector<int>{2, 1}) == 0.0);
    CHECK(accuracy(std::vector<int>{1, 2, 3, 4}, std::vector<int>{1, 2, 3, 0}) == 0.75);
}

TEST_CASE("class support sums to the label count") {
    const std::vector<int> y{3, 1, 3, 3, 2};
    const auto s = class_support(y);
    CHECK(s.at(3) == 3);
    CHECK(s.at(1) == 1);
    std::size_t total = 0;
    for (const auto& [c, n] : s) total += n;
    CHECK(total == y.size());
}

TEST_CASE("metrics agree with brute force, bounds and permutation invariance") {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const auto n = 1 + rng.index(60);
        const auto k = 1 + rng.index(6);
        std::vector<int> p(n), y(n);
        std::vector<double> pr(n), yr(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = static_cast<int>(rng.index(k));
            y[i] = static_cast<int>(rng.index(k));
            pr[i] = rng.uniform(-10, 10);
            yr[i] = rng.uniform(-10, 10);
        }
        const double f1 = weighted_f1(p, y);
        CHECK(std::abs(f1 - oracle::weighted_f1_oracle(p, y)) <= 1e-12);
        CHECK(std::abs(accuracy(p, y) - oracle::accuracy_oracle(p, y)) <= 1e-12);
        CHECK(std::abs(mse(pr, yr) - oracle::mse_oracle(pr, yr)) <= 1e-12 * std::max(1.0, oracle::mse_oracle(pr, yr)));
        CHECK(f1 >= 0.0);
        CHECK(f1 <= 1.0);

        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        rng.shuffle(std::span(perm));
        std::vector<int> pp(n), yp(n);
        for (std::size_t i = 0; i < n; ++i) pp[i] = p[perm[i]], yp[i] = y[perm[i]];
        CHECK(std::abs(weighted_f1(pp, yp) - f1) <= 1e-12);
    }
}

TEST_CASE("single class present: weighted F1 is plain F1") {
    CHECK(weighted_f1(std::vector<int>{4, 4, 4}, std::vector<int>{4, 4, 4}) == 1.0);
}
