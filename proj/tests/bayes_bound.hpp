#pragma once

// Best achievable substring F1 when a probe sees only n-gram count vectors.
//
// Strings with equal n-gram bags (n <= 3 includes unigrams, so they are
// permutations of each other) are indistinguishable. For each candidate pair
// (w, t) of a subsample, the posterior P(t in w | bag(w), bag(t)) is the
// fraction of substring pairs over all strings sharing those bags, found by
// enumerating permutations. Predicting the majority label and accumulating
// expected confusion counts gives the optimal weighted F1.

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

namespace surfprobe::testing {

inline std::vector<std::size_t> ngram_bag(const std::u32string& s, const std::u32string& alphabet, int n_max) {
    std::vector<std::size_t> codes;
    const std::size_t a = alphabet.size();
    std::size_t offset = 0, block = 1;
    for (int n = 1; n <= n_max; ++n) {
        block *= a;
        for (std::size_t start = 0; start + static_cast<std::size_t>(n) <= s.size(); ++start) {
            std::size_t code = 0;
            for (int k = 0; k < n; ++k) code = code * a + alphabet.find(s[start + static_cast<std::size_t>(k)]);
            codes.push_back(offset + code);
        }
        offset += block;
    }
    std::sort(codes.begin(), codes.end());
    return codes;
}

// All strings with the same n-gram bag as `s`.
inline std::vector<std::u32string> bag_class(const std::u32string& s, const std::u32string& alphabet, int n_max) {
    const auto target = ngram_bag(s, alphabet, n_max);
    std::u32string perm = s;
    std::sort(perm.begin(), perm.end());
    std::vector<std::u32string> out;
    do {
        if (ngram_bag(perm, alphabet, n_max) == target) out.push_back(perm);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
}

struct BayesBound {
    double weighted_f1 = 0.0;
    double pairs = 0.0;
    double ambiguous_pairs = 0.0;  // posterior strictly between 0 and 1
    std::size_t largest_class = 0;
};

inline BayesBound substring_bayes_bound(const std::vector<std::u32string>& sample, const std::u32string& alphabet,
                                        int n_max) {
    std::vector<std::vector<std::u32string>> classes;
    BayesBound bound;
    for (const auto& s : sample) {
        classes.push_back(bag_class(s, alphabet, n_max));
        bound.largest_class = std::max(bound.largest_class, classes.back().size());
    }
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t wi = 0; wi < sample.size(); ++wi) {
        for (std::size_t ti = 0; ti < sample.size(); ++ti) {
            if (sample[ti].size() >= sample[wi].size()) continue;
            double hits = 0, total = 0;
            for (const auto& w : classes[wi]) {
                for (const auto& t : classes[ti]) {
                    hits += w.find(t) != std::u32string::npos;
                    total += 1;
                }
            }
            const double p = hits / total;
            bound.pairs += 1;
            bound.ambiguous_pairs += p > 0.0 && p < 1.0;
            if (p > 0.5) {
                tp += p;
                fp += 1 - p;
            } else {
                fn += p;
                tn += 1 - p;
            }
        }
    }
    auto f1 = [](double tp_, double fp_, double fn_) {
        return tp_ > 0 ? 2 * tp_ / (2 * tp_ + fp_ + fn_) : 0.0;
    };
    const double support_pos = tp + fn, support_neg = tn + fp;
    bound.weighted_f1 = (support_pos * f1(tp, fp, fn) + support_neg * f1(tn, fn, fp)) / (support_pos + support_neg);
    return bound;
}

}  // namespace surfprobe::testing
