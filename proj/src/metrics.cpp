#include "surfprobe/metrics.hpp"

#include "surfprobe/errors.hpp"

#include <cmath>
#include <string>

namespace surfprobe {

namespace {

void check_sizes(std::size_t a, std::size_t b) {
    if (a != b) throw ValidationError("prediction/label length mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
    if (a == 0) throw ValidationError("metric over an empty set");
}

}  // namespace

double mse(std::span<const double> preds, std::span<const double> labels) {
    check_sizes(preds.size(), labels.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double d = preds[i] - labels[i];
        sum += d * d;
    }
    return sum / static_cast<double>(preds.size());
}

int round_to_class(double pred) {
    if (!std::isfinite(pred)) throw ValidationError("cannot round a non-finite prediction");
    const double r = std::round(pred);
    if (r < 1.0) return 1;
    if (r > 1e9) return 1'000'000'000;
    return static_cast<int>(r);
}

double weighted_f1(std::span<const int> preds, std::span<const int> labels) {
    check_sizes(preds.size(), labels.size());
    struct Counts {
        std::size_t tp = 0, predicted = 0, support = 0;
    };
    std::map<int, Counts> counts;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        ++counts[preds[i]].predicted;
        ++counts[labels[i]].support;
        if (preds[i] == labels[i]) ++counts[labels[i]].tp;
    }
    double total = 0.0;
    for (const auto& [cls, c] : counts) {
        if (c.support == 0 || c.tp == 0) continue;  // zero weight or zero F1
        const double precision = static_cast<double>(c.tp) / static_cast<double>(c.predicted);
        const double recall = static_cast<double>(c.tp) / static_cast<double>(c.support);
        const double f1 = 2.0 * precision * recall / (precision + recall);
        total += static_cast<double>(c.support) * f1;
    }
    return total / static_cast<double>(labels.size());
}

double accuracy(std::span<const int> preds, std::span<const int> labels) {
    check_sizes(preds.size(), labels.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

std::map<int, std::size_t> class_support(std::span<const int> labels) {
    std::map<int, std::size_t> support;
    for (int y : labels) ++support[y];
    return support;
}

}  // namespace surfprobe
