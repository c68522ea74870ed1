#pragma once

#include <map>
#include <span>

namespace surfprobe {

double mse(std::span<const double> preds, std::span<const double> labels);

// Nearest integer, halves away from zero, clamped to >= 1 (no length-0 class exists).
int round_to_class(double pred);

// Sum over classes of (support / total) * F1, classes taken from labels ∪ preds.
// F1 of a class with zero precision + recall is 0.
double weighted_f1(std::span<const int> preds, std::span<const int> labels);

double accuracy(std::span<const int> preds, std::span<const int> labels);

// True-label support per class.
std::map<int, std::size_t> class_support(std::span<const int> labels);

}  // namespace surfprobe
