#pragma once

#include "surfprobe/embedding_store.hpp"
#include "surfprobe/task_builder.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace surfprobe {

// n_layers linear maps with ReLU between them: in -> hidden -> ... -> out.
struct MLPConfig {
    std::size_t in_dim = 0;
    std::size_t hidden_dim = 2096;
    std::size_t out_dim = 1;
    int n_layers = 3;

    void validate() const;
    bool operator==(const MLPConfig&) const = default;
};

// y = x * weight + bias, batch rows.
struct Layer {
    Eigen::MatrixXd weight;  // fan_in x fan_out
    Eigen::RowVectorXd bias;
};

struct MLPParams {
    MLPConfig config;
    std::vector<Layer> layers;

    bool operator==(const MLPParams& other) const;  // bitwise on parameters
};

// He-uniform weights (bound sqrt(6 / fan_in)), zero biases.
MLPParams init_params(const MLPConfig& config, std::uint64_t seed);

struct ForwardCache {
    std::vector<Eigen::MatrixXd> inputs;  // inputs[l] feeds layer l; inputs[0] is the batch
};

struct ForwardResult {
    Eigen::MatrixXd output;
    ForwardCache cache;
};

ForwardResult forward(const MLPParams& params, const Eigen::MatrixXd& x);
Eigen::MatrixXd predict_outputs(const MLPParams& params, const Eigen::MatrixXd& x);

// Mean squared error on a scalar output.
struct RegressionHead {};
// Sigmoid + binary cross-entropy on a scalar logit; targets are 0 or 1.
struct BinaryHead {};
// Softmax over dot products with frozen character embeddings (one per row);
// targets index rows of char_vectors.
struct CharHead {
    Eigen::MatrixXd char_vectors;
};
using Head = std::variant<RegressionHead, BinaryHead, CharHead>;

std::size_t head_out_dim(const Head& head);

struct LossAndGrad {
    double loss = 0.0;
    std::vector<Layer> grads;  // shaped like MLPParams::layers
};

LossAndGrad loss_and_grad(const MLPParams& params, const Eigen::MatrixXd& x, std::span<const double> targets,
                          const Head& head);

struct OptimizerConfig {
    std::string kind = "adam";  // "adam" or "sgd"
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;  // L2 term added to the gradient
};

struct TrainConfig {
    int epochs = 10;
    std::size_t batch_size = 512;
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainResult {
    MLPParams params;
    std::vector<double> loss_curve;  // mean training loss per epoch
};

// Writes the inputs of the listed example indices into `out` (one row each).
using BatchFiller = std::function<void(std::span<const std::size_t> indices, Eigen::MatrixXd& out)>;

// Minibatch training over n examples; the last partial batch is kept.
TrainResult train(MLPParams params, std::size_t n, const BatchFiller& fill, std::span<const double> targets,
                  const TrainConfig& config, const Head& head);

TrainResult train(MLPParams params, const Eigen::MatrixXd& x, std::span<const double> targets,
                  const TrainConfig& config, const Head& head);

// Input row of an example: the token embedding, or word ⊕ candidate for pairs.
std::size_t example_dim(const EmbeddingTable& table, const ProbeExample& example);
void fill_inputs(const EmbeddingTable& table, std::span<const ProbeExample> examples,
                 std::span<const std::size_t> indices, Eigen::MatrixXd& out);
std::vector<double> example_targets(std::span<const ProbeExample> examples);

TrainResult train(MLPParams params, const EmbeddingTable& table, std::span<const ProbeExample> examples,
                  const TrainConfig& config, const Head& head);

// Trains on every example whose token lies outside `fold`.
TrainResult train(MLPParams params, const EmbeddingTable& table, const ProbeDataset& data, const FoldPlan& folds,
                  int fold, const TrainConfig& config, const Head& head);

// Raw network outputs for examples, computed in chunks.
Eigen::MatrixXd predict_examples(const MLPParams& params, const EmbeddingTable& table,
                                 std::span<const ProbeExample> examples, std::size_t chunk = 1024);

double sigmoid(double z);
Eigen::VectorXd softmax(const Eigen::VectorXd& scores);

double predict_length(const MLPParams& params, const Eigen::RowVectorXd& x);
double predict_substring(const MLPParams& params, const Eigen::RowVectorXd& x_pair);
Eigen::VectorXd predict_char(const MLPParams& params, const Eigen::RowVectorXd& x,
                             const Eigen::MatrixXd& char_vectors);

// Versioned little-endian binary checkpoint; parameters round-trip exactly.
void save_checkpoint(const MLPParams& params, const std::filesystem::path& path);
MLPParams load_checkpoint(const std::filesystem::path& path);

}  // namespace surfprobe
