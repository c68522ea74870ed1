#include "surfprobe/probe_model.hpp"

#include "surfprobe/errors.hpp"
#include "surfprobe/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace surfprobe {

namespace {

bool bitwise_equal(const double* a, const double* b, Eigen::Index n) {
    return std::memcmp(a, b, static_cast<std::size_t>(n) * sizeof(double)) == 0;
}

std::vector<std::pair<std::size_t, std::size_t>> layer_shapes(const MLPConfig& c) {
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    std::size_t fan_in = c.in_dim;
    for (int l = 0; l < c.n_layers; ++l) {
        const std::size_t fan_out = l + 1 == c.n_layers ? c.out_dim : c.hidden_dim;
        shapes.emplace_back(fan_in, fan_out);
        fan_in = fan_out;
    }
    return shapes;
}

}  // namespace

void MLPConfig::validate() const {
    if (in_dim == 0 || out_dim == 0) throw ValidationError("MLP input and output dimensions must be positive");
    if (n_layers < 1) throw ValidationError("MLP needs at least one layer");
    if (n_layers > 1 && hidden_dim == 0) throw ValidationError("MLP hidden dimension must be positive");
}

bool MLPParams::operator==(const MLPParams& other) const {
    if (!(config == other.config) || layers.size() != other.layers.size()) return false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& a = layers[l];
        const auto& b = other.layers[l];
        if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() || a.bias.size() != b.bias.size())
            return false;
        if (!bitwise_equal(a.weight.data(), b.weight.data(), a.weight.size())) return false;
        if (!bitwise_equal(a.bias.data(), b.bias.data(), a.bias.size())) return false;
    }
    return true;
}

MLPParams init_params(const MLPConfig& config, std::uint64_t seed) {
    config.validate();
    MLPParams params;
    params.config = config;
    Rng rng(seed);
    for (auto [fan_in, fan_out] : layer_shapes(config)) {
        Layer layer;
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        layer.weight.resize(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
        // Column-major fill order is part of the seed contract.
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = rng.uniform(-bound, bound);
        layer.bias = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(fan_out));
        params.layers.push_back(std::move(layer));
    }
    return params;
}

ForwardResult forward(const MLPParams& params, const Eigen::MatrixXd& x) {
    if (static_cast<std::size_t>(x.cols()) != params.config.in_dim) {
        throw ValidationError("input dimension " + std::to_string(x.cols()) + " does not match MLP in_dim " +
                              std::to_string(params.config.in_dim));
    }
    if (!x.allFinite()) throw ValidationError("non-finite value in MLP input");
    ForwardResult result;
    result.cache.inputs.reserve(params.layers.size());
    result.cache.inputs.push_back(x);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        Eigen::MatrixXd z = result.cache.inputs.back() * layer.weight;
        z.rowwise() += layer.bias;
        if (l + 1 == params.layers.size()) {
            result.output = std::move(z);
        } else {
            result.cache.inputs.push_back(z.cwiseMax(0.0));
        }
    }
    return result;
}

Eigen::MatrixXd predict_outputs(const MLPParams& params, const Eigen::MatrixXd& x) {
    return forward(params, x).output;
}

std::size_t head_out_dim(const Head& head) {
    if (const auto* c = std::get_if<CharHead>(&head)) return static_cast<std::size_t>(c->char_vectors.cols());
    return 1;
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Eigen::VectorXd softmax(const Eigen::VectorXd& scores) {
    const double m = scores.maxCoeff();
    Eigen::VectorXd p = (scores.array() - m).exp().matrix();
    return p / p.sum();
}

namespace {

// Mean loss over the batch and its gradient with respect to the network output.
double head_loss(const Eigen::MatrixXd& out, std::span<const double> targets, const Head& head,
                 Eigen::MatrixXd& d_out) {
    const auto b = out.rows();
    const double inv_b = 1.0 / static_cast<double>(b);
    d_out.resize(out.rows(), out.cols());
    double loss = 0.0;

    if (std::holds_alternative<RegressionHead>(head)) {
        for (Eigen::Index i = 0; i < b; ++i) {
            const double diff = out(i, 0) - targets[static_cast<std::size_t>(i)];
            loss += diff * diff;
            d_out(i, 0) = 2.0 * diff * inv_b;
        }
    } else if (std::holds_alternative<BinaryHead>(head)) {
        for (Eigen::Index i = 0; i < b; ++i) {
            const double z = out(i, 0);
            const double y = targets[static_cast<std::size_t>(i)];
            if (y != 0.0 && y != 1.0) throw ValidationError("binary target must be 0 or 1");
            loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
            d_out(i, 0) = (sigmoid(z) - y) * inv_b;
        }
    } else {
        const auto& chars = std::get<CharHead>(head).char_vectors;
        const Eigen::MatrixXd scores = out * chars.transpose();
        Eigen::MatrixXd d_scores(scores.rows(), scores.cols());
        for (Eigen::Index i = 0; i < b; ++i) {
            const double y = targets[static_cast<std::size_t>(i)];
            if (y < 0.0 || y >= static_cast<double>(chars.rows()) || y != std::floor(y)) {
                throw ValidationError("character label out of range");
            }
            const auto label = static_cast<Eigen::Index>(y);
            const double m = scores.row(i).maxCoeff();
            const Eigen::RowVectorXd e = (scores.row(i).array() - m).exp().matrix();
            const double sum = e.sum();
            loss += std::log(sum) + m - scores(i, label);
            d_scores.row(i) = e / sum;
            d_scores(i, label) -= 1.0;
        }
        d_scores *= inv_b;
        d_out = d_scores * chars;
    }
    return loss * inv_b;
}

void check_head(const MLPParams& params, std::span<const double> targets, Eigen::Index batch, const Head& head) {
    if (batch == 0) throw ValidationError("empty batch");
    if (targets.size() != static_cast<std::size_t>(batch)) throw ValidationError("target count does not match batch");
    if (head_out_dim(head) != params.config.out_dim) {
        throw ValidationError("head expects output dimension " + std::to_string(head_out_dim(head)) +
                              ", MLP has " + std::to_string(params.config.out_dim));
    }
    if (const auto* c = std::get_if<CharHead>(&head); c && c->char_vectors.rows() == 0) {
        throw ValidationError("character head has no characters");
    }
}

}  // namespace

LossAndGrad loss_and_grad(const MLPParams& params, const Eigen::MatrixXd& x, std::span<const double> targets,
                          const Head& head) {
    check_head(params, targets, x.rows(), head);
    auto fwd = forward(params, x);
    LossAndGrad result;
    Eigen::MatrixXd delta;
    result.loss = head_loss(fwd.output, targets, head, delta);

    result.grads.resize(params.layers.size());
    for (std::size_t l = params.layers.size(); l-- > 0;) {
        const auto& input = fwd.cache.inputs[l];
        result.grads[l].weight.noalias() = input.transpose() * delta;
        result.grads[l].bias = delta.colwise().sum();
        if (l == 0) break;
        Eigen::MatrixXd upstream = delta * params.layers[l].weight.transpose();
        delta = (input.array() > 0.0).select(upstream, 0.0);
    }
    return result;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (optimizer.kind != "adam" && optimizer.kind != "sgd") {
        throw ValidationError("unknown optimizer \"" + optimizer.kind + "\" (expected adam or sgd)");
    }
    if (!(optimizer.learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
}

namespace {

class Optimizer {
public:
    Optimizer(const OptimizerConfig& config, const MLPParams& params) : cfg_(config) {
        for (const auto& layer : params.layers) {
            m_.push_back({Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()),
                          Eigen::RowVectorXd::Zero(layer.bias.size())});
            v_.push_back(m_.back());
        }
    }

    void step(MLPParams& params, std::vector<Layer>& grads) {
        ++t_;
        for (std::size_t l = 0; l < params.layers.size(); ++l) {
            auto& p = params.layers[l];
            auto& g = grads[l];
            if (cfg_.weight_decay != 0.0) {
                g.weight += cfg_.weight_decay * p.weight;
                g.bias += cfg_.weight_decay * p.bias;
            }
            if (cfg_.kind == "sgd") {
                p.weight -= cfg_.learning_rate * g.weight;
                p.bias -= cfg_.learning_rate * g.bias;
                continue;
            }
            update(p.weight, g.weight, m_[l].weight, v_[l].weight);
            update(p.bias, g.bias, m_[l].bias, v_[l].bias);
        }
    }

private:
    template <typename M>
    void update(M& param, const M& grad, M& m, M& v) const {
        const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double c2 = std::sqrt(1.0 - std::pow(cfg_.beta2, t_));
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
        param.array() -= cfg_.learning_rate * (m.array() / c1) / (v.array().sqrt() / c2 + cfg_.epsilon);
    }

    OptimizerConfig cfg_;
    std::vector<Layer> m_, v_;
    int t_ = 0;
};

}  // namespace

TrainResult train(MLPParams params, std::size_t n, const BatchFiller& fill, std::span<const double> targets,
                  const TrainConfig& config, const Head& head) {
    config.validate();
    if (n == 0) throw ValidationError("training set is empty");
    if (targets.size() != n) throw ValidationError("target count does not match example count");
    if (head_out_dim(head) != params.config.out_dim) {
        throw ValidationError("head output dimension does not match MLP out_dim");
    }

    Optimizer optimizer(config.optimizer, params);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Eigen::MatrixXd batch;
    std::vector<double> batch_targets;

    TrainResult result;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng rng(derive_seed(config.seed, "epoch", static_cast<std::uint64_t>(epoch)));
        rng.shuffle(std::span(order));
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t count = std::min(config.batch_size, n - start);
            const std::span<const std::size_t> indices(order.data() + start, count);
            batch.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(params.config.in_dim));
            fill(indices, batch);
            batch_targets.resize(count);
            for (std::size_t i = 0; i < count; ++i) batch_targets[i] = targets[indices[i]];

            auto lg = loss_and_grad(params, batch, batch_targets, head);
            if (!std::isfinite(lg.loss)) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch starting at " +
                                    std::to_string(start));
            }
            epoch_loss += lg.loss * static_cast<double>(count);
            optimizer.step(params, lg.grads);
        }
        result.loss_curve.push_back(epoch_loss / static_cast<double>(n));
    }
    result.params = std::move(params);
    return result;
}

TrainResult train(MLPParams params, const Eigen::MatrixXd& x, std::span<const double> targets,
                  const TrainConfig& config, const Head& head) {
    auto fill = [&x](std::span<const std::size_t> indices, Eigen::MatrixXd& out) {
        for (std::size_t i = 0; i < indices.size(); ++i) {
            out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(indices[i]));
        }
    };
    return train(std::move(params), static_cast<std::size_t>(x.rows()), fill, targets, config, head);
}

std::size_t example_dim(const EmbeddingTable& table, const ProbeExample& example) {
    return example.other ? 2 * table.dim() : table.dim();
}

void fill_inputs(const EmbeddingTable& table, std::span<const ProbeExample> examples,
                 std::span<const std::size_t> indices, Eigen::MatrixXd& out) {
    const auto d = static_cast<Eigen::Index>(table.dim());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& ex = examples[indices[i]];
        const auto r = static_cast<Eigen::Index>(i);
        out.row(r).head(d) = table.row(ex.token);
        if (ex.other) out.row(r).segment(d, d) = table.row(*ex.other);
    }
}

std::vector<double> example_targets(std::span<const ProbeExample> examples) {
    std::vector<double> y;
    y.reserve(examples.size());
    for (const auto& ex : examples) y.push_back(static_cast<double>(ex.label));
    return y;
}

TrainResult train(MLPParams params, const EmbeddingTable& table, std::span<const ProbeExample> examples,
                  const TrainConfig& config, const Head& head) {
    if (examples.empty()) throw ValidationError("training split is empty");
    if (example_dim(table, examples.front()) != params.config.in_dim) {
        throw ValidationError("example dimension does not match MLP in_dim");
    }
    const auto targets = example_targets(examples);
    auto fill = [&](std::span<const std::size_t> indices, Eigen::MatrixXd& out) {
        fill_inputs(table, examples, indices, out);
    };
    return train(std::move(params), examples.size(), fill, targets, config, head);
}

TrainResult train(MLPParams params, const EmbeddingTable& table, const ProbeDataset& data, const FoldPlan& folds,
                  int fold, const TrainConfig& config, const Head& head) {
    const auto split = training_split(data, folds, fold);
    return train(std::move(params), table, split, config, head);
}

Eigen::MatrixXd predict_examples(const MLPParams& params, const EmbeddingTable& table,
                                 std::span<const ProbeExample> examples, std::size_t chunk) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(examples.size()), static_cast<Eigen::Index>(params.config.out_dim));
    std::vector<std::size_t> indices;
    Eigen::MatrixXd batch;
    for (std::size_t start = 0; start < examples.size(); start += chunk) {
        const std::size_t count = std::min(chunk, examples.size() - start);
        indices.resize(count);
        std::iota(indices.begin(), indices.end(), start);
        batch.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(params.config.in_dim));
        fill_inputs(table, examples, indices, batch);
        out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) =
            predict_outputs(params, batch);
    }
    return out;
}

double predict_length(const MLPParams& params, const Eigen::RowVectorXd& x) {
    if (params.config.out_dim != 1) throw ValidationError("length probe must have a scalar output");
    return predict_outputs(params, x)(0, 0);
}

double predict_substring(const MLPParams& params, const Eigen::RowVectorXd& x_pair) {
    if (params.config.out_dim != 1) throw ValidationError("substring probe must have a scalar output");
    return sigmoid(predict_outputs(params, x_pair)(0, 0));
}

Eigen::VectorXd predict_char(const MLPParams& params, const Eigen::RowVectorXd& x,
                             const Eigen::MatrixXd& char_vectors) {
    if (static_cast<std::size_t>(char_vectors.cols()) != params.config.out_dim) {
        throw ValidationError("character embedding dimension does not match MLP out_dim");
    }
    const Eigen::RowVectorXd h = predict_outputs(params, x);
    return softmax(char_vectors * h.transpose());
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'S', 'P', 'M', 'L', 'P', 'C', 'K', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T get(std::istream& in) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof value)) throw ParseError("truncated checkpoint", 0);
    return value;
}

}  // namespace

void save_checkpoint(const MLPParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, params.config.in_dim);
    put<std::uint64_t>(out, params.config.hidden_dim);
    put<std::uint64_t>(out, params.config.out_dim);
    put<std::int32_t>(out, params.config.n_layers);
    for (const auto& layer : params.layers) {
        out.write(reinterpret_cast<const char*>(layer.weight.data()),
                  static_cast<std::streamsize>(layer.weight.size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(layer.bias.data()),
                  static_cast<std::streamsize>(layer.bias.size() * sizeof(double)));
    }
    if (!out) throw IoError("write failed for " + path.string());
}

MLPParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[sizeof kMagic];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw ParseError("not a probe checkpoint: " + path.string(), 0);
    }
    if (const auto version = get<std::uint32_t>(in); version != kVersion) {
        throw ParseError("unsupported checkpoint version " + std::to_string(version), 0);
    }
    MLPConfig config;
    config.in_dim = get<std::uint64_t>(in);
    config.hidden_dim = get<std::uint64_t>(in);
    config.out_dim = get<std::uint64_t>(in);
    config.n_layers = get<std::int32_t>(in);
    config.validate();

    MLPParams params;
    params.config = config;
    for (auto [fan_in, fan_out] : layer_shapes(config)) {
        Layer layer;
        layer.weight.resize(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
        layer.bias.resize(static_cast<Eigen::Index>(fan_out));
        in.read(reinterpret_cast<char*>(layer.weight.data()),
                static_cast<std::streamsize>(layer.weight.size() * sizeof(double)));
        in.read(reinterpret_cast<char*>(layer.bias.data()),
                static_cast<std::streamsize>(layer.bias.size() * sizeof(double)));
        if (!in) throw ParseError("truncated checkpoint", 0);
        params.layers.push_back(std::move(layer));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw ParseError("trailing bytes in checkpoint", 0);
    return params;
}

}  // namespace surfprobe
