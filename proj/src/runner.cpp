#include "surfprobe/runner.hpp"

#include "json_util.hpp"
#include "surfprobe/errors.hpp"
#include "surfprobe/metrics.hpp"
#include "surfprobe/rng.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace surfprobe {

using nlohmann::json;

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
    if (embeddings.empty()) throw ConfigError("embeddings.path is required");
    if (!length && !substring && !constitution) throw ConfigError("no task selected");
    if (k < 2) throw ConfigError("k must be at least 2, got " + std::to_string(k));
    if (constitution) {
        if (constitution->positions.empty() || constitution->directions.empty()) {
            throw ConfigError("constitution needs at least one position and one direction");
        }
        for (int n : constitution->positions) {
            if (n < 1) throw ConfigError("constitution positions must be >= 1");
        }
    }
    if (!(negative_ratio >= 0.0)) throw ConfigError("sampling.negative_ratio must be >= 0");
    if (max_eval_pairs && *max_eval_pairs == 0) throw ConfigError("sampling.max_eval_pairs must be positive");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (n_layers < 1 || hidden_dim == 0) throw ConfigError("probe.n_layers and probe.hidden_dim must be positive");
    try {
        train.validate();
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
}

namespace {

std::string marker_kind_name(MarkerKind k) { return k == MarkerKind::continuation ? "continuation" : "word_initial"; }

MarkerKind parse_marker_kind(const std::string& s) {
    if (s == "continuation") return MarkerKind::continuation;
    if (s == "word_initial") return MarkerKind::word_initial;
    throw ConfigError("unknown marker kind \"" + s + "\" (expected continuation or word_initial)");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    if (path.is_relative() && !base.empty()) path = base / path;
    return path.lexically_normal();
}

}  // namespace

ExperimentConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
    using detail::reject_unknown_keys;
    reject_unknown_keys(j,
                        {"embeddings", "strip_rules", "exclusions", "exclude_byte_fallback", "tasks", "k", "sampling",
                         "probe", "train", "output_dir", "seed", "workers", "export_datasets"},
                        "experiment config");
    ExperimentConfig c;
    try {
        const auto& e = j.at("embeddings");
        reject_unknown_keys(e, {"path", "format", "max_tokens"}, "embeddings");
        c.embeddings = resolve(base_dir, e.at("path").get<std::string>());
        c.format = parse_format(e.value("format", std::string("jsonl")));
        if (e.contains("max_tokens") && !e["max_tokens"].is_null()) {
            c.load.max_tokens = e["max_tokens"].get<std::size_t>();
        }

        if (j.contains("strip_rules")) {
            c.load.strip_rules.clear();
            for (const auto& r : j["strip_rules"]) {
                reject_unknown_keys(r, {"marker", "kind"}, "strip rule");
                c.load.strip_rules.push_back(
                    {r.at("marker").get<std::string>(), parse_marker_kind(r.at("kind").get<std::string>())});
            }
        }
        if (j.contains("exclusions")) c.load.exclusions = j["exclusions"].get<std::vector<std::string>>();
        c.load.exclude_byte_fallback = j.value("exclude_byte_fallback", true);

        const auto& t = j.at("tasks");
        reject_unknown_keys(t, {"length", "substring", "constitution"}, "tasks");
        c.length = t.value("length", false);
        c.substring = t.value("substring", false);
        if (t.contains("constitution")) {
            const auto& ct = t["constitution"];
            if (ct.is_boolean()) {
                if (ct.get<bool>()) c.constitution = ConstitutionTask{};
            } else {
                reject_unknown_keys(ct, {"positions", "directions"}, "tasks.constitution");
                c.constitution = ConstitutionTask{};
                if (ct.contains("positions")) {
                    const auto& p = ct["positions"];
                    if (p.is_array()) {
                        c.constitution->positions = p.get<std::vector<int>>();
                    } else {
                        reject_unknown_keys(p, {"min", "max"}, "tasks.constitution.positions");
                        for (int n = p.at("min").get<int>(); n <= p.at("max").get<int>(); ++n) {
                            c.constitution->positions.push_back(n);
                        }
                    }
                }
                if (ct.contains("directions")) {
                    for (const auto& d : ct["directions"]) {
                        c.constitution->directions.push_back(parse_direction(d.get<std::string>()));
                    }
                }
            }
            if (c.constitution) {
                if (c.constitution->positions.empty() && !(ct.is_object() && ct.contains("positions"))) {
                    for (int n = 1; n <= 10; ++n) c.constitution->positions.push_back(n);
                }
                if (c.constitution->directions.empty() && !(ct.is_object() && ct.contains("directions"))) {
                    c.constitution->directions = {Direction::forward, Direction::backward};
                }
            }
        }

        c.k = j.value("k", 10);
        if (j.contains("sampling")) {
            const auto& s = j["sampling"];
            reject_unknown_keys(s, {"negative_ratio", "max_eval_pairs"}, "sampling");
            c.negative_ratio = s.value("negative_ratio", 1.0);
            if (s.contains("max_eval_pairs")) {
                if (s["max_eval_pairs"].is_null()) {
                    c.max_eval_pairs.reset();
                } else {
                    c.max_eval_pairs = s["max_eval_pairs"].get<std::size_t>();
                }
            }
        }
        if (j.contains("probe")) {
            const auto& p = j["probe"];
            reject_unknown_keys(p, {"hidden_dim", "n_layers"}, "probe");
            c.hidden_dim = p.value("hidden_dim", c.hidden_dim);
            c.n_layers = p.value("n_layers", c.n_layers);
        }
        if (j.contains("train")) {
            const auto& tr = j["train"];
            reject_unknown_keys(tr, {"epochs", "batch_size", "optimizer"}, "train");
            c.train.epochs = tr.value("epochs", c.train.epochs);
            c.train.batch_size = tr.value("batch_size", c.train.batch_size);
            if (tr.contains("optimizer")) {
                const auto& o = tr["optimizer"];
                reject_unknown_keys(o, {"kind", "learning_rate", "beta1", "beta2", "epsilon", "weight_decay"},
                                    "train.optimizer");
                auto& opt = c.train.optimizer;
                opt.kind = o.value("kind", opt.kind);
                opt.learning_rate = o.value("learning_rate", opt.learning_rate);
                opt.beta1 = o.value("beta1", opt.beta1);
                opt.beta2 = o.value("beta2", opt.beta2);
                opt.epsilon = o.value("epsilon", opt.epsilon);
                opt.weight_decay = o.value("weight_decay", opt.weight_decay);
            }
        }
        c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
        c.seed = j.value("seed", std::uint64_t{0});
        c.workers = j.value("workers", 1);
        c.export_datasets = j.value("export_datasets", false);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("experiment config: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config ") + path.string() + ": " + e.what(), 0);
    }
    return config_from_json(j, path.parent_path());
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["embeddings"] = {{"path", c.embeddings.generic_string()},
                       {"format", c.format == EmbeddingFormat::jsonl ? "jsonl" : "word2vec"},
                       {"max_tokens", c.load.max_tokens ? json(*c.load.max_tokens) : json(nullptr)}};
    j["strip_rules"] = json::array();
    for (const auto& r : c.load.strip_rules) {
        j["strip_rules"].push_back({{"marker", r.marker}, {"kind", marker_kind_name(r.kind)}});
    }
    j["exclusions"] = c.load.exclusions;
    j["exclude_byte_fallback"] = c.load.exclude_byte_fallback;
    j["tasks"] = {{"length", c.length}, {"substring", c.substring}};
    if (c.constitution) {
        json dirs = json::array();
        for (auto d : c.constitution->directions) dirs.push_back(std::string(to_string(d)));
        j["tasks"]["constitution"] = {{"positions", c.constitution->positions}, {"directions", dirs}};
    }
    j["k"] = c.k;
    j["sampling"] = {{"negative_ratio", c.negative_ratio},
                     {"max_eval_pairs", c.max_eval_pairs ? json(*c.max_eval_pairs) : json(nullptr)}};
    j["probe"] = {{"hidden_dim", c.hidden_dim}, {"n_layers", c.n_layers}};
    const auto& o = c.train.optimizer;
    j["train"] = {{"epochs", c.train.epochs},
                  {"batch_size", c.train.batch_size},
                  {"optimizer",
                   {{"kind", o.kind},
                    {"learning_rate", o.learning_rate},
                    {"beta1", o.beta1},
                    {"beta2", o.beta2},
                    {"epsilon", o.epsilon},
                    {"weight_decay", o.weight_decay}}}};
    j["output_dir"] = c.output_dir.generic_string();
    j["seed"] = c.seed;
    j["workers"] = c.workers;
    j["export_datasets"] = c.export_datasets;
    return j;
}

// ---------------------------------------------------------------- reports

std::string MetricsReport::id() const {
    if (task == "constitution") return task + "/" + std::string(to_string(direction)) + "/" + std::to_string(position);
    return task;
}

const MetricsReport* ExperimentReport::find(const std::string& id) const {
    for (const auto& r : reports) {
        if (r.id() == id) return &r;
    }
    return nullptr;
}

json to_json(const MetricsReport& r) {
    json j;
    j["task"] = r.task;
    if (r.task == "constitution") {
        j["position"] = r.position;
        j["direction"] = std::string(to_string(r.direction));
    }
    j["folds"] = json::array();
    for (const auto& f : r.folds) {
        j["folds"].push_back({{"fold", f.fold},
                              {"skipped", f.skipped},
                              {"note", f.note},
                              {"train_size", f.train_size},
                              {"eval_size", f.eval_size},
                              {"values", f.values},
                              {"loss_curve", f.loss_curve}});
    }
    j["mean"] = r.mean;
    j["support"] = json::object();
    for (const auto& [cls, n] : r.support) j["support"][std::to_string(cls)] = n;
    j["breakdown"] = json::object();
    for (const auto& [cls, m] : r.breakdown) j["breakdown"][std::to_string(cls)] = m;
    j["counts"] = r.counts;
    if (!r.predictions.empty()) {
        j["predictions"] = json::array();
        for (const auto& [truth, pred] : r.predictions) j["predictions"].push_back({truth, pred});
    }
    return j;
}

namespace {

json summary_json(const ExperimentReport& report) {
    json s = json::object();
    if (const auto* r = report.find("length"); r && !r->mean.empty()) {
        s["length"] = {{"reg_mse", r->mean.at("mse")}, {"cls_f1_percent", 100.0 * r->mean.at("f1")}};
    }
    if (const auto* r = report.find("substring"); r && !r->mean.empty()) {
        s["substring"] = {{"f1_percent", 100.0 * r->mean.at("f1")}};
    }
    for (auto dir : {Direction::forward, Direction::backward}) {
        double macro = 0.0, correct = 0.0, total = 0.0;
        int n_positions = 0;
        json per_n = json::object();
        for (const auto& r : report.reports) {
            if (r.task != "constitution" || r.direction != dir || r.mean.empty()) continue;
            macro += r.mean.at("accuracy");
            ++n_positions;
            per_n[std::to_string(r.position)] = 100.0 * r.mean.at("accuracy");
            for (const auto& f : r.folds) {
                if (f.skipped) continue;
                correct += f.values.at("correct");
                total += static_cast<double>(f.eval_size);
            }
        }
        if (n_positions == 0) continue;
        s["constitution"][std::string(to_string(dir))] = {{"acc_percent", 100.0 * macro / n_positions},
                                                          {"acc_percent_pooled", total > 0 ? 100.0 * correct / total : 0.0},
                                                          {"per_position", per_n}};
    }
    return s;
}

std::vector<std::string> report_notes(const ExperimentReport& report) {
    std::vector<std::string> notes;
    const auto& t = report.config.at("train");
    notes.push_back("optimizer: " + t.at("optimizer").at("kind").get<std::string>() + " with learning_rate " +
                    t.at("optimizer").at("learning_rate").dump() + " (probe optimizer settings are a free choice)");
    if (report.config.at("tasks").at("length").get<bool>()) {
        notes.push_back("length classification rounds predictions half away from zero and clamps them to >= 1");
    }
    if (report.config.at("tasks").at("substring").get<bool>()) {
        const auto& cap = report.config.at("sampling").at("max_eval_pairs");
        notes.push_back(cap.is_null() ? "substring evaluation uses every candidate pair of each test split"
                                      : "substring evaluation pairs are uniformly subsampled to at most " + cap.dump() +
                                            " per fold");
        notes.push_back("substring pairs never cross the train/test split");
    }
    if (report.config.at("tasks").contains("constitution")) {
        notes.push_back("constitution acc_percent is the mean over positions of per-position fold-mean accuracy");
    }
    return notes;
}

}  // namespace

json to_json(const ExperimentReport& report) {
    json j;
    j["format"] = "surfprobe-report";
    j["version"] = 1;
    j["config"] = report.config;
    j["provenance"] = {{"embedding_sha256", report.embedding_sha256},
                       {"vocab_size", report.vocab_size},
                       {"dim", report.dim},
                       {"fold_sizes", report.fold_sizes}};
    j["notes"] = report_notes(report);
    j["results"] = json::object();
    for (const auto& r : report.reports) j["results"][r.id()] = to_json(r);
    j["summary"] = summary_json(report);
    j["failures"] = json::array();
    for (const auto& f : report.failures) {
        j["failures"].push_back({{"unit", f.unit}, {"fold", f.fold}, {"kind", f.kind}, {"message", f.message}});
    }
    return j;
}

ExperimentReport report_from_json(const json& j) {
    ExperimentReport report;
    try {
        if (j.value("format", std::string()) != "surfprobe-report") throw ParseError("not a probe report", 0);
        report.config = j.at("config");
        const auto& p = j.at("provenance");
        report.embedding_sha256 = p.at("embedding_sha256").get<std::string>();
        report.vocab_size = p.at("vocab_size").get<std::size_t>();
        report.dim = p.at("dim").get<std::size_t>();
        report.fold_sizes = p.at("fold_sizes").get<std::vector<std::size_t>>();
        for (const auto& [id, rj] : j.at("results").items()) {
            MetricsReport r;
            r.task = rj.at("task").get<std::string>();
            if (r.task == "constitution") {
                r.position = rj.at("position").get<int>();
                r.direction = parse_direction(rj.at("direction").get<std::string>());
            }
            for (const auto& fj : rj.at("folds")) {
                FoldMetrics f;
                f.fold = fj.at("fold").get<int>();
                f.skipped = fj.at("skipped").get<bool>();
                f.note = fj.at("note").get<std::string>();
                f.train_size = fj.at("train_size").get<std::size_t>();
                f.eval_size = fj.at("eval_size").get<std::size_t>();
                f.values = fj.at("values").get<std::map<std::string, double>>();
                f.loss_curve = fj.at("loss_curve").get<std::vector<double>>();
                r.folds.push_back(std::move(f));
            }
            r.mean = rj.at("mean").get<std::map<std::string, double>>();
            for (const auto& [cls, n] : rj.at("support").items()) r.support[std::stoi(cls)] = n.get<std::size_t>();
            for (const auto& [cls, m] : rj.at("breakdown").items()) {
                r.breakdown[std::stoi(cls)] = m.get<std::map<std::string, double>>();
            }
            r.counts = rj.at("counts").get<std::map<std::string, double>>();
            if (rj.contains("predictions")) {
                for (const auto& pr : rj["predictions"]) r.predictions.emplace_back(pr.at(0).get<int>(), pr.at(1).get<double>());
            }
            report.reports.push_back(std::move(r));
        }
        for (const auto& fj : j.at("failures")) {
            report.failures.push_back({fj.at("unit").get<std::string>(), fj.at("fold").get<int>(),
                                       fj.at("kind").get<std::string>(), fj.at("message").get<std::string>()});
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed report: ") + e.what(), 0);
    }
    return report;
}

ExperimentReport load_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report " + path.string());
    try {
        return report_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ParseError("report " + path.string() + ": " + e.what(), 0);
    }
}

namespace {

std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string shortest(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace

std::vector<std::vector<std::string>> summary_rows(const ExperimentReport& report) {
    std::vector<std::vector<std::string>> rows;
    const json s = summary_json(report);
    if (s.contains("length")) {
        rows.push_back({"length", "", "reg_mse", fixed2(s["length"]["reg_mse"].get<double>())});
        rows.push_back({"length", "", "cls_f1_percent", fixed2(s["length"]["cls_f1_percent"].get<double>())});
    }
    if (s.contains("substring")) {
        rows.push_back({"substring", "", "f1_percent", fixed2(s["substring"]["f1_percent"].get<double>())});
    }
    if (s.contains("constitution")) {
        for (auto dir : {"forward", "backward"}) {
            if (!s["constitution"].contains(dir)) continue;
            const auto& d = s["constitution"][dir];
            rows.push_back({"constitution", dir, "acc_percent", fixed2(d["acc_percent"].get<double>())});
            std::vector<std::pair<int, double>> per_n;
            for (const auto& [n, v] : d["per_position"].items()) per_n.emplace_back(std::stoi(n), v.get<double>());
            std::sort(per_n.begin(), per_n.end());
            for (const auto& [n, v] : per_n) {
                rows.push_back({"constitution", std::string(dir) + " N=" + std::to_string(n), "acc_percent", fixed2(v)});
            }
        }
    }
    return rows;
}

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "report.json", std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + (dir / "report.json").string());
        out << to_json(report).dump(2) << '\n';
    }
    {
        std::ofstream out(dir / "summary.csv", std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + (dir / "summary.csv").string());
        out << "task,variant,metric,value\n";
        for (const auto& row : summary_rows(report)) out << row[0] << ',' << row[1] << ',' << row[2] << ',' << row[3] << '\n';
    }
    const auto failures_path = dir / "failures.json";
    if (!report.failures.empty()) {
        std::ofstream out(failures_path, std::ios::binary | std::ios::trunc);
        out << to_json(report)["failures"].dump(2) << '\n';
    } else {
        std::filesystem::remove(failures_path);
    }
}

// ---------------------------------------------------------------- pipeline

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw ProbeError("sha256 init failed");
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), digest, &len);
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

namespace {

struct UnitOutput {
    FoldMetrics metrics;
    std::vector<std::pair<int, double>> predictions;  // (label, raw prediction)
    std::vector<int> eval_labels;
    std::optional<Failure> failure;
};

struct Unit {
    std::size_t report;
    int fold;
    std::function<UnitOutput()> run;
};

void run_units(std::vector<Unit>& units, std::vector<UnitOutput>& outputs, int workers,
               const std::vector<std::string>& ids, const LogFn& log) {
    std::mutex log_mutex;
    auto run_one = [&](std::size_t i) {
        const auto start = std::chrono::steady_clock::now();
        auto& unit = units[i];
        try {
            outputs[i] = unit.run();
        } catch (const ProbeError& e) {
            outputs[i].failure = Failure{ids[unit.report], unit.fold, e.kind(), e.what()};
        } catch (const std::exception& e) {
            outputs[i].failure = Failure{ids[unit.report], unit.fold, "error", e.what()};
        }
        outputs[i].metrics.fold = unit.fold;
        if (outputs[i].failure) {
            outputs[i].metrics.skipped = true;
            outputs[i].metrics.note = "failed: " + outputs[i].failure->message;
        }
        if (log) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            std::ostringstream msg;
            msg << "[" << ids[unit.report] << "] fold " << unit.fold + 1;
            if (outputs[i].metrics.skipped) {
                msg << " skipped (" << outputs[i].metrics.note << ")";
            } else {
                for (const auto& [k, v] : outputs[i].metrics.values) msg << ' ' << k << '=' << v;
            }
            msg << " (" << secs << "s)";
            std::lock_guard lock(log_mutex);
            log(msg.str());
        }
    };
    if (workers <= 1 || units.size() <= 1) {
        for (std::size_t i = 0; i < units.size(); ++i) run_one(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(workers), units.size());
    for (std::size_t w = 0; w < n_threads; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < units.size(); i = next++) run_one(i);
        });
    }
}

void aggregate_mean(MetricsReport& r) {
    std::map<std::string, std::pair<double, int>> sums;
    for (const auto& f : r.folds) {
        if (f.skipped) continue;
        for (const auto& [k, v] : f.values) {
            sums[k].first += v;
            ++sums[k].second;
        }
    }
    r.mean.clear();
    for (const auto& [k, s] : sums) r.mean[k] = s.first / s.second;
}

std::vector<int> to_ints(std::span<const ProbeExample> examples) {
    std::vector<int> y;
    y.reserve(examples.size());
    for (const auto& ex : examples) y.push_back(ex.label);
    return y;
}

int majority_label(std::span<const ProbeExample> examples) {
    std::map<int, std::size_t> counts;
    for (const auto& ex : examples) ++counts[ex.label];
    int best = 0;
    std::size_t best_n = 0;
    for (const auto& [label, n] : counts) {
        if (n > best_n) best = label, best_n = n;
    }
    return best;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config, const LogFn& log) {
    config.validate();
    if (!std::filesystem::exists(config.embeddings)) {
        throw ConfigError("embedding file does not exist: " + config.embeddings.string());
    }
    const auto table = std::make_shared<const EmbeddingTable>(load_embeddings(config.embeddings, config.format, config.load));
    if (log) log("loaded " + std::to_string(table->size()) + " tokens, dim " + std::to_string(table->dim()));

    ExperimentReport report;
    report.config = to_json(config);
    report.embedding_sha256 = sha256_file(config.embeddings);
    report.vocab_size = table->size();
    report.dim = table->dim();

    const auto folds = std::make_shared<const FoldPlan>(make_folds(*table, config.k, derive_seed(config.seed, "folds")));
    report.fold_sizes = folds->fold_sizes();

    const auto datasets_dir = config.output_dir / "datasets";
    if (config.export_datasets) std::filesystem::create_directories(datasets_dir);

    std::vector<Unit> units;
    std::vector<std::string> ids;

    auto probe_seed = [&](const std::string& id, std::string_view what, int fold) {
        return derive_seed(config.seed, std::string(what) + "/" + id, static_cast<std::uint64_t>(fold));
    };
    auto train_config = [&](const std::string& id, int fold) {
        TrainConfig tc = config.train;
        tc.seed = probe_seed(id, "train", fold);
        return tc;
    };
    auto mlp = [&](std::size_t in, std::size_t out) {
        return MLPConfig{in, config.hidden_dim, out, config.n_layers};
    };
    auto add_report = [&](MetricsReport r) {
        ids.push_back(r.id());
        report.reports.push_back(std::move(r));
        return report.reports.size() - 1;
    };

    if (config.length) {
        MetricsReport r;
        r.task = "length";
        const auto idx = add_report(std::move(r));
        const auto id = ids[idx];
        auto data = std::make_shared<const ProbeDataset>(build_length_dataset(*table));
        if (config.export_datasets) export_dataset_jsonl(*data, *table, nullptr, datasets_dir / "length.jsonl");
        for (int f = 0; f < config.k; ++f) {
            units.push_back({idx, f, [=, &config] {
                                 UnitOutput out;
                                 const auto train_ex = training_split(*data, *folds, f);
                                 const auto test_ex = test_split(*data, *folds, f);
                                 out.metrics.train_size = train_ex.size();
                                 out.metrics.eval_size = test_ex.size();
                                 if (train_ex.empty() || test_ex.empty()) {
                                     out.metrics.skipped = true;
                                     out.metrics.note = "empty split";
                                     return out;
                                 }
                                 auto params = init_params(mlp(table->dim(), 1), probe_seed(id, "init", f));
                                 auto trained = train(std::move(params), *table, train_ex, train_config(id, f),
                                                      RegressionHead{});
                                 const auto raw = predict_examples(trained.params, *table, test_ex);
                                 std::vector<double> preds(raw.data(), raw.data() + raw.rows());
                                 std::vector<double> labels;
                                 std::vector<int> classes, truth;
                                 for (std::size_t i = 0; i < test_ex.size(); ++i) {
                                     labels.push_back(test_ex[i].label);
                                     truth.push_back(test_ex[i].label);
                                     classes.push_back(round_to_class(preds[i]));
                                     out.predictions.emplace_back(test_ex[i].label, preds[i]);
                                 }
                                 out.metrics.values["mse"] = mse(preds, labels);
                                 out.metrics.values["f1"] = weighted_f1(classes, truth);
                                 out.metrics.values["accuracy"] = accuracy(classes, truth);
                                 out.metrics.loss_curve = trained.loss_curve;
                                 out.eval_labels = std::move(truth);
                                 return out;
                             }});
        }
    }

    if (config.substring) {
        MetricsReport r;
        r.task = "substring";
        const auto idx = add_report(std::move(r));
        const auto id = ids[idx];
        try {
            SamplingConfig sampling;
            sampling.seed = derive_seed(config.seed, "sampling");
            sampling.negative_ratio = config.negative_ratio;
            sampling.max_eval_pairs = config.max_eval_pairs;
            auto splits = std::make_shared<const SubstringSplits>(build_substring_dataset(*table, *folds, sampling));
            auto& counts = report.reports[idx].counts;
            double candidates = 0, evaluated = 0, positives = 0, skipped = 0;
            for (int f = 0; f < config.k; ++f) {
                const auto& sf = splits->folds[static_cast<std::size_t>(f)];
                candidates += static_cast<double>(sf.eval_candidates);
                evaluated += static_cast<double>(sf.eval.size());
                positives += static_cast<double>(sf.train_positives);
                skipped += sf.skipped ? 1 : 0;
                if (config.export_datasets) {
                    export_dataset_jsonl(sf.train, *table, nullptr,
                                         datasets_dir / ("substring_fold" + std::to_string(f) + "_train.jsonl"));
                    export_dataset_jsonl(sf.eval, *table, nullptr,
                                         datasets_dir / ("substring_fold" + std::to_string(f) + "_eval.jsonl"));
                }
            }
            counts["eval_candidates"] = candidates;
            counts["eval_pairs"] = evaluated;
            counts["train_positives"] = positives;
            counts["skipped_folds"] = skipped;
            if (config.max_eval_pairs) counts["max_eval_pairs_per_fold"] = static_cast<double>(*config.max_eval_pairs);

            for (int f = 0; f < config.k; ++f) {
                units.push_back({idx, f, [=, &config] {
                                     UnitOutput out;
                                     const auto& sf = splits->folds[static_cast<std::size_t>(f)];
                                     out.metrics.train_size = sf.train.size();
                                     out.metrics.eval_size = sf.eval.size();
                                     if (sf.skipped || sf.eval.empty()) {
                                         out.metrics.skipped = true;
                                         out.metrics.note = sf.skipped ? "no positive pairs in the training split"
                                                                       : "no candidate pairs in the test split";
                                         return out;
                                     }
                                     auto params = init_params(mlp(2 * table->dim(), 1), probe_seed(id, "init", f));
                                     auto trained = train(std::move(params), *table, sf.train.examples,
                                                          train_config(id, f), BinaryHead{});
                                     const auto raw = predict_examples(trained.params, *table, sf.eval.examples);
                                     std::vector<int> preds, truth = to_ints(sf.eval.examples);
                                     for (Eigen::Index i = 0; i < raw.rows(); ++i) {
                                         preds.push_back(sigmoid(raw(i, 0)) > 0.5 ? 1 : 0);
                                     }
                                     const std::vector<int> all_negative(truth.size(), 0);
                                     out.metrics.values["f1"] = weighted_f1(preds, truth);
                                     out.metrics.values["accuracy"] = accuracy(preds, truth);
                                     out.metrics.values["all_negative_f1"] = weighted_f1(all_negative, truth);
                                     out.metrics.values["positive_rate"] =
                                         static_cast<double>(std::count(truth.begin(), truth.end(), 1)) /
                                         static_cast<double>(truth.size());
                                     out.metrics.loss_curve = trained.loss_curve;
                                     out.eval_labels = std::move(truth);
                                     return out;
                                 }});
            }
        } catch (const ProbeError& e) {
            report.failures.push_back({id, -1, e.kind(), e.what()});
        }
    }

    if (config.constitution) {
        std::shared_ptr<const CharSubset> chars;
        std::shared_ptr<const Eigen::MatrixXd> char_vectors;
        std::optional<Failure> subset_failure;
        try {
            chars = std::make_shared<const CharSubset>(char_subset(*table));
            char_vectors = std::make_shared<const Eigen::MatrixXd>(chars->vectors());
        } catch (const ProbeError& e) {
            subset_failure = Failure{"constitution", -1, e.kind(), e.what()};
        }
        for (auto dir : config.constitution->directions) {
            for (int n : config.constitution->positions) {
                MetricsReport r;
                r.task = "constitution";
                r.position = n;
                r.direction = dir;
                const auto idx = add_report(std::move(r));
                const auto id = ids[idx];
                if (subset_failure) {
                    report.failures.push_back({id, -1, subset_failure->kind, subset_failure->message});
                    continue;
                }
                std::shared_ptr<const ProbeDataset> data;
                try {
                    data = std::make_shared<const ProbeDataset>(build_constitution_dataset(*table, *chars, n, dir));
                } catch (const ProbeError& e) {
                    report.failures.push_back({id, -1, e.kind(), e.what()});
                    continue;
                }
                auto& counts = report.reports[idx].counts;
                counts["examples"] = static_cast<double>(data->size());
                counts["dropped_too_short"] = static_cast<double>(data->dropped_too_short);
                counts["dropped_char_absent"] = static_cast<double>(data->dropped_char_absent);
                counts["characters"] = static_cast<double>(chars->size());
                if (config.export_datasets) {
                    export_dataset_jsonl(*data, *table, chars.get(),
                                         datasets_dir / ("constitution_" + std::string(to_string(dir)) + "_" +
                                                         std::to_string(n) + ".jsonl"));
                }
                for (int f = 0; f < config.k; ++f) {
                    units.push_back({idx, f, [=, &config] {
                                         UnitOutput out;
                                         const auto train_ex = training_split(*data, *folds, f);
                                         const auto test_ex = test_split(*data, *folds, f);
                                         out.metrics.train_size = train_ex.size();
                                         out.metrics.eval_size = test_ex.size();
                                         if (train_ex.empty() || test_ex.empty()) {
                                             out.metrics.skipped = true;
                                             out.metrics.note = "empty split";
                                             return out;
                                         }
                                         auto params = init_params(mlp(table->dim(), table->dim()),
                                                                   probe_seed(id, "init", f));
                                         auto trained = train(std::move(params), *table, train_ex, train_config(id, f),
                                                              CharHead{*char_vectors});
                                         const Eigen::MatrixXd hidden = predict_examples(trained.params, *table, test_ex);
                                         const Eigen::MatrixXd scores = hidden * char_vectors->transpose();
                                         std::vector<int> preds, truth = to_ints(test_ex);
                                         for (Eigen::Index i = 0; i < scores.rows(); ++i) {
                                             Eigen::Index best = 0;
                                             scores.row(i).maxCoeff(&best);
                                             preds.push_back(static_cast<int>(best));
                                         }
                                         const int majority = majority_label(train_ex);
                                         const std::vector<int> baseline(truth.size(), majority);
                                         const double acc = accuracy(preds, truth);
                                         out.metrics.values["accuracy"] = acc;
                                         out.metrics.values["correct"] = std::round(acc * static_cast<double>(truth.size()));
                                         out.metrics.values["majority_baseline"] = accuracy(baseline, truth);
                                         out.metrics.loss_curve = trained.loss_curve;
                                         out.eval_labels = std::move(truth);
                                         return out;
                                     }});
                }
            }
        }
    }

    std::vector<UnitOutput> outputs(units.size());
    run_units(units, outputs, config.workers, ids, log);

    for (std::size_t i = 0; i < units.size(); ++i) {
        auto& out = outputs[i];
        auto& r = report.reports[units[i].report];
        if (out.failure) report.failures.push_back(*out.failure);
        r.folds.push_back(std::move(out.metrics));
        for (int y : out.eval_labels) ++r.support[y];
        r.predictions.insert(r.predictions.end(), out.predictions.begin(), out.predictions.end());
    }
    for (auto& r : report.reports) {
        std::sort(r.folds.begin(), r.folds.end(), [](const auto& a, const auto& b) { return a.fold < b.fold; });
        aggregate_mean(r);
        if (r.task == "length" && !r.predictions.empty()) {
            std::map<int, std::vector<std::pair<double, double>>> by_length;
            for (const auto& [truth, pred] : r.predictions) by_length[truth].emplace_back(pred, truth);
            for (const auto& [len, pairs] : by_length) {
                std::vector<double> preds, labels;
                std::vector<int> classes, truth;
                for (const auto& [p, t] : pairs) {
                    preds.push_back(p);
                    labels.push_back(t);
                    classes.push_back(round_to_class(p));
                    truth.push_back(static_cast<int>(t));
                }
                r.breakdown[len] = {{"count", static_cast<double>(pairs.size())},
                                    {"mse", mse(preds, labels)},
                                    {"accuracy", accuracy(classes, truth)},
                                    {"mean_prediction", std::accumulate(preds.begin(), preds.end(), 0.0) /
                                                            static_cast<double>(preds.size())}};
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------- figures

std::vector<std::filesystem::path> export_figure_data(const ExperimentReport& report,
                                                      const std::filesystem::path& dir) {
    if (report.reports.empty()) throw ValidationError("report set is empty");
    const auto* length = report.find("length");
    std::vector<const MetricsReport*> constitution;
    for (const auto& r : report.reports) {
        if (r.task == "constitution") constitution.push_back(&r);
    }
    if (!length && constitution.empty()) {
        throw ValidationError("figure data needs a length or constitution task in the report");
    }
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    if (length) {
        const auto path = dir / "length_predictions.csv";
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path.string());
        out << "true_length,predicted_length\n";
        for (const auto& [truth, pred] : length->predictions) out << truth << ',' << shortest(pred) << '\n';
        written.push_back(path);
    }
    if (!constitution.empty()) {
        std::sort(constitution.begin(), constitution.end(), [](const auto* a, const auto* b) {
            return std::pair(a->direction, a->position) < std::pair(b->direction, b->position);
        });
        const auto path = dir / "constitution_accuracy.csv";
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path.string());
        out << "N,direction,accuracy\n";
        for (const auto* r : constitution) {
            const auto it = r->mean.find("accuracy");
            out << r->position << ',' << to_string(r->direction) << ','
                << (it == r->mean.end() ? std::string("nan") : shortest(it->second)) << '\n';
        }
        written.push_back(path);
    }
    return written;
}

// ---------------------------------------------------------------- compare

namespace {

void diff_json(const json& a, const json& b, const std::string& path, std::vector<Difference>& out) {
    if (a.is_number() && b.is_number()) {
        const double x = a.get<double>();
        const double y = b.get<double>();
        if (a != b) out.push_back({path, "value", a, b, y - x});
        return;
    }
    if (a.type() != b.type()) {
        out.push_back({path, "type", a, b, std::nullopt});
        return;
    }
    if (a.is_object()) {
        for (const auto& [key, va] : a.items()) {
            const auto child = path + "/" + key;
            if (!b.contains(key)) {
                out.push_back({child, "missing_in_b", va, nullptr, std::nullopt});
            } else {
                diff_json(va, b[key], child, out);
            }
        }
        for (const auto& [key, vb] : b.items()) {
            if (!a.contains(key)) out.push_back({path + "/" + key, "missing_in_a", nullptr, vb, std::nullopt});
        }
        return;
    }
    if (a.is_array()) {
        const std::size_t common = std::min(a.size(), b.size());
        for (std::size_t i = 0; i < common; ++i) diff_json(a[i], b[i], path + "/" + std::to_string(i), out);
        for (std::size_t i = common; i < a.size(); ++i) {
            out.push_back({path + "/" + std::to_string(i), "missing_in_b", a[i], nullptr, std::nullopt});
        }
        for (std::size_t i = common; i < b.size(); ++i) {
            out.push_back({path + "/" + std::to_string(i), "missing_in_a", nullptr, b[i], std::nullopt});
        }
        return;
    }
    if (a != b) out.push_back({path, "value", a, b, std::nullopt});
}

}  // namespace

std::vector<Difference> compare_reports(const json& a, const json& b) {
    std::vector<Difference> diffs;
    diff_json(a, b, "", diffs);
    return diffs;
}

json to_json(const std::vector<Difference>& diffs) {
    json j = json::array();
    for (const auto& d : diffs) {
        json e = {{"path", d.path}, {"kind", d.kind}, {"a", d.a}, {"b", d.b}};
        if (d.delta) e["delta"] = *d.delta;
        j.push_back(std::move(e));
    }
    return j;
}

}  // namespace surfprobe
