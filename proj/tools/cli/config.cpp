#include "config.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>

#include "pafm/errors.hpp"

namespace pafm::cli {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.contains(key)) throw ConfigError("unknown key '" + where + key + "'");
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
    const auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
            if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0))
                throw ConfigError("");
        }
        out = it->get<T>();
    } catch (const std::exception&) {
        throw ConfigError("config key '" + where + key + "' has the wrong type");
    }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& doc, bool* seed_set) {
    ExperimentConfig c;
    reject_unknown(doc, {"output_dir", "seed", "dataset", "provider", "model", "train", "eval", "sample", "grad_var"},
                   "");
    read(doc, "output_dir", c.output_dir, "");
    read(doc, "seed", c.seed, "");
    if (seed_set != nullptr) *seed_set = doc.contains("seed");

    if (const auto it = doc.find("dataset"); it != doc.end()) {
        const std::string w = "dataset.";
        reject_unknown(*it, {"family", "n_per_class", "noise_std", "centers", "source_mean", "source_std", "subsample"},
                       w);
        read(*it, "family", c.dataset.family, w);
        read(*it, "n_per_class", c.dataset.n_per_class, w);
        read(*it, "noise_std", c.dataset.noise_std, w);
        read(*it, "centers", c.dataset.centers, w);
        read(*it, "source_mean", c.dataset.source_mean, w);
        read(*it, "source_std", c.dataset.source_std, w);
        read(*it, "subsample", c.dataset.subsample, w);
    }
    if (const auto it = doc.find("provider"); it != doc.end()) {
        const std::string w = "provider.";
        reject_unknown(*it, {"kind", "k", "sigma", "augment_angle", "by_class"}, w);
        read(*it, "kind", c.provider.kind, w);
        read(*it, "k", c.provider.k, w);
        read(*it, "sigma", c.provider.sigma, w);
        read(*it, "augment_angle", c.provider.augment_angle, w);
        read(*it, "by_class", c.provider.by_class, w);
    }
    if (const auto it = doc.find("model"); it != doc.end()) {
        const std::string w = "model.";
        reject_unknown(*it, {"hidden", "embed", "layers"}, w);
        read(*it, "hidden", c.model.hidden, w);
        read(*it, "embed", c.model.embed, w);
        read(*it, "layers", c.model.layers, w);
    }
    if (const auto it = doc.find("train"); it != doc.end()) {
        const std::string w = "train.";
        reject_unknown(*it,
                       {"objective", "steps", "batch_size", "lr0", "t_eps", "conditioned", "eval_every",
                        "checkpoint_every", "audit_every"},
                       w);
        read(*it, "objective", c.train.objective, w);
        read(*it, "steps", c.train.steps, w);
        read(*it, "batch_size", c.train.batch_size, w);
        read(*it, "lr0", c.train.lr0, w);
        read(*it, "t_eps", c.train.t_eps, w);
        read(*it, "conditioned", c.train.conditioned, w);
        read(*it, "eval_every", c.train.eval_every, w);
        read(*it, "checkpoint_every", c.train.checkpoint_every, w);
        read(*it, "audit_every", c.train.audit_every, w);
    }
    if (const auto it = doc.find("eval"); it != doc.end()) {
        const std::string w = "eval.";
        reject_unknown(*it, {"grid_points", "grid_times"}, w);
        read(*it, "grid_points", c.eval.grid_points, w);
        read(*it, "grid_times", c.eval.grid_times, w);
    }
    if (const auto it = doc.find("sample"); it != doc.end()) {
        const std::string w = "sample.";
        reject_unknown(*it, {"n_samples", "n_steps", "label"}, w);
        read(*it, "n_samples", c.sample.n_samples, w);
        read(*it, "n_steps", c.sample.n_steps, w);
        read(*it, "label", c.sample.label, w);
    }
    if (const auto it = doc.find("grad_var"); it != doc.end()) {
        const std::string w = "grad_var.";
        reject_unknown(*it, {"batches", "batch_size", "model", "freeze_per_element"}, w);
        read(*it, "batches", c.grad_var.batches, w);
        read(*it, "batch_size", c.grad_var.batch_size, w);
        read(*it, "model", c.grad_var.model, w);
        read(*it, "freeze_per_element", c.grad_var.freeze_per_element, w);
    }
    return c;
}

json ExperimentConfig::to_json() const {
    return json{
        {"output_dir", output_dir},
        {"seed", seed},
        {"dataset",
         {{"family", dataset.family},
          {"n_per_class", dataset.n_per_class},
          {"noise_std", dataset.noise_std},
          {"centers", dataset.centers},
          {"source_mean", dataset.source_mean},
          {"source_std", dataset.source_std},
          {"subsample", dataset.subsample}}},
        {"provider",
         {{"kind", provider.kind},
          {"k", provider.k},
          {"sigma", provider.sigma},
          {"augment_angle", provider.augment_angle},
          {"by_class", provider.by_class}}},
        {"model", {{"hidden", model.hidden}, {"embed", model.embed}, {"layers", model.layers}}},
        {"train",
         {{"objective", train.objective},
          {"steps", train.steps},
          {"batch_size", train.batch_size},
          {"lr0", train.lr0},
          {"t_eps", train.t_eps},
          {"conditioned", train.conditioned},
          {"eval_every", train.eval_every},
          {"checkpoint_every", train.checkpoint_every},
          {"audit_every", train.audit_every}}},
        {"eval", {{"grid_points", eval.grid_points}, {"grid_times", eval.grid_times}}},
        {"sample", {{"n_samples", sample.n_samples}, {"n_steps", sample.n_steps}, {"label", sample.label}}},
        {"grad_var",
         {{"batches", grad_var.batches},
          {"batch_size", grad_var.batch_size},
          {"model", grad_var.model},
          {"freeze_per_element", grad_var.freeze_per_element}}},
    };
}

void ExperimentConfig::validate() const {
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    synthetic_spec().validate();
    parse_provider(provider.kind);
    parse_objective(train.objective);
    if (provider.k < 1) throw ConfigError("provider.k must be >= 1");
    if (!(provider.sigma >= 0.0)) throw ConfigError("provider.sigma must be >= 0");
    try {
        model_shape(0).validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    train_config().validate();
    if (eval.grid_points < 1 || eval.grid_times < 1) throw ConfigError("eval grid must be non-empty");
    if (sample.n_samples < 1 || sample.n_steps < 1) throw ConfigError("sample.n_samples and n_steps must be >= 1");
    if (sample.label < -1) throw ConfigError("sample.label must be -1 or a class index");
    if (grad_var.batches < 1 || grad_var.batch_size < 1) throw ConfigError("grad_var batches must be >= 1");
}

SyntheticSpec ExperimentConfig::synthetic_spec() const {
    SyntheticSpec s;
    s.family = parse_family(dataset.family);
    s.n_per_class = dataset.n_per_class;
    s.noise_std = dataset.noise_std;
    for (const auto& c : dataset.centers) s.centers.push_back(Eigen::Map<const Point>(c.data(), std::ssize(c)));
    s.source_mean = Eigen::Map<const Point>(dataset.source_mean.data(), std::ssize(dataset.source_mean));
    s.source_std = dataset.source_std;
    s.seed = seed;
    return s;
}

SourceDistribution ExperimentConfig::source() const { return synthetic_spec().source(); }

ModelShape ExperimentConfig::model_shape(int num_classes) const {
    ModelShape shape;
    shape.dim = std::ssize(dataset.source_mean);
    shape.hidden = model.hidden;
    shape.embed = model.embed;
    shape.layers = model.layers;
    shape.num_classes = train.conditioned ? num_classes : 0;
    return shape;
}

TrainConfig ExperimentConfig::train_config() const {
    TrainConfig t;
    t.objective = parse_objective(train.objective);
    t.provider = parse_provider(provider.kind);
    t.k = provider.k;
    t.steps = train.steps;
    t.batch_size = train.batch_size;
    t.lr0 = train.lr0;
    t.seed = seed;
    t.t_eps = train.t_eps;
    t.sigma = provider.sigma;
    t.augment_angle = provider.augment_angle;
    t.conditioned = train.conditioned;
    t.eval_every = train.eval_every;
    return t;
}

FieldGridSpec ExperimentConfig::grid_spec() const {
    FieldGridSpec g;
    g.n_points = eval.grid_points;
    g.n_times = eval.grid_times;
    g.t_eps = train.t_eps;
    g.conditioned = train.conditioned;
    g.seed = seed;
    return g;
}

std::filesystem::path ExperimentConfig::objective_dir() const {
    return out() / (parse_objective(train.objective) == Objective::FM ? "fm" : "pafm");
}

json load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
}

void apply_seed_environment(ExperimentConfig& config, bool seed_set) {
    const char* env = std::getenv(kSeedEnvVar);
    if (env == nullptr || *env == '\0') return;
    if (seed_set) {
        std::cerr << "warning: " << kSeedEnvVar << " ignored because the config sets seed = " << config.seed << "\n";
        return;
    }
    char* end = nullptr;
    const unsigned long long value = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0' || *env == '-') throw ConfigError(std::string(kSeedEnvVar) + " is not an unsigned integer");
    config.seed = value;
}

}  // namespace pafm::cli
