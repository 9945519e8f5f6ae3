#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "pafm/data.hpp"
#include "pafm/errors.hpp"
#include "pafm/eval.hpp"
#include "svg.hpp"

namespace pafm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
    // Write then rename so an interrupted run never leaves a torn file.
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write " + path.string());
        out << text;
        if (!out) throw IoError("write failed for " + path.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
    write_text(path, std::string(bytes.begin(), bytes.end()));
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void echo_config(const fs::path& dir, const std::string& command, const ExperimentConfig& config) {
    ensure_dir(dir);
    const json doc{{"tool", "pafm"}, {"version", kToolVersion}, {"command", command}, {"config", config.to_json()}};
    write_text(dir / (command + ".resolved.json"), doc.dump(2) + "\n");
}

Dataset load_dataset(const ExperimentConfig& config) {
    const fs::path path = config.out() / "dataset.csv";
    if (!fs::exists(path)) throw IoError("missing dataset file " + path.string() + " (run gen-data first)");
    Dataset ds = read_dataset(path);
    if (ds.dim() != std::ssize(config.dataset.source_mean))
        throw ConfigError("dataset dimension differs from dataset.source_mean");
    return ds;
}

int class_count(const Dataset& ds) { return static_cast<int>(ds.label_set().size()); }

PoolTable load_pools(const ExperimentConfig& config, const Dataset& ds) {
    const TrainConfig tc = config.train_config();
    if (tc.provider != Provider::Knn) return build_pools(ds, tc);
    const fs::path path = config.out() / "candidates.csv";
    if (!fs::exists(path)) throw IoError("missing candidates file " + path.string() + " (run precompute first)");
    const KnnTable table = read_candidates(path);
    if (table.size() != ds.size()) throw ConfigError("candidates file does not match the dataset");
    try {
        return build_pools(ds, tc, &table);
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
}

MlpModel load_model_file(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("missing checkpoint " + path.string() + " (run train first)");
    return load_model(path);
}

std::string csv_number(double v) { return format_double(v); }

}  // namespace

void cmd_gen_data(const ExperimentConfig& config) {
    config.validate();
    Dataset ds = generate(config.synthetic_spec());
    if (config.dataset.subsample > 0) {
        SeededRng rng = SeededRng::derive(config.seed, "subsample");
        try {
            ds = subsample(ds, config.dataset.subsample, rng);
        } catch (const InvalidArgument& e) {
            throw ConfigError(e.what());
        }
    }
    ensure_dir(config.out());
    write_dataset(config.out() / "dataset.csv", ds);
    echo_config(config.out(), "gen-data", config);
    std::cout << "wrote " << ds.size() << " points to " << (config.out() / "dataset.csv").string() << "\n";
}

void cmd_precompute(const ExperimentConfig& config) {
    config.validate();
    const Dataset ds = load_dataset(config);
    KnnTable table;
    try {
        table = precompute_knn(ds, config.provider.k, config.provider.by_class);
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    write_candidates(config.out() / "candidates.csv", table);
    echo_config(config.out(), "precompute", config);
    std::cout << "wrote " << table.size() << " candidate rows (K=" << config.provider.k << ")\n";
}

void cmd_train(const ExperimentConfig& config, bool resume) {
    config.validate();
    const auto t_start = Clock::now();
    const fs::path dir = config.objective_dir();

    const Dataset ds = load_dataset(config);
    const SourceDistribution source = config.source();
    const ModelShape shape = config.model_shape(class_count(ds));
    const TrainConfig tc = config.train_config();
    const double load_s = seconds_since(t_start);

    auto t_phase = Clock::now();
    PoolTable pools;
    if (tc.objective == Objective::PAFM) pools = load_pools(config, ds);
    const double pools_s = seconds_since(t_phase);

    t_phase = Clock::now();
    std::optional<FieldGrid> grid;
    if (tc.eval_every > 0) grid = build_field_grid(ds, source, config.grid_spec());
    const double grid_s = seconds_since(t_phase);

    ensure_dir(dir);
    echo_config(dir, "train", config);

    TrainOptions options;
    options.audit_every = config.train.audit_every;
    double eval_s = 0.0;
    double save_s = 0.0;
    if (grid)
        options.field_evaluator = [&](const MlpModel& model) {
            const auto t0 = Clock::now();
            const double mse = field_mse(model, *grid);
            eval_s += seconds_since(t0);
            return mse;
        };

    if (resume) {
        const fs::path ckpt = dir / "checkpoint.bin";
        if (!fs::exists(ckpt)) throw IoError("cannot resume: missing " + ckpt.string());
        const std::string bytes = read_text(ckpt);
        Trainer trainer = deserialize_trainer(
            std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
        if (trainer.model.shape() != shape) throw ConfigError("checkpoint model shape differs from the config");
        options.start_step = trainer.optimizer.step;
        if (options.start_step > tc.steps) throw ConfigError("checkpoint is past the configured step count");
        MetricsLog prior = MetricsLog::from_csv(read_text(dir / "metrics.csv"));
        std::erase_if(prior.rows, [&](const MetricsRow& r) { return r.step > options.start_step; });
        if (prior.rows.size() != options.start_step) throw ConfigError("metrics.csv does not cover the checkpoint");
        options.prior_log = std::move(prior);
        options.resume_from = std::move(trainer);
    }

    if (!resume) save_model(dir / "model_init.bin", initial_trainer(shape, tc.seed).model);

    const std::size_t mid = tc.steps / 2;
    options.on_step = [&](std::size_t step, const Trainer& trainer, const MetricsLog& log) {
        const auto t0 = Clock::now();
        if (step == mid) save_model(dir / "model_mid.bin", trainer.model);
        if (config.train.checkpoint_every > 0 && step % config.train.checkpoint_every == 0 && step < tc.steps) {
            write_bytes(dir / "checkpoint.bin", serialize_trainer(trainer));
            write_text(dir / "metrics.csv", log.to_csv());
        }
        save_s += seconds_since(t0);
    };

    const PoolTable* pool_ptr = tc.objective == Objective::PAFM ? &pools : nullptr;
    const std::size_t first_step = options.start_step;
    t_phase = Clock::now();
    TrainResult result = [&] {
        try {
            return train_loop(tc, ds, source, shape, pool_ptr, std::move(options));
        } catch (const TrainingAborted& e) {
            write_bytes(dir / "model_aborted.bin", e.snapshot());
            throw;
        }
    }();
    const double loop_s = seconds_since(t_phase);
    const double step_s = std::max(loop_s - eval_s - save_s, 1e-12);
    const std::size_t steps_run = tc.steps - first_step;

    t_phase = Clock::now();
    save_model(dir / "model.bin", result.trainer.model);
    write_bytes(dir / "checkpoint.bin", serialize_trainer(result.trainer));
    write_text(dir / "metrics.csv", result.log.to_csv());
    save_s += seconds_since(t_phase);

    const json timing{
        {"objective", to_string(tc.objective)},
        {"provider", to_string(tc.provider)},
        {"dataset_size", ds.size()},
        {"batch_size", tc.batch_size},
        {"steps_run", steps_run},
        {"resumed_from_step", first_step},
        {"samples_per_sec", static_cast<double>(steps_run * tc.batch_size) / step_s},
        {"ms_per_step", steps_run > 0 ? 1000.0 * step_s / static_cast<double>(steps_run) : 0.0},
        {"phases_s",
         {{"load", load_s},
          {"pools", pools_s},
          {"field_grid", grid_s},
          {"train_steps", step_s},
          {"field_eval", eval_s},
          {"checkpointing", save_s},
          {"total", seconds_since(t_start)}}},
    };
    write_text(dir / "timing.json", timing.dump(2) + "\n");
    const MetricsRow* last = result.log.rows.empty() ? nullptr : &result.log.rows.back();
    std::cout << to_string(tc.objective) << ": " << steps_run << " steps";
    if (last != nullptr) std::cout << ", final loss " << last->loss;
    std::cout << ", " << timing["samples_per_sec"].get<double>() << " samples/s\n";
}

void cmd_sample(const ExperimentConfig& config, const fs::path& model_path) {
    config.validate();
    const fs::path dir = config.objective_dir();
    const MlpModel model = load_model_file(model_path.empty() ? dir / "model.bin" : model_path);
    const SourceDistribution source = config.source();
    if (model.shape().dim != source.dim()) throw ConfigError("model dimension differs from the source");
    const std::size_t n = config.sample.n_samples;
    const int label = config.sample.label;
    Matrix samples;
    if (!model.shape().conditioned()) {
        if (label != kUnconditional) throw ConfigError("sample.label set for an unconditional model");
        SeededRng rng = SeededRng::derive(config.seed, "sample");
        samples = euler_sample(model, source, n, config.sample.n_steps, rng);
    } else if (label != kUnconditional) {
        if (label >= model.shape().num_classes) throw ConfigError("sample.label outside the model's classes");
        SeededRng rng = SeededRng::derive(config.seed, "sample", static_cast<std::uint64_t>(label));
        samples = euler_sample(model, source, n, config.sample.n_steps, rng, label);
    } else {
        // Every class in turn, sizes differing by at most one.
        const int classes = model.shape().num_classes;
        samples.resize(source.dim(), static_cast<Eigen::Index>(n));
        Eigen::Index col = 0;
        for (int c = 0; c < classes; ++c) {
            const std::size_t share = n / classes + (static_cast<std::size_t>(c) < n % classes ? 1 : 0);
            if (share == 0) continue;
            SeededRng rng = SeededRng::derive(config.seed, "sample", static_cast<std::uint64_t>(c));
            samples.middleCols(col, static_cast<Eigen::Index>(share)) =
                euler_sample(model, source, share, config.sample.n_steps, rng, c);
            col += static_cast<Eigen::Index>(share);
        }
    }
    ensure_dir(dir);
    write_samples(dir / "samples.csv", samples);
    echo_config(dir, "sample", config);
    std::cout << "wrote " << samples.cols() << " samples to " << (dir / "samples.csv").string() << "\n";
}

void cmd_eval_field(const ExperimentConfig& config, const fs::path& model_path) {
    config.validate();
    const fs::path dir = config.objective_dir();
    const MlpModel model = load_model_file(model_path.empty() ? dir / "model.bin" : model_path);
    const Dataset ds = load_dataset(config);
    FieldGridSpec spec = config.grid_spec();
    spec.conditioned = model.shape().conditioned();
    const FieldGrid grid = build_field_grid(ds, config.source(), spec);
    const std::vector<double> per_time = field_mse_by_time(model, grid);
    const double total = field_mse(model, grid);
    std::string csv = "t,field_mse\n";
    for (std::size_t k = 0; k < per_time.size(); ++k)
        csv += csv_number(grid.times[k]) + "," + csv_number(per_time[k]) + "\n";
    csv += "all," + csv_number(total) + "\n";
    ensure_dir(dir);
    write_text(dir / "field.csv", csv);
    echo_config(dir, "eval-field", config);
    std::cout << "field MSE " << total << " over " << grid.size() << " grid points\n";
}

void cmd_grad_var(const ExperimentConfig& config) {
    config.validate();
    const fs::path dir = config.objective_dir();
    const fs::path model_path = config.grad_var.model.empty() ? dir / "model_mid.bin" : fs::path(config.grad_var.model);
    const MlpModel model = load_model_file(model_path);
    const Dataset ds = load_dataset(config);
    const TrainConfig tc = config.train_config();
    PoolTable pools;
    if (tc.objective == Objective::PAFM) pools = load_pools(config, ds);

    GradVarOptions opt;
    opt.batches = config.grad_var.batches;
    opt.batch_size = config.grad_var.batch_size;
    opt.seed = config.seed;
    opt.conditioned = model.shape().conditioned();
    opt.t_eps = config.train.t_eps;
    opt.freeze_per_element = config.grad_var.freeze_per_element;
    const VarianceReport report = gradient_variance(model, ds, config.source(), tc.objective,
                                                    tc.objective == Objective::PAFM ? &pools : nullptr, opt);
    std::string csv = "batch,trace\n";
    for (std::size_t b = 0; b < report.traces.size(); ++b) csv += std::to_string(b) + "," + csv_number(report.traces[b]) + "\n";
    ensure_dir(dir);
    write_text(dir / "gradvar.csv", csv);
    write_text(dir / "gradvar_summary.csv", "objective,batches,batch_size,mean_trace\n" + to_string(tc.objective) + "," +
                                               std::to_string(report.batches) + "," +
                                               std::to_string(report.batch_size) + "," +
                                               csv_number(report.mean_trace) + "\n");
    echo_config(dir, "grad-var", config);
    std::cout << to_string(tc.objective) << " gradient variance trace " << report.mean_trace << " over "
              << report.batches << " batches\n";
}

namespace {

const std::vector<fs::path> kReportInputs = {"dataset.csv", "fm/metrics.csv", "pafm/metrics.csv", "fm/samples.csv",
                                             "pafm/samples.csv"};

Bounds padded(Bounds b, double frac) {
    const double dx = (b.x_max - b.x_min) * frac;
    const double dy = (b.y_max - b.y_min) * frac;
    return {b.x_min - dx, b.x_max + dx, b.y_min - dy, b.y_max + dy};
}

void kde_panel(const fs::path& path, const std::string& title, const Matrix& points, const Bounds& bounds,
               const std::string& color) {
    constexpr int kCells = 64;
    const double h = scott_bandwidth(points);
    std::vector<double> values(kCells * kCells);
    Point q(2);
    for (int r = 0; r < kCells; ++r)
        for (int c = 0; c < kCells; ++c) {
            q[0] = bounds.x_min + (c + 0.5) * (bounds.x_max - bounds.x_min) / kCells;
            q[1] = bounds.y_min + (r + 0.5) * (bounds.y_max - bounds.y_min) / kCells;
            values[static_cast<std::size_t>(r * kCells + c)] = kde(points, q, h);
        }
    SvgPlot plot(title, bounds);
    plot.heatmap(values, kCells, kCells, color);
    plot.save(path);
}

std::vector<std::pair<double, double>> moving_average(const MetricsLog& log, std::size_t window) {
    std::vector<std::pair<double, double>> out;
    double acc = 0.0;
    for (std::size_t k = 0; k < log.rows.size(); ++k) {
        acc += log.rows[k].loss;
        if (k >= window) acc -= log.rows[k - window].loss;
        const std::size_t n = std::min(k + 1, window);
        if ((k + 1) % std::max<std::size_t>(1, window / 4) == 0 || k + 1 == log.rows.size())
            out.emplace_back(static_cast<double>(log.rows[k].step), acc / static_cast<double>(n));
    }
    return out;
}

std::vector<std::pair<double, double>> field_curve(const MetricsLog& log) {
    std::vector<std::pair<double, double>> out;
    for (const auto& r : log.rows)
        if (r.field_mse) out.emplace_back(static_cast<double>(r.step), *r.field_mse);
    return out;
}

Bounds bounds_of(const std::vector<std::vector<std::pair<double, double>>>& curves) {
    Bounds b{1e300, -1e300, 1e300, -1e300};
    for (const auto& curve : curves)
        for (const auto& [x, y] : curve) {
            b.x_min = std::min(b.x_min, x);
            b.x_max = std::max(b.x_max, x);
            b.y_min = std::min(b.y_min, y);
            b.y_max = std::max(b.y_max, y);
        }
    if (b.x_min > b.x_max) return {};
    b.y_min = std::min(b.y_min, 0.0);
    b.y_max += 0.05 * (b.y_max - b.y_min);
    return b;
}

std::vector<std::pair<double, double>> read_gradvar(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    std::getline(in, line);
    std::vector<std::pair<double, double>> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        try {
            if (comma == std::string::npos) throw std::invalid_argument("no comma");
            out.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
        } catch (const std::exception&) {
            throw ParseError(lineno, "malformed gradvar row in " + path.string());
        }
    }
    return out;
}

}  // namespace

std::vector<fs::path> missing_report_inputs(const ExperimentConfig& config) {
    std::vector<fs::path> missing;
    for (const auto& rel : kReportInputs)
        if (!fs::exists(config.out() / rel)) missing.push_back(config.out() / rel);
    return missing;
}

void cmd_report(const ExperimentConfig& config) {
    config.validate();
    const auto missing = missing_report_inputs(config);
    if (!missing.empty()) {
        std::string msg = "report needs files that are missing:";
        for (const auto& p : missing) msg += "\n  " + p.string();
        throw IoError(msg);
    }
    const fs::path dir = config.out() / "report";
    ensure_dir(dir);
    const Dataset ds = read_dataset(config.out() / "dataset.csv");
    const Matrix fm_samples = read_samples(config.out() / "fm/samples.csv");
    const Matrix pafm_samples = read_samples(config.out() / "pafm/samples.csv");
    const MetricsLog fm_log = MetricsLog::from_csv(read_text(config.out() / "fm/metrics.csv"));
    const MetricsLog pafm_log = MetricsLog::from_csv(read_text(config.out() / "pafm/metrics.csv"));
    if (ds.dim() != 2 || fm_samples.rows() != 2 || pafm_samples.rows() != 2)
        throw ConfigError("report plots need two-dimensional data");

    const Bounds view = padded(Bounds::of_points(ds.points, 0.0), 0.25);
    kde_panel(dir / "kde_data.svg", "Data", ds.points, view, "#333333");
    kde_panel(dir / "kde_fm.svg", "FM samples", fm_samples, view, "#c0392b");
    kde_panel(dir / "kde_pafm.svg", "PAFM samples", pafm_samples, view, "#2471a3");

    SvgPlot scatter("Samples", view);
    scatter.scatter(ds.points, "#333333", 1.0, 0.5);
    scatter.scatter(fm_samples, "#c0392b", 1.0, 0.35);
    scatter.scatter(pafm_samples, "#2471a3", 1.0, 0.35);
    scatter.legend({{"data", "#333333"}, {"FM", "#c0392b"}, {"PAFM", "#2471a3"}});
    scatter.save(dir / "samples.svg");

    const auto fm_field = field_curve(fm_log);
    const auto pafm_field = field_curve(pafm_log);
    SvgPlot field("Velocity field MSE", bounds_of({fm_field, pafm_field}));
    field.line(fm_field, "#c0392b");
    field.line(pafm_field, "#2471a3");
    field.legend({{"FM", "#c0392b"}, {"PAFM", "#2471a3"}});
    field.axis_labels("step", "field MSE");
    field.save(dir / "field_mse.svg");

    const auto fm_loss = moving_average(fm_log, 100);
    const auto pafm_loss = moving_average(pafm_log, 100);
    SvgPlot loss("Training loss (100-step moving average)", bounds_of({fm_loss, pafm_loss}));
    loss.line(fm_loss, "#c0392b");
    loss.line(pafm_loss, "#2471a3");
    loss.legend({{"FM", "#c0392b"}, {"PAFM", "#2471a3"}});
    loss.axis_labels("step", "loss");
    loss.save(dir / "loss.svg");

    std::optional<double> fm_trace, pafm_trace;
    const fs::path fm_gv = config.out() / "fm/gradvar.csv";
    const fs::path pafm_gv = config.out() / "pafm/gradvar.csv";
    if (fs::exists(fm_gv) && fs::exists(pafm_gv)) {
        const auto a = read_gradvar(fm_gv);
        const auto b = read_gradvar(pafm_gv);
        auto mean_of = [](const std::vector<std::pair<double, double>>& v) {
            double s = 0.0;
            for (const auto& p : v) s += p.second;
            return v.empty() ? 0.0 : s / static_cast<double>(v.size());
        };
        fm_trace = mean_of(a);
        pafm_trace = mean_of(b);
        const auto flat = [](const std::vector<std::pair<double, double>>& v, double y) {
            if (v.empty()) return std::vector<std::pair<double, double>>{};
            return std::vector<std::pair<double, double>>{{v.front().first, y}, {v.back().first, y}};
        };
        SvgPlot gv("Mini-batch gradient variance", bounds_of({a, b}));
        gv.line(a, "#c0392b", 1.0);
        gv.line(b, "#2471a3", 1.0);
        gv.line(flat(a, *fm_trace), "#c0392b", 1.5, true);
        gv.line(flat(b, *pafm_trace), "#2471a3", 1.5, true);
        gv.legend({{"FM", "#c0392b"}, {"PAFM", "#2471a3"}});
        gv.axis_labels("batch", "|g - g_mean|^2");
        gv.save(dir / "gradvar.svg");
    }

    auto last_field = [](const std::vector<std::pair<double, double>>& curve) {
        return curve.empty() ? std::string() : csv_number(curve.back().second);
    };
    std::string summary = "objective,final_field_mse,energy_distance_to_data,mean_gradvar_trace\n";
    summary += "FM," + last_field(fm_field) + "," + csv_number(energy_distance(fm_samples, ds.points)) + "," +
               (fm_trace ? csv_number(*fm_trace) : std::string()) + "\n";
    summary += "PAFM," + last_field(pafm_field) + "," + csv_number(energy_distance(pafm_samples, ds.points)) + "," +
               (pafm_trace ? csv_number(*pafm_trace) : std::string()) + "\n";
    write_text(dir / "summary.csv", summary);
    echo_config(dir, "report", config);
    std::cout << "wrote report to " << dir.string() << "\n" << summary;
}

namespace {

/// Flag values given on the command line; unset ones leave the config alone.
struct Overrides {
    std::string config_path;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> family, objective, provider, model;
    std::optional<std::size_t> n_per_class, subsample, k, steps, batch_size, eval_every, checkpoint_every;
    std::optional<std::size_t> n_samples, n_steps, batches, grid_points, grid_times;
    std::optional<double> noise_std, lr, sigma;
    std::optional<int> label;
    bool conditioned = false;
    bool global_knn = false;
    bool freeze = false;
    bool resume = false;
};

ExperimentConfig resolve(const Overrides& o) {
    bool seed_set = false;
    ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{}
                                               : ExperimentConfig::from_json(load_config_file(o.config_path), &seed_set);
    if (o.out) c.output_dir = *o.out;
    if (o.seed) {
        c.seed = *o.seed;
        seed_set = true;
    }
    apply_seed_environment(c, seed_set);
    if (o.family) c.dataset.family = *o.family;
    if (o.n_per_class) c.dataset.n_per_class = *o.n_per_class;
    if (o.noise_std) c.dataset.noise_std = *o.noise_std;
    if (o.subsample) c.dataset.subsample = *o.subsample;
    if (o.provider) c.provider.kind = *o.provider;
    if (o.k) c.provider.k = *o.k;
    if (o.sigma) c.provider.sigma = *o.sigma;
    if (o.global_knn) c.provider.by_class = false;
    if (o.objective) c.train.objective = *o.objective;
    if (o.steps) c.train.steps = *o.steps;
    if (o.batch_size) c.train.batch_size = *o.batch_size;
    if (o.lr) c.train.lr0 = *o.lr;
    if (o.eval_every) c.train.eval_every = *o.eval_every;
    if (o.checkpoint_every) c.train.checkpoint_every = *o.checkpoint_every;
    if (o.conditioned) c.train.conditioned = true;
    if (o.grid_points) c.eval.grid_points = *o.grid_points;
    if (o.grid_times) c.eval.grid_times = *o.grid_times;
    if (o.n_samples) c.sample.n_samples = *o.n_samples;
    if (o.n_steps) c.sample.n_steps = *o.n_steps;
    if (o.label) c.sample.label = *o.label;
    if (o.batches) c.grad_var.batches = *o.batches;
    if (o.batch_size) c.grad_var.batch_size = *o.batch_size;
    if (o.model) c.grad_var.model = *o.model;
    if (o.freeze) c.grad_var.freeze_per_element = true;
    c.validate();
    return c;
}

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config_path, "JSON experiment config (defaults apply to omitted keys)");
    cmd->add_option("-o,--out", o.out, "Output directory [pafm-out]");
    cmd->add_option("--seed", o.seed, std::string("Experiment seed; overrides ") + kSeedEnvVar + " [0]");
}

void add_objective(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--objective", o.objective, "FM or PAFM [PAFM]");
}

void add_provider(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--provider", o.provider, "Candidate provider: full, knn, perturbation, augmentation [full]");
    cmd->add_option("-k,--k", o.k, "Candidates per pool for knn/perturbation/augmentation [16]");
    cmd->add_option("--sigma", o.sigma, "Perturbation provider standard deviation [0.05]");
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"Posterior-augmented flow matching experiments on toy data"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);
    Overrides o;

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset (dataset.csv)");
    add_common(gen, o);
    gen->add_option("--family", o.family, "two_moons or gaussian_mixture [two_moons]");
    gen->add_option("--n-per-class", o.n_per_class, "Points per class [1000]");
    gen->add_option("--noise-std", o.noise_std, "Isotropic jitter standard deviation [0.05]");
    gen->add_option("--subsample", o.subsample, "Keep a class-balanced subsample of this size [0 = all]");

    auto* pre = app.add_subcommand("precompute", "Precompute nearest-neighbour candidates (candidates.csv)");
    add_common(pre, o);
    pre->add_option("-k,--k", o.k, "Neighbours per point, owner included [16]");
    pre->add_flag("--global", o.global_knn, "Search across classes instead of within the owner's class");

    auto* train = app.add_subcommand("train", "Train a velocity model (model.bin, metrics.csv, timing.json)");
    add_common(train, o);
    add_objective(train, o);
    add_provider(train, o);
    train->add_option("--steps", o.steps, "Optimizer steps [50000]");
    train->add_option("--batch-size", o.batch_size, "Batch size [256]");
    train->add_option("--lr", o.lr, "Initial learning rate, cosine-decayed to 0 [5e-4]");
    train->add_option("--eval-every", o.eval_every, "Field-MSE evaluation interval, 0 disables [1000]");
    train->add_option("--checkpoint-every", o.checkpoint_every, "Resumable checkpoint interval [5000]");
    train->add_option("--grid-points", o.grid_points, "Interpolant draws in the field-MSE grid [4096]");
    train->add_option("--grid-times", o.grid_times, "Evenly spaced times per draw [16]");
    train->add_flag("--conditioned", o.conditioned, "Condition the model on class labels");
    train->add_flag("--resume", o.resume, "Continue from the last checkpoint in the output directory");

    auto* sample = app.add_subcommand("sample", "Draw samples with the Euler sampler (samples.csv)");
    add_common(sample, o);
    add_objective(sample, o);
    sample->add_option("--n-samples", o.n_samples, "Number of samples [5000]");
    sample->add_option("--steps", o.n_steps, "Euler steps [300]");
    sample->add_option("--label", o.label, "Class label for conditioned models [-1 = all classes]");
    sample->add_option("--model", o.model, "Checkpoint to load [<out>/<objective>/model.bin]");

    auto* field = app.add_subcommand("eval-field", "Velocity-field MSE against the exact oracle (field.csv)");
    add_common(field, o);
    add_objective(field, o);
    field->add_option("--model", o.model, "Checkpoint to load [<out>/<objective>/model.bin]");
    field->add_option("--grid-points", o.grid_points, "Interpolant draws in the grid [4096]");
    field->add_option("--grid-times", o.grid_times, "Evenly spaced times per draw [16]");

    auto* gv = app.add_subcommand("grad-var", "Mini-batch gradient variance of a frozen model (gradvar.csv)");
    add_common(gv, o);
    add_objective(gv, o);
    add_provider(gv, o);
    gv->add_option("--batches", o.batches, "Number of batches B [500]");
    gv->add_option("--batch-size", o.batch_size, "Batch size [256]");
    gv->add_option("--model", o.model, "Checkpoint to load [<out>/<objective>/model_mid.bin]");
    gv->add_flag("--freeze", o.freeze, "Fix (eps, t) per dataset element for the whole measurement");

    auto* report = app.add_subcommand("report", "SVG figures and a summary table (report/)");
    add_common(report, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const ExperimentConfig config = resolve(o);
        const std::filesystem::path model = o.model.value_or("");
        if (gen->parsed()) cmd_gen_data(config);
        else if (pre->parsed()) cmd_precompute(config);
        else if (train->parsed()) cmd_train(config, o.resume);
        else if (sample->parsed()) cmd_sample(config, model);
        else if (field->parsed()) cmd_eval_field(config, model);
        else if (gv->parsed()) cmd_grad_var(config);
        else if (report->parsed()) cmd_report(config);
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const TrainingAborted& e) {
        std::cerr << "training aborted at " << e.what() << " (snapshot saved as model_aborted.bin)\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace pafm::cli
