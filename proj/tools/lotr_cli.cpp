#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "lotr/lotr.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lotr::cli {

constexpr int kOk = 0, kRuntime = 1, kUsage = 2;

/// Flag value wins over the config file, which wins over the default.
template <class T>
void override_from(const CLI::Option* opt, const T& flag, T& field) {
  if (opt && opt->count() > 0) field = flag;
}

json load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << j.dump(2) << '\n';
}

ModelConfig resolve_model(const json& file, const std::string& preset_flag) {
  const std::string name = !preset_flag.empty() ? preset_flag : file.value("preset", std::string("micro"));
  ModelConfig m = preset(name);
  if (file.contains("model")) merge_json(file.at("model"), m);
  m.validate();
  return m;
}

TrainConfig resolve_train(const json& file) {
  TrainConfig t;
  if (file.contains("train")) merge_json(file.at("train"), t);
  return t;
}

void require_dataset(const std::string& dir) {
  if (dir.empty()) throw ConfigError("--data is required");
  if (!fs::is_directory(dir) || !fs::exists(fs::path(dir) / "images.lotr"))
    throw ConfigError("dataset directory '" + dir + "' not found");
}

void check_compatible(const Dataset& d, const ModelConfig& m) {
  if (d.config.width != m.image_width || d.config.height != m.image_height || d.config.landmarks != m.landmarks)
    throw ConfigError("dataset (" + std::to_string(d.config.width) + "x" + std::to_string(d.config.height) + ", " +
                      std::to_string(d.config.landmarks) + " landmarks) does not match the model (" +
                      std::to_string(m.image_width) + "x" + std::to_string(m.image_height) + ", " +
                      std::to_string(m.landmarks) + " landmarks)");
}

struct GenData {
  std::string out, config;
  std::size_t count = 100, size = 96, landmarks = 10;
  std::uint64_t seed = 0;
  bool no_perturb = false;
  CLI::Option *count_opt, *size_opt, *lm_opt, *seed_opt, *np_opt;

  void attach(CLI::App& app) {
    app.add_option("--out", out, "Output dataset directory")->required();
    app.add_option("--config", config, "JSON file with generator fields, count and seed");
    count_opt = app.add_option("--count", count, "Number of samples");
    seed_opt = app.add_option("--seed", seed, "Dataset seed");
    size_opt = app.add_option("--size", size, "Image width and height in pixels");
    lm_opt = app.add_option("--landmarks", landmarks, "Landmarks per face (>= 5)");
    np_opt = app.add_flag("--no-perturb", no_perturb, "Keep the canonical pose");
  }

  int run() const {
    json file = config.empty() ? json::object() : load_json(config);
    GeneratorConfig g = file.get<GeneratorConfig>();
    std::size_t n = file.value("count", count);
    std::uint64_t s = file.value("seed", seed);
    override_from(count_opt, count, n);
    override_from(seed_opt, seed, s);
    if (size_opt->count()) g.width = g.height = size;
    override_from(lm_opt, landmarks, g.landmarks);
    if (no_perturb) g.perturb = false;
    if (n == 0) throw ConfigError("--count must be positive");
    g.validate();
    write_dataset(out, {g, generate_dataset(n, s, g)});
    json resolved = g;
    resolved["count"] = n;
    resolved["seed"] = s;
    write_json(fs::path(out) / "config.json", resolved);
    std::cout << json{{"samples", n}, {"out", out}}.dump() << '\n';
    return kOk;
  }
};

struct Train {
  std::string data, config, out, preset, loss, resume;
  std::size_t epochs = 0, batch = 0, max_steps = 0, checkpoint_every = 0;
  std::uint64_t seed = 0;
  double lr = 0.0;
  CLI::Option *epochs_opt, *batch_opt, *steps_opt, *ckpt_opt, *seed_opt, *lr_opt;

  void attach(CLI::App& app) {
    app.add_option("--data", data, "Training dataset directory");
    app.add_option("--config", config, "Run config JSON (preset, model, train, data)");
    app.add_option("--out", out, "Output directory")->required();
    app.add_option("--preset", preset, "Model preset (micro, tiny, lotr-m, lotr-m+, lotr-r+)");
    app.add_option("--loss", loss, "Loss kind (l1, l2, smooth-l1, wing, smooth-wing)");
    epochs_opt = app.add_option("--epochs", epochs, "Training epochs");
    batch_opt = app.add_option("--batch-size", batch, "Mini-batch size");
    lr_opt = app.add_option("--lr", lr, "Base learning rate");
    steps_opt = app.add_option("--max-steps", max_steps, "Stop after this many steps (0 = all epochs)");
    ckpt_opt = app.add_option("--checkpoint-every", checkpoint_every, "Checkpoint cadence in steps");
    seed_opt = app.add_option("--seed", seed, "Training seed");
    app.add_option("--resume", resume, "Checkpoint to continue from");
  }

  int run() const {
    const json file = config.empty() ? json::object() : load_json(config);
    const ModelConfig m = resolve_model(file, preset);
    TrainConfig t = resolve_train(file);
    override_from(epochs_opt, epochs, t.epochs);
    override_from(batch_opt, batch, t.batch_size);
    override_from(lr_opt, lr, t.base_lr);
    override_from(steps_opt, max_steps, t.max_steps);
    override_from(ckpt_opt, checkpoint_every, t.checkpoint_every);
    override_from(seed_opt, seed, t.seed);
    if (!loss.empty()) t.loss = LossSpec(parse_loss_kind(loss), t.loss.w(), t.loss.epsilon(), t.loss.t());
    t.validate();
    const std::string data_dir = !data.empty() ? data : file.value("data", std::string());
    require_dataset(data_dir);
    const Dataset d = read_dataset(data_dir);
    check_compatible(d, m);

    fs::create_directories(out);
    json resolved{{"command", "train"}, {"preset", m.name}, {"model", m}, {"train", t}, {"data", data_dir}};
    write_json(fs::path(out) / "config.json", resolved);

    std::ofstream log(fs::path(out) / "train.jsonl");
    if (!log) throw IoError("cannot write training log in '" + out + "'");
    TrainOptions o;
    o.out_dir = out;
    o.log = &log;
    if (!resume.empty()) o.resume = load_checkpoint(resume, m);
    const TrainResult r = train(d.samples, m, t, o);
    const std::size_t step = r.state.optimizer.step;
    const fs::path ckpt = fs::path(out) / checkpoint_name(step);
    checkpoint_container(r.state).save(ckpt.string());
    json summary{{"final_loss", r.final_loss}, {"steps", step}, {"checkpoint", ckpt.string()}};
    summary["val_nme"] = r.final_val_nme ? json(*r.final_val_nme) : json(nullptr);
    std::cout << summary.dump() << '\n';
    return kOk;
  }
};

struct Eval {
  std::string data, checkpoint, config, norm = "bbox", out;
  double threshold = 0.08;
  bool flip = false;

  void attach(CLI::App& app) {
    app.add_option("--data", data, "Evaluation dataset directory")->required();
    app.add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    app.add_option("--config", config, "Run config JSON (default: config.json next to the checkpoint)");
    app.add_option("--norm", norm, "Normalization: bbox, interocular or image");
    app.add_option("--threshold", threshold, "Failure threshold and AUC cutoff");
    app.add_flag("--flip", flip, "Average with the prediction on the mirrored image");
    app.add_option("--out", out, "Directory for metrics.json, ced.csv and config.json");
  }

  int run() const {
    const NormMode mode = parse_norm_mode(norm);
    if (!(threshold > 0.0)) throw ConfigError("--threshold must be > 0");
    const std::string cfg = !config.empty() ? config : (fs::path(checkpoint).parent_path() / "config.json").string();
    const json file = load_json(cfg);
    const ModelConfig m = resolve_model(file, "");
    require_dataset(data);
    const Dataset d = read_dataset(data);
    check_compatible(d, m);
    const ModelParams p = load_checkpoint(checkpoint, m).params;
    const SwapMap swap = face_swap_map(m.landmarks);
    std::vector<double> nmes;
    for (const auto& s : d.samples) {
      const LandmarkSet pred = flip ? flip_averaged_inference(s.image, p, m, swap) : predict(s.image, p, m);
      nmes.push_back(nme(s.landmarks, pred, norm_factor(s.landmarks, mode, kLeftEye, kRightEye)));
    }
    const MetricsReport report = evaluate(nmes, threshold);
    json metrics = to_json(report);
    metrics["norm"] = to_string(mode);
    metrics["flip"] = flip;
    if (!out.empty()) {
      fs::create_directories(out);
      write_json(fs::path(out) / "metrics.json", metrics);
      write_ced_csv(report, (fs::path(out) / "ced.csv").string());
      json resolved{{"command", "eval"}, {"preset", m.name},      {"model", m},         {"data", data},
                    {"checkpoint", checkpoint}, {"norm", to_string(mode)}, {"threshold", threshold}, {"flip", flip}};
      write_json(fs::path(out) / "config.json", resolved);
    }
    std::cout << metrics.dump() << '\n';
    return kOk;
  }
};

struct Gradcheck {
  std::string config, preset, corrupt;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  std::size_t points = 10;

  void attach(CLI::App& app) {
    app.add_option("--config", config, "Run config JSON selecting the model");
    app.add_option("--preset", preset, "Model preset for the end-to-end check");
    app.add_option("--seed", seed, "Seed for the random points");
    app.add_option("--tolerance", tolerance, "Maximum relative error");
    app.add_option("--points", points, "Random points per component");
    app.add_option("--corrupt", corrupt, "Perturb one component's analytic gradient (self-test)");
  }

  int run() const {
    const json file = config.empty() ? json::object() : load_json(config);
    const ModelConfig m = resolve_model(file, preset);
    GradcheckOptions o;
    o.tolerance = tolerance;
    o.seed = seed;
    o.points = points;
    o.corrupt = corrupt;
    std::vector<std::string> failing;
    for (const auto& r : run_gradcheck(m, o)) {
      std::cout << std::left << std::setw(18) << r.component << ' ' << std::scientific << std::setprecision(3)
                << r.max_rel_error << ' ' << (r.passed ? "ok" : "FAIL") << '\n';
      if (!r.passed) failing.push_back(r.component);
    }
    if (failing.empty()) return kOk;
    std::cerr << "gradient check failed for:";
    for (const auto& f : failing) std::cerr << ' ' << f;
    std::cerr << '\n';
    return kRuntime;
  }
};

struct Bench {
  std::string config, preset, out;
  std::size_t repeat = 10;
  std::uint64_t seed = 0;

  void attach(CLI::App& app) {
    app.add_option("--config", config, "Run config JSON selecting the model");
    app.add_option("--preset", preset, "Model preset");
    app.add_option("--repeat", repeat, "Timed repetitions per component");
    app.add_option("--seed", seed, "Seed for parameters and inputs");
    app.add_option("--out", out, "Directory for bench.csv");
  }

  struct Row {
    std::string component;
    double mean_ms, std_ms;
    std::size_t params;
    std::uint64_t macs;
  };

  template <class F>
  static std::pair<double, double> time_ms(std::size_t repeat, F&& f) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < repeat; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      f();
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      sum += ms;
      sq += ms * ms;
    }
    const double n = static_cast<double>(repeat), mean = sum / n;
    return {mean, repeat > 1 ? std::sqrt(std::max(0.0, (sq - n * mean * mean) / (n - 1.0))) : 0.0};
  }

  int run() const {
    if (repeat == 0) throw ConfigError("--repeat must be positive");
    const json file = config.empty() ? json::object() : load_json(config);
    const ModelConfig m = resolve_model(file, preset);
    ModelConfig ffn = m;
    ffn.head = HeadKind::kFfn;
    Rng rng(seed);
    Tensor image({3, m.image_height, m.image_width});
    for (auto& v : image.mutable_data()) v = rng.uniform();
    std::vector<Row> rows;
    {
      const ModelParams p = init_params(m, seed);
      const auto [mean, sd] = time_ms(repeat, [&] { (void)predict(image, p, m); });
      rows.push_back({"lotr_forward", mean, sd, p.parameter_count(), count_macs(m).total()});
    }
    {
      const ModelParams p = init_params(ffn, seed);
      const auto [mean, sd] = time_ms(repeat, [&] { (void)predict(image, p, ffn); });
      rows.push_back({"ffn_forward", mean, sd, p.parameter_count(), count_macs(ffn).total()});
    }
    {
      const auto b = benchmark_decode(repeat * m.landmarks, m.image_height, m.image_width, rng);
      // per image: one decode per landmark heatmap
      const double n = static_cast<double>(m.landmarks);
      rows.push_back({"heatmap_decode", b.mean_decode_ms * n, b.std_decode_ms * std::sqrt(n), 0, 0});
    }
    std::ostringstream csv;
    csv << "component,mean_ms,std_ms,param_count,mac_count\n" << std::setprecision(6);
    for (const auto& r : rows)
      csv << r.component << ',' << r.mean_ms << ',' << r.std_ms << ',' << r.params << ',' << r.macs << '\n';
    std::cout << csv.str();
    if (!out.empty()) {
      fs::create_directories(out);
      std::ofstream f(fs::path(out) / "bench.csv");
      if (!f) throw IoError("cannot write bench.csv in '" + out + "'");
      f << csv.str();
      write_json(fs::path(out) / "config.json",
                 {{"command", "bench"}, {"preset", m.name}, {"model", m}, {"repeat", repeat}, {"seed", seed}});
    }
    return kOk;
  }
};

int main(int argc, char** argv) {
  CLI::App app{"Transformer landmark localization: data, training, evaluation and checks"};
  app.require_subcommand(1);
  GenData gen;
  Train tr;
  Eval ev;
  Gradcheck gc;
  Bench bn;
  gen.attach(*app.add_subcommand("gen-data", "Generate a synthetic face dataset"));
  tr.attach(*app.add_subcommand("train", "Train a model"));
  ev.attach(*app.add_subcommand("eval", "Evaluate a checkpoint"));
  gc.attach(*app.add_subcommand("gradcheck", "Finite-difference gradient suite"));
  bn.attach(*app.add_subcommand("bench", "Time forward passes and heatmap decoding"));
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }
  try {
    if (app.got_subcommand("gen-data")) return gen.run();
    if (app.got_subcommand("train")) return tr.run();
    if (app.got_subcommand("eval")) return ev.run();
    if (app.got_subcommand("gradcheck")) return gc.run();
    if (app.got_subcommand("bench")) return bn.run();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const json::exception& e) {
    std::cerr << "error: invalid configuration: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace lotr::cli

int main(int argc, char** argv) { return lotr::cli::main(argc, argv); }
