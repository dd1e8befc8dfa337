#include "focalseg/cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "CLI11.hpp"

#ifndef FOCALSEG_VERSION
#define FOCALSEG_VERSION "0.0.0"
#endif

namespace focalseg {

namespace fs = std::filesystem;

const char* library_version() { return FOCALSEG_VERSION; }

namespace {

std::string_view to_string(NormalizeMode m) { return m == NormalizeMode::ZScore ? "zscore" : "minmax"; }

NormalizeMode normalize_mode_from_string(const std::string& s) {
  if (s == "zscore") return NormalizeMode::ZScore;
  if (s == "minmax") return NormalizeMode::MinMax;
  throw Error(ErrorCode::ConfigError, "normalize must be 'zscore' or 'minmax', got '" + s + "'");
}

void check_config(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ConfigError, what);
}

}  // namespace

void ExperimentConfig::validate() const {
  const int sources = dataset.path.has_value() + dataset.manifest.has_value() + dataset.synth.has_value();
  check_config(sources == 1, "dataset needs exactly one of 'path', 'manifest' or 'synth'");
  const std::size_t h = dataset.synth ? dataset.synth->size : dataset.height;
  const std::size_t w = dataset.synth ? dataset.synth->size : dataset.width;
  check_config(h > 0 && w > 0 && h % 16 == 0 && w % 16 == 0,
               "image height and width must be positive multiples of 16");
  if (dataset.synth) {
    check_config(dataset.synth->count > 0, "synth.count must be positive");
    check_config(dataset.synth->fg_fraction > 0.0 && dataset.synth->fg_fraction < 0.5,
                 "synth.fg_fraction must lie in (0, 0.5)");
  }
  check_config(network.in_channels == 3, "network.in_channels must be 3 for RGB inputs");
  check_config(network.classes == 2, "network.classes must be 2 for binary masks");
  check_config(std::isfinite(threshold), "selection.threshold must be finite");
  split.validate();
  network.validate();
  loss.validate();
  train.validate();
}

void to_json(json& j, const ExperimentConfig& c) {
  json ds = json::object();
  if (c.dataset.path) ds["path"] = c.dataset.path->string();
  if (c.dataset.manifest) ds["manifest"] = c.dataset.manifest->string();
  if (c.dataset.synth)
    ds["synth"] = {{"count", c.dataset.synth->count},
                   {"size", c.dataset.synth->size},
                   {"fg_fraction", c.dataset.synth->fg_fraction},
                   {"seed", c.dataset.synth->seed}};
  ds["height"] = c.dataset.height;
  ds["width"] = c.dataset.width;
  ds["normalize"] = std::string(to_string(c.dataset.normalize));
  j = json{{"dataset", ds},
           {"split", c.split},
           {"network", c.network},
           {"loss", c.loss},
           {"train", c.train},
           {"selection", {{"threshold", c.threshold}}},
           {"output_dir", c.output_dir.string()}};
}

void from_json(const json& j, ExperimentConfig& c) {
  require_known_keys(j, {"dataset", "split", "network", "loss", "train", "selection", "output_dir"},
                     "experiment");
  c = ExperimentConfig{};
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    require_known_keys(d, {"path", "manifest", "synth", "height", "width", "normalize"}, "dataset");
    if (d.contains("path")) c.dataset.path = d["path"].get<std::string>();
    if (d.contains("manifest")) c.dataset.manifest = d["manifest"].get<std::string>();
    if (d.contains("synth")) {
      const json& s = d["synth"];
      require_known_keys(s, {"count", "size", "fg_fraction", "seed"}, "dataset.synth");
      SynthSpec sp;
      sp.count = s.value("count", sp.count);
      sp.size = s.value("size", sp.size);
      sp.fg_fraction = s.value("fg_fraction", sp.fg_fraction);
      sp.seed = s.value("seed", sp.seed);
      c.dataset.synth = sp;
    }
    c.dataset.height = d.value("height", c.dataset.height);
    c.dataset.width = d.value("width", c.dataset.width);
    if (d.contains("normalize")) c.dataset.normalize = normalize_mode_from_string(d["normalize"].get<std::string>());
  }
  if (j.contains("split")) c.split = j["split"].get<SplitSpec>();
  if (j.contains("network")) c.network = j["network"].get<NetworkConfig>();
  if (j.contains("loss")) {
    const json& l = j["loss"];
    c.loss = l.is_string() ? derive_loss(l.get<std::string>()) : l.get<LossSpec>();
  }
  if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
  if (j.contains("selection")) {
    require_known_keys(j["selection"], {"threshold"}, "selection");
    c.threshold = j["selection"].value("threshold", c.threshold);
  }
  if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
}

ExperimentConfig load_experiment(const fs::path& path) {
  const json j = read_json_file(path);
  ExperimentConfig c;
  try {
    c = j.get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  auto anchor = [&](std::optional<fs::path>& p) {
    if (p && p->is_relative()) p = base / *p;
  };
  anchor(c.dataset.path);
  anchor(c.dataset.manifest);
  return c;
}

fs::path resolve_output_dir(const fs::path& output_dir) {
  const char* root = std::getenv(kOutputRootEnv);
  if (!root || !*root) return output_dir;
  return fs::path(root) / (output_dir.is_absolute() ? output_dir.relative_path() : output_dir);
}

DataSplits prepare_data(const ExperimentConfig& config) {
  Dataset ds;
  if (config.dataset.synth) {
    const auto& s = *config.dataset.synth;
    ds = synth_blobs(s.count, s.size, s.fg_fraction, s.seed);
  } else if (config.dataset.manifest) {
    ds = load_manifest(*config.dataset.manifest, config.dataset.height, config.dataset.width);
  } else {
    ds = load_dataset(*config.dataset.path, config.dataset.height, config.dataset.width);
  }
  normalize_dataset(ds, config.dataset.normalize);
  return materialize(ds, split(ds, config.split));
}

namespace {

// Runs `setup` (errors -> exit 1) and then `work` (errors -> exit 2).
int run_phases(const std::function<void()>& setup, const std::function<void()>& work) {
  try {
    setup();
  } catch (const std::exception& e) {
    std::cerr << "focalseg: configuration error: " << e.what() << '\n';
    return kExitConfig;
  }
  try {
    work();
  } catch (const std::exception& e) {
    std::cerr << "focalseg: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

void write_manifest(const fs::path& out, const std::string& command, const json& config,
                    const json& extra = json::object()) {
  json m = {{"command", command},
            {"config", config},
            {"version", library_version()},
            {"opencv", CV_VERSION}};
  if (config.is_object() && config.contains("train")) m["seed"] = config["train"]["seed"];
  for (const auto& [k, v] : extra.items()) m[k] = v;
  write_json_file(m, out / "manifest.json");
}

EpochCallback progress(bool quiet, const std::string& tag) {
  if (quiet) return {};
  return [tag](const EpochRecord& r) {
    std::fprintf(stderr, "[%s] epoch %d  train %.5f  val %.5f  lr %.1e\n", tag.c_str(), r.epoch,
                 r.train_loss, r.val_loss, r.lr);
  };
}

struct CommonOptions {
  std::string config;
  std::string output_dir;
  std::optional<int> max_epochs;
  std::optional<std::uint64_t> seed;
  std::string loss;
  bool quiet = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config, "experiment JSON")->required();
    cmd->add_option("-o,--output-dir", output_dir, "override output_dir");
    cmd->add_option("--max-epochs", max_epochs, "override train.max_epochs");
    cmd->add_option("--seed", seed, "override network and training seeds");
    cmd->add_option("--loss", loss, "derivable loss name replacing the loss section");
    cmd->add_flag("-q,--quiet", quiet, "no per-epoch progress");
  }

  ExperimentConfig load() const {
    ExperimentConfig c = load_experiment(config);
    if (!output_dir.empty()) c.output_dir = output_dir;
    if (max_epochs) c.train.max_epochs = *max_epochs;
    if (seed) c.network.seed = c.train.seed = *seed;
    if (!loss.empty()) c.loss = derive_loss(loss);
    return c;
  }
};

BinaryMask read_mask(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw Error(ErrorCode::UnreadableImage, path.string());
  Grid2D<std::uint8_t> g(static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols));
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) g(y, x) = m.at<std::uint8_t>(y, x) ? 1 : 0;
  return BinaryMask(std::move(g));
}

std::string epsilon_tag(double e) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", e);
  return buf;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Segmentation experiments with focal losses and focal attention", "focalseg"};
  app.require_subcommand(1);
  app.set_version_flag("--version", library_version());

  CommonOptions train_opts, select_opts;
  auto* train = app.add_subcommand("train", "train a model and evaluate it on the test split");
  train_opts.attach(train);

  auto* select = app.add_subcommand("select", "zero-init focal selection run, then retrain kept sites");
  select_opts.attach(select);
  std::optional<double> threshold;
  select->add_option("--threshold", threshold, "focal weight threshold (default 0.2)");

  std::string eval_config, eval_ckpt, eval_out;
  double eval_threshold = 0.5;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
  evaluate_cmd->add_option("-c,--config", eval_config, "experiment JSON (dataset and split)")->required();
  evaluate_cmd->add_option("-m,--checkpoint", eval_ckpt, "model checkpoint")->required();
  evaluate_cmd->add_option("-o,--output-dir", eval_out, "override output_dir");
  evaluate_cmd->add_option("--binarize", eval_threshold, "foreground probability cutoff");

  std::string mask_path, fdpt_out = "fdpt";
  std::vector<double> epsilons{0.1, 1.0, 10.0};
  auto* render = app.add_subcommand("render-fdpt", "write FDPT heatmaps of a mask");
  render->add_option("mask", mask_path, "binary mask image")->required();
  render->add_option("-e,--epsilon", epsilons, "focal exponents")->expected(1, -1);
  render->add_option("-o,--output-dir", fdpt_out, "output directory");

  std::string loss_name;
  bool list_losses = false;
  auto* derive = app.add_subcommand("derive-loss", "print the hyperparameters of a named loss");
  derive->add_option("name", loss_name, "loss name");
  derive->add_flag("--list", list_losses, "list derivable names");

  std::string report_path, plot_out;
  auto* plot = app.add_subcommand("plot-traces", "plot focal weight traces from a selection report");
  plot->add_option("report", report_path, "selection.json")->required();
  plot->add_option("-o,--output-dir", plot_out, "output directory (default: next to the report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (*train) {
    ExperimentConfig cfg;
    DataSplits data;
    fs::path out;
    return run_phases(
        [&] {
          cfg = train_opts.load();
          cfg.validate();
          out = resolve_output_dir(cfg.output_dir);
          data = prepare_data(cfg);
        },
        [&] {
          fs::create_directories(out);
          write_manifest(out, "train", cfg);
          FitResult r = fit(build_unet<float>(cfg.network), data.train, data.val, cfg.loss, cfg.train,
                            progress(train_opts.quiet, "train"));
          save_checkpoint(r.model, out / "model.ckpt");
          r.history.write_csv(out / "history.csv");
          const MetricsReport m = evaluate(r.model, data.test);
          json mj = m;
          mj["best_epoch"] = r.history.best_epoch;
          mj["epochs_run"] = r.history.epochs.size();
          write_json_file(mj, out / "metrics.json");
          write_metrics_csv(m, out / "metrics.csv");
          std::printf("mean_dsc %.4f  precision %.4f  recall %.4f  (%s)\n", m.mean_dsc,
                      m.mean_precision, m.mean_recall, out.string().c_str());
        });
  }

  if (*select) {
    ExperimentConfig cfg;
    DataSplits data;
    fs::path out;
    return run_phases(
        [&] {
          cfg = select_opts.load();
          if (threshold) cfg.threshold = *threshold;
          if (cfg.network.placements.empty())
            throw Error(ErrorCode::InvalidPlacement, "selection needs at least one attention placement");
          for (auto& p : cfg.network.placements) p.focal = FocalMode::Init0;
          cfg.validate();
          out = resolve_output_dir(cfg.output_dir);
          data = prepare_data(cfg);
        },
        [&] {
          fs::create_directories(out);
          write_manifest(out, "select", cfg);
          SelectionRun run = run_selection(cfg.network, data, cfg.loss, cfg.train, cfg.threshold,
                                           progress(select_opts.quiet, "select"));
          run.fit.history.write_csv(out / "selection_history.csv");
          write_json_file(run.report, out / "selection.json");
          for (const auto& t : run.report.traces)
            plot_trace(t, cfg.threshold, out / "traces" / (t.placement.label() + ".png"));
          std::string kept;
          for (const auto& p : run.report.kept) kept += " " + p.label();
          std::printf("kept:%s\n", kept.empty() ? " (none)" : kept.c_str());

          FinalizeResult fin = finalize(run.report, cfg.network, data, cfg.loss, cfg.train,
                                        progress(select_opts.quiet, "final"));
          const fs::path fo = out / "final";
          fs::create_directories(fo);
          save_checkpoint(fin.fit.model, fo / "model.ckpt");
          fin.fit.history.write_csv(fo / "history.csv");
          write_json_file(fin.metrics, fo / "metrics.json");
          write_metrics_csv(fin.metrics, fo / "metrics.csv");
          std::printf("final mean_dsc %.4f\n", fin.metrics.mean_dsc);
        });
  }

  if (*evaluate_cmd) {
    ExperimentConfig cfg;
    DataSplits data;
    std::optional<UNet<float>> model;
    fs::path out;
    return run_phases(
        [&] {
          cfg = load_experiment(eval_config);
          if (!eval_out.empty()) cfg.output_dir = eval_out;
          cfg.validate();
          check_config(eval_threshold > 0.0 && eval_threshold < 1.0, "--binarize must lie in (0, 1)");
          model.emplace(load_checkpoint(eval_ckpt));
          out = resolve_output_dir(cfg.output_dir);
          data = prepare_data(cfg);
        },
        [&] {
          fs::create_directories(out);
          write_manifest(out, "evaluate", cfg, {{"checkpoint", eval_ckpt}});
          const MetricsReport m = evaluate(*model, data.test, eval_threshold);
          write_json_file(m, out / "metrics.json");
          write_metrics_csv(m, out / "metrics.csv");
          std::printf("mean_dsc %.4f  precision %.4f  recall %.4f\n", m.mean_dsc, m.mean_precision,
                      m.mean_recall);
        });
  }

  if (*render) {
    WeightMap dpt;
    fs::path out;
    return run_phases(
        [&] {
          for (double e : epsilons)
            if (!std::isfinite(e) || e < 0.0)
              throw Error(ErrorCode::InvalidEpsilon, "epsilon must be finite and >= 0");
          dpt = distance_penalty(distance_transform(read_mask(mask_path)));
          out = resolve_output_dir(fdpt_out);
        },
        [&] {
          fs::create_directories(out);
          json eps = epsilons;
          write_manifest(out, "render-fdpt", json{{"mask", mask_path}, {"epsilons", eps}});
          for (double e : epsilons) {
            const fs::path png = out / ("fdpt_eps_" + epsilon_tag(e) + ".png");
            render_heatmap(focal_distance_penalty(dpt, e), png);
            std::printf("%s\n", png.string().c_str());
          }
        });
  }

  if (*derive) {
    return run_phases(
        [&] {
          if (!list_losses && loss_name.empty())
            throw Error(ErrorCode::ConfigError, "derive-loss needs a name or --list");
          if (!list_losses) derive_loss(loss_name);
        },
        [&] {
          if (list_losses) {
            for (const auto& n : derivable_losses()) std::printf("%s\n", n.c_str());
            return;
          }
          const json j = derive_loss(loss_name);
          std::printf("%s\n", j.dump(2).c_str());
        });
  }

  if (*plot) {
    SelectionReport report;
    fs::path out;
    return run_phases(
        [&] {
          try {
            report = read_json_file(report_path).get<SelectionReport>();
          } catch (const json::exception& e) {
            throw Error(ErrorCode::ConfigError, report_path + ": " + e.what());
          }
          report.validate();
          out = resolve_output_dir(plot_out.empty() ? fs::path(report_path).parent_path() / "traces"
                                                    : fs::path(plot_out));
        },
        [&] {
          for (const auto& t : report.traces) {
            const fs::path png = out / (t.placement.label() + ".png");
            plot_trace(t, report.threshold, png);
            std::printf("%s\n", png.string().c_str());
          }
        });
  }
  return kExitConfig;
}

}  // namespace focalseg
