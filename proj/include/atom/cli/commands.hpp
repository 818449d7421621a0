// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "atom/cli/config.hpp"
#include "atom/cli/png.hpp"
#include "atom/core/binary_io.hpp"
#include "atom/data/dataset.hpp"
#include "atom/data/synthetic.hpp"
#include "atom/engine/distill.hpp"
#include "atom/eval/harness.hpp"
#include "atom/gradcheck.hpp"
#include "atom/nas/proxy.hpp"
#include "atom/version.hpp"

namespace atom::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDiverged = 3;
inline constexpr int kExitPreprocess = 4;
inline constexpr int kExitGradcheck = 5;

inline constexpr const char* kDataRootEnv = "ATOM_DATA_ROOT";

/// Training precision of every command except gradcheck.
using Real = float;

namespace fs = std::filesystem;
using nlohmann::json;

namespace detail {

inline std::string data_root() {
  const char* v = std::getenv(kDataRootEnv);
  return v && *v ? v : "data";
}

inline std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  io::Writer w;
  w.bytes(text.data(), text.size());
  w.save(path.string());
}

/// Raw splits of the configured dataset with the configured preprocessing
/// fitted on the training split. Whitening statistics are read from and
/// stored in `cfg.zca_cache` when it is set.
inline DatasetSplits<Real> prepare_data(const RunConfig& cfg) {
  DatasetSplits<Real> splits = load_dataset<Real>(cfg.dataset, data_root());
  if (cfg.preprocess != PreprocessMode::kZca || cfg.zca_cache.empty()) {
    preprocess_splits(splits, cfg.preprocess, cfg.zca_eps);
    return splits;
  }
  std::ostringstream key;
  key.precision(17);
  key << cfg.zca_eps;
  io::Fnv1a h;
  h.update_pod(dataset_fingerprint(splits.train));
  h.update(key.str());
  const fs::path cached = fs::path(cfg.zca_cache) / ("zca_" + io::hex64(h.digest()) + ".bin");
  PreprocessRecord rec;
  if (fs::exists(cached)) {
    rec = load_preprocess(cached.string());
  } else {
    rec = fit_preprocess(splits.train.images, cfg.preprocess, cfg.zca_eps);
    fs::create_directories(cfg.zca_cache);
    save_preprocess(rec, cached.string());
  }
  splits.train.images = apply_preprocess(rec, splits.train.images);
  splits.test.images = apply_preprocess(rec, splits.test.images);
  splits.train.preprocess = rec;
  splits.test.preprocess = rec;
  return splits;
}

/// Reproducibility record written before any compute starts.
struct Manifest {
  json doc;
  fs::path path;

  void save() const { write_text(path, doc.dump(2) + "\n"); }
};

inline Manifest start_manifest(const fs::path& out_dir, const std::string& command,
                               const std::string& invocation, const RunConfig& cfg,
                               const DatasetSplits<Real>& data, bool seed_overridden) {
  Manifest m;
  m.path = out_dir / "manifest.json";
  m.doc["tool"] = "atom";
  m.doc["version"] = kVersion;
  m.doc["command"] = command;
  m.doc["invocation"] = invocation;
  m.doc["precision"] = "float32";
  m.doc["config"] = cfg.to_ini();
  m.doc["config_hash"] = io::hex64(cfg.distill.hash());
  m.doc["eval_hash"] = io::hex64(cfg.eval.hash());
  m.doc["dataset"] = {
      {"name", data.name},
      {"root", cfg.dataset == "toy-fixture" ? std::string() : data_root()},
      {"fingerprint", io::hex64(dataset_fingerprint(data.train))},
      {"train_size", data.train.size()},
      {"test_size", data.test.size()},
      {"preprocess", to_string(data.train.preprocess.mode)},
      {"preprocess_fingerprint", io::hex64(data.train.preprocess.fingerprint())},
  };
  m.doc["seeds"] = {{"distill", cfg.distill.seed}, {"eval", cfg.eval.seed}, {"overridden", seed_overridden}};
  m.doc["started"] = utc_now();
  m.doc["status"] = "running";
  m.doc["outputs"] = json::object();
  m.save();
  return m;
}

inline void finish_manifest(Manifest& m, const std::string& status) {
  m.doc["finished"] = utc_now();
  m.doc["status"] = status;
  m.save();
}

inline std::string join_args(int argc, const char* const* argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

/// Preprocess record referenced by a container, resolved next to it.
/// Returns nullopt when the container has no usable reference.
inline std::optional<PreprocessRecord> referenced_preprocess(const SyntheticDataset<Real>& syn,
                                                             const fs::path& container) {
  if (syn.preprocess.path.empty()) return std::nullopt;
  const fs::path p = container.parent_path() / syn.preprocess.path;
  if (!fs::exists(p)) return std::nullopt;
  PreprocessRecord rec = load_preprocess(p.string());
  if (rec.fingerprint() != syn.preprocess.fingerprint || rec.mode != syn.preprocess.mode) {
    throw ContractError("preprocess record '" + p.string() + "' does not match the container's fingerprint");
  }
  return rec;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline RgbImage to_rgb(const Tensor<Real>& images, int index) {
  const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
  RgbImage img{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        img.pixels[(static_cast<std::size_t>(y) * w + x) * 3 + ch] =
            to_byte(images.at(index, c == 1 ? 0 : ch, y, x));
      }
  return img;
}

/// Tiles images on a near-square grid with a one-pixel black gap.
inline RgbImage montage(const std::vector<RgbImage>& tiles) {
  const int n = static_cast<int>(tiles.size());
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const int rows = (n + cols - 1) / cols;
  const int tw = tiles[0].width, th = tiles[0].height;
  RgbImage out;
  out.width = cols * tw + (cols - 1);
  out.height = rows * th + (rows - 1);
  out.pixels.assign(static_cast<std::size_t>(out.width) * out.height * 3, 0);
  for (int i = 0; i < n; ++i) {
    const int ox = (i % cols) * (tw + 1), oy = (i / cols) * (th + 1);
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x)
        for (int ch = 0; ch < 3; ++ch) {
          out.pixels[(static_cast<std::size_t>(oy + y) * out.width + ox + x) * 3 + ch] =
              tiles[static_cast<std::size_t>(i)].pixels[(static_cast<std::size_t>(y) * tw + x) * 3 + ch];
        }
  }
  return out;
}

}  // namespace detail

struct DistillArgs {
  std::string config;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string resume;
};

inline int cmd_distill(const DistillArgs& a, const std::string& invocation, std::ostream& out,
                       std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_config(a.config, true);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  if (a.seed) cfg.distill.seed = *a.seed;
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  const DatasetSplits<Real> data = detail::prepare_data(cfg);
  auto manifest = detail::start_manifest(dir, "distill", invocation, cfg, data, a.seed.has_value());

  save_preprocess(data.train.preprocess, (dir / "preprocess.bin").string());
  const fs::path ckpt_dir = dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  manifest.doc["outputs"] = {{"synthetic", "synthetic.bin"},
                             {"preprocess", "preprocess.bin"},
                             {"metrics", "metrics.csv"},
                             {"checkpoint", "checkpoint.bin"},
                             {"checkpoints", "checkpoints"}};
  manifest.save();

  DistillState<Real> st;
  if (!a.resume.empty()) {
    try {
      st = resume<Real>(a.resume, cfg.distill);
    } catch (const ConfigMismatchError& e) {
      err << "error: " << e.what() << '\n';
      detail::finish_manifest(manifest, "config-mismatch");
      return kExitConfig;
    }
    out << "resumed from " << a.resume << " at iteration " << st.iteration << '\n';
  } else {
    st = make_initial_state(cfg.distill, data.train);
  }
  st.synthetic.preprocess.path = "preprocess.bin";

  MetricsCsv csv((dir / "metrics.csv").string());
  for (const auto& m : st.metrics) csv.write(m);
  const long every = cfg.checkpoint_every;
  const long report_every = std::max(1L, cfg.distill.iterations / 10);
  try {
    while (st.iteration < cfg.distill.iterations) {
      step(st, cfg.distill, data.train);
      const StepMetrics& m = st.metrics.back();
      csv.write(m);
      if (every > 0 && st.iteration % every == 0) {
        std::ostringstream name;
        name << "ckpt_" << std::setw(6) << std::setfill('0') << st.iteration << ".bin";
        save_checkpoint(st, cfg.distill, (ckpt_dir / name.str()).string());
      }
      if (st.iteration % report_every == 0 || st.iteration == cfg.distill.iterations) {
        out << "iter " << st.iteration << "/" << cfg.distill.iterations << "  loss " << m.loss.total
            << "  (atom " << m.loss.atom << ", mmd " << m.loss.mmd << ")\n";
      }
    }
  } catch (const DivergenceError& e) {
    const fs::path diag = dir / "divergence.txt";
    std::ostringstream os;
    os << e.what() << "\niteration = " << e.iteration() << "\nconfig_hash = " << io::hex64(cfg.distill.hash())
       << "\nlast_checkpoint = checkpoint.bin\n";
    if (!st.metrics.empty()) os << "last_good_total_loss = " << st.metrics.back().loss.total << '\n';
    detail::write_text(diag, os.str());
    save_checkpoint(st, cfg.distill, (dir / "checkpoint.bin").string());
    manifest.doc["outputs"]["diagnostics"] = "divergence.txt";
    detail::finish_manifest(manifest, "diverged");
    err << "error: " << e.what() << "\ndiagnostics: " << diag.string() << '\n';
    return kExitDiverged;
  }
  save_checkpoint(st, cfg.distill, (dir / "checkpoint.bin").string());
  save_synthetic(st.synthetic, (dir / "synthetic.bin").string());
  manifest.doc["synthetic_hash"] = io::hex64(st.synthetic.content_hash());
  detail::finish_manifest(manifest, "ok");
  out << "wrote " << (dir / "synthetic.bin").string() << '\n';
  return kExitOk;
}

struct BaselineArgs {
  std::string config;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

/// Writes a frozen random real-image sample as a container (the baseline).
inline int cmd_baseline(const BaselineArgs& a, const std::string& invocation, std::ostream& out,
                        std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_config(a.config, true);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  if (a.seed) cfg.distill.seed = *a.seed;
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  const DatasetSplits<Real> data = detail::prepare_data(cfg);
  auto manifest = detail::start_manifest(dir, "baseline", invocation, cfg, data, a.seed.has_value());
  save_preprocess(data.train.preprocess, (dir / "preprocess.bin").string());
  SyntheticDataset<Real> s = random_baseline(data.train, cfg.distill.ipc, split_seed(cfg.distill.seed, 0));
  s.preprocess.path = "preprocess.bin";
  save_synthetic(s, (dir / "synthetic.bin").string());
  manifest.doc["outputs"] = {{"synthetic", "synthetic.bin"}, {"preprocess", "preprocess.bin"}};
  manifest.doc["synthetic_hash"] = io::hex64(s.content_hash());
  detail::finish_manifest(manifest, "ok");
  out << "wrote " << (dir / "synthetic.bin").string() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string synthetic;
  std::string config;
  std::string out_dir;  // optional
  std::optional<std::uint64_t> seed;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_config(a.config, false);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  if (a.seed) cfg.eval.seed = *a.seed;
  const SyntheticDataset<Real> syn = load_synthetic<Real>(a.synthetic);
  DatasetSplits<Real> data;
  try {
    if (auto rec = detail::referenced_preprocess(syn, a.synthetic)) {
      data = load_dataset<Real>(cfg.dataset, detail::data_root());
      data.test.images = apply_preprocess(*rec, data.test.images);
      data.test.preprocess = *rec;
    } else {
      data = detail::prepare_data(cfg);
    }
    require_same_preprocess(syn, data.test);
    if (syn.images.dim(1) != data.test.channels() || syn.images.dim(2) != data.test.height() ||
        syn.images.dim(3) != data.test.width()) {
      throw ContractError("container images " + syn.images.shape_string() +
                          " do not match the dataset image shape");
    }
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitPreprocess;
  }
  const EvalReport rep = evaluate(syn, data.test, cfg.eval);
  out << std::fixed << std::setprecision(2) << rep.label << ": " << rep.mean_acc << " ± " << rep.std_acc
      << " (n_models=" << rep.per_model.size() << ")\n";
  out << report_csv(rep);
  if (!a.out_dir.empty()) {
    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    detail::write_text(dir / "report.csv", report_csv(rep));
    json j = {{"mean_acc", rep.mean_acc},   {"std_acc", rep.std_acc},
              {"per_model", rep.per_model}, {"config_hash", io::hex64(rep.config_hash)},
              {"label", rep.label},         {"synthetic", a.synthetic},
              {"eval_config", cfg.to_ini()}};
    detail::write_text(dir / "report.json", j.dump(2) + "\n");
  }
  return kExitOk;
}

struct NasArgs {
  std::string synthetic;
  std::string config;
  std::string out_dir;
};

inline int cmd_nas(const NasArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_config(a.config, false);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  const SyntheticDataset<Real> proxy = load_synthetic<Real>(a.synthetic);
  const DatasetSplits<Real> data = detail::prepare_data(cfg);
  try {
    require_same_preprocess(proxy, data.test);
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitPreprocess;
  }
  EvalProtocol proto = cfg.eval;
  if (cfg.nas_epochs > 0) proto.epochs = cfg.nas_epochs;
  const nas::SearchGrid grid = cfg.nas_grid == "full" ? nas::SearchGrid{} : nas::SearchGrid::desk();
  nn::ConvNetSpec shape;
  shape.in_channels = data.train.channels();
  shape.in_height = data.train.height();
  shape.in_width = data.train.width();
  shape.num_classes = data.train.num_classes;
  const auto specs = nas::enumerate_search_space(grid, shape);
  out << "ranking " << specs.size() << " architectures\n";
  const auto res = nas::rank_on_proxy(specs, proxy, data.test, proto, cfg.nas_reference ? &data.train : nullptr);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  detail::write_text(dir / "nas.csv", nas::nas_csv(res));
  out << "spearman rho: ";
  if (res.spearman_rho) out << *res.spearman_rho << '\n';
  else out << "n/a\n";
  out << "proxy time " << res.proxy_time_ms / 1000.0 << " s";
  if (cfg.nas_reference) out << ", reference time " << res.reference_time_ms / 1000.0 << " s";
  out << "\nwrote " << (dir / "nas.csv").string() << '\n';
  return kExitOk;
}

struct ExportArgs {
  std::string synthetic;
  std::string out_dir;
};

inline int cmd_export_images(const ExportArgs& a, std::ostream& out, std::ostream& err) {
  const SyntheticDataset<Real> syn = load_synthetic<Real>(a.synthetic);
  PreprocessRecord rec;
  try {
    auto ref = detail::referenced_preprocess(syn, a.synthetic);
    if (ref) {
      rec = *ref;
    } else if (syn.preprocess.mode == PreprocessMode::kNone) {
      rec = identity_preprocess(syn.images.dim(1), syn.images.dim(2), syn.images.dim(3));
    } else {
      throw ContractError("container '" + a.synthetic + "' has no readable preprocess record (mode " +
                          to_string(syn.preprocess.mode) + ")");
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitPreprocess;
  }
  if (syn.images.dim(1) != 1 && syn.images.dim(1) != 3) {
    err << "error: cannot export images with " << syn.images.dim(1) << " channels\n";
    return kExitFailure;
  }
  const Tensor<Real> pixels = invert_preprocess(rec, syn.images);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  int written = 0;
  for (int k = 0; k < syn.num_classes; ++k) {
    std::vector<RgbImage> tiles;
    for (int j = 0; j < syn.ipc; ++j) {
      tiles.push_back(detail::to_rgb(pixels, syn.class_begin(k) + j));
      write_png((dir / ("class" + std::to_string(k) + "_idx" + std::to_string(j) + ".png")).string(), tiles.back());
      ++written;
    }
    write_png((dir / ("class" + std::to_string(k) + "_montage.png")).string(), detail::montage(tiles));
  }
  out << "wrote " << written << " images and " << syn.num_classes << " montages to " << dir.string() << '\n';
  return kExitOk;
}

struct GradcheckArgs {
  gradcheck::Options options;
};

inline int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  const auto results = gradcheck::run_all(a.options);
  std::vector<std::string> failing;
  out << "suite          max_rel_err  status\n";
  for (const auto& r : results) {
    std::ostringstream line;
    line << std::left << std::setw(14) << r.name << ' ' << std::scientific << std::setprecision(3)
         << r.rel_error << "    " << (r.passed ? "pass" : "FAIL") << '\n';
    out << line.str();
    if (!r.passed) failing.push_back(r.name);
  }
  if (!failing.empty()) {
    err << "gradient check failed:";
    for (const auto& f : failing) err << ' ' << f;
    err << '\n';
    return kExitGradcheck;
  }
  return kExitOk;
}

/// Entry point of the `atom` executable.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Attention-matching dataset distillation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  DistillArgs da;
  auto* distill = app.add_subcommand("distill", "Distill a synthetic set from a config file");
  distill->add_option("-c,--config", da.config, "Config file")->required();
  distill->add_option("-o,--out", da.out_dir, "Output directory")->required();
  distill->add_option("--seed", da.seed, "Override [Optimization] seed");
  distill->add_option("--resume", da.resume, "Resume from a checkpoint file");

  BaselineArgs ba;
  auto* baseline = app.add_subcommand("baseline", "Write a random real-image baseline container");
  baseline->add_option("-c,--config", ba.config, "Config file")->required();
  baseline->add_option("-o,--out", ba.out_dir, "Output directory")->required();
  baseline->add_option("--seed", ba.seed, "Override [Optimization] seed");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Train models on a synthetic set and score them");
  eval->add_option("-s,--synthetic", ea.synthetic, "Synthetic container")->required()->check(CLI::ExistingFile);
  eval->add_option("-c,--config", ea.config, "Config file")->required();
  eval->add_option("-o,--out", ea.out_dir, "Directory for report.csv and report.json");
  eval->add_option("--seed", ea.seed, "Override [Evaluation] seed");

  NasArgs na;
  auto* nas = app.add_subcommand("nas", "Rank architectures trained on a synthetic proxy set");
  nas->add_option("-s,--synthetic", na.synthetic, "Synthetic container")->required()->check(CLI::ExistingFile);
  nas->add_option("-c,--config", na.config, "Config file")->required();
  nas->add_option("-o,--out", na.out_dir, "Output directory")->required();

  ExportArgs xa;
  auto* exp = app.add_subcommand("export-images", "Write synthetic images as PNG files");
  exp->add_option("-s,--synthetic", xa.synthetic, "Synthetic container")->required()->check(CLI::ExistingFile);
  exp->add_option("-o,--out", xa.out_dir, "Output directory")->required();

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks in double precision");
  gc->add_option("--batch", ga.options.batch, "Synthetic batch size")->check(CLI::PositiveNumber);
  gc->add_option("--size", ga.options.size, "Input height and width")->check(CLI::PositiveNumber);
  gc->add_option("--width", ga.options.width, "Network width");
  gc->add_option("--seed", ga.options.seed, "Seed for inputs and weights");
  gc->add_option("--corrupt", ga.options.corrupt, "Perturb the analytic gradient of one suite")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const std::string invocation = detail::join_args(argc, argv);
  try {
    if (*distill) return cmd_distill(da, invocation, out, err);
    if (*baseline) return cmd_baseline(ba, invocation, out, err);
    if (*eval) return cmd_eval(ea, out, err);
    if (*nas) return cmd_nas(na, out, err);
    if (*exp) return cmd_export_images(xa, out, err);
    if (*gc) return cmd_gradcheck(ga, out, err);
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UnsupportedDatasetError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitPreprocess;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace atom::cli
