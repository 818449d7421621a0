// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration files: flat `key = value` lines grouped under sections
//
//   [Data]               dataset, preprocess, zca_eps, zca_cache
//   [Optimization]       ipc, iterations, lr_images, image_momentum, ...
//   [Loss Function]      mode, p_s, p_c, lambda, ...
//   [DSA Augmentations]  augment, ops, ranges
//   [Encoder Parameters] depth, width, activation, norm, pooling
//   [Evaluation]         n_models, epochs, lr_net, ...
//   [NAS]                grid, reference, epochs
//
// Comments start with '#' or ';'. Every error names the file and line.

#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "atom/core/error.hpp"
#include "atom/data/preprocess.hpp"
#include "atom/engine/config.hpp"
#include "atom/eval/harness.hpp"

namespace atom::cli {

class ConfigError : public ParameterError {
 public:
  using ParameterError::ParameterError;
};

struct RunConfig {
  std::string dataset = "toy-fixture";
  PreprocessMode preprocess = PreprocessMode::kNone;
  double zca_eps = 0.1;
  /// Directory for cached whitening statistics; empty disables caching.
  std::string zca_cache;
  DistillConfig distill;
  /// Checkpoint cadence in iterations; 0 writes only the final checkpoint.
  long checkpoint_every = 0;
  EvalProtocol eval;
  std::string nas_grid = "desk";  // "desk" or "full"
  bool nas_reference = true;
  int nas_epochs = 0;  // 0 keeps the evaluation epochs

  /// Resolved configuration in file syntax.
  std::string to_ini() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw ParameterError("expected a boolean, got '" + v + "'");
}

template <typename N>
N parse_number(const std::string& v) {
  std::istringstream is(v);
  N out{};
  is >> out;
  if (!is || !is.eof()) throw ParameterError("expected a number, got '" + v + "'");
  return out;
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

inline std::map<std::string, std::map<std::string, Setter>> key_table() {
  std::map<std::string, std::map<std::string, Setter>> t;
  auto& data = t["Data"];
  data["dataset"] = [](RunConfig& c, const std::string& v) { c.dataset = v; };
  data["preprocess"] = [](RunConfig& c, const std::string& v) { c.preprocess = parse_preprocess_mode(v); };
  data["zca_eps"] = [](RunConfig& c, const std::string& v) { c.zca_eps = parse_number<double>(v); };
  data["zca_cache"] = [](RunConfig& c, const std::string& v) { c.zca_cache = v; };

  auto& opt = t["Optimization"];
  opt["ipc"] = [](RunConfig& c, const std::string& v) { c.distill.ipc = parse_number<int>(v); };
  opt["iterations"] = [](RunConfig& c, const std::string& v) { c.distill.iterations = parse_number<long>(v); };
  opt["lr_images"] = [](RunConfig& c, const std::string& v) { c.distill.lr_images = parse_number<double>(v); };
  opt["image_momentum"] = [](RunConfig& c, const std::string& v) {
    c.distill.image_momentum = parse_number<double>(v);
  };
  opt["weight_decay_images"] = [](RunConfig& c, const std::string& v) {
    c.distill.weight_decay_images = parse_number<double>(v);
  };
  opt["batch_real"] = [](RunConfig& c, const std::string& v) { c.distill.batch_real = parse_number<int>(v); };
  opt["syn_batch_cap"] = [](RunConfig& c, const std::string& v) {
    c.distill.syn_batch_cap = parse_number<int>(v);
  };
  opt["seed"] = [](RunConfig& c, const std::string& v) { c.distill.seed = parse_number<std::uint64_t>(v); };
  opt["checkpoint_every"] = [](RunConfig& c, const std::string& v) {
    c.checkpoint_every = parse_number<long>(v);
  };
  opt["abort_loss"] = [](RunConfig& c, const std::string& v) { c.distill.abort_loss = parse_number<double>(v); };

  auto& loss = t["Loss Function"];
  loss["mode"] = [](RunConfig& c, const std::string& v) { c.distill.attention.mode = parse_match_mode(v); };
  loss["p_s"] = [](RunConfig& c, const std::string& v) { c.distill.attention.p_s = parse_number<double>(v); };
  loss["p_c"] = [](RunConfig& c, const std::string& v) { c.distill.attention.p_c = parse_number<double>(v); };
  loss["lambda"] = [](RunConfig& c, const std::string& v) { c.distill.lambda = parse_number<double>(v); };
  loss["spatial_weight"] = [](RunConfig& c, const std::string& v) {
    c.distill.attention.spatial_weight = parse_number<double>(v);
  };
  loss["channel_weight"] = [](RunConfig& c, const std::string& v) {
    c.distill.attention.channel_weight = parse_number<double>(v);
  };
  loss["norm_eps"] = [](RunConfig& c, const std::string& v) {
    c.distill.attention.norm_eps = parse_number<double>(v);
  };
  loss["tap_point"] = [](RunConfig& c, const std::string& v) { c.distill.tap = nn::parse_tap_point(v); };

  auto& aug = t["DSA Augmentations"];
  aug["augment"] = [](RunConfig& c, const std::string& v) { c.distill.augment = parse_bool(v); };
  aug["ops"] = [](RunConfig& c, const std::string& v) {
    c.distill.dsa.enabled.fill(false);
    for (const auto& op : split_list(v)) c.distill.dsa.set_enabled(dsa::parse_op(op), true);
  };
  aug["brightness"] = [](RunConfig& c, const std::string& v) { c.distill.dsa.brightness = parse_number<double>(v); };
  aug["saturation"] = [](RunConfig& c, const std::string& v) { c.distill.dsa.saturation = parse_number<double>(v); };
  aug["contrast"] = [](RunConfig& c, const std::string& v) { c.distill.dsa.contrast = parse_number<double>(v); };
  aug["crop_pad"] = [](RunConfig& c, const std::string& v) { c.distill.dsa.crop_pad = parse_number<double>(v); };
  aug["cutout"] = [](RunConfig& c, const std::string& v) { c.distill.dsa.cutout = parse_number<double>(v); };
  aug["flip_p"] = [](RunConfig& c, const std::string& v) { c.distill.dsa.flip_p = parse_number<double>(v); };
  aug["scale"] = [](RunConfig& c, const std::string& v) { c.distill.dsa.scale = parse_number<double>(v); };
  aug["rotate_deg"] = [](RunConfig& c, const std::string& v) { c.distill.dsa.rotate_deg = parse_number<double>(v); };
  aug["per_image"] = [](RunConfig& c, const std::string& v) { c.distill.dsa.per_image = parse_bool(v); };

  auto& enc = t["Encoder Parameters"];
  enc["depth"] = [](RunConfig& c, const std::string& v) { c.distill.net.depth = parse_number<int>(v); };
  enc["width"] = [](RunConfig& c, const std::string& v) { c.distill.net.width = parse_number<int>(v); };
  enc["activation"] = [](RunConfig& c, const std::string& v) { c.distill.net.activation = nn::parse_activation(v); };
  enc["norm"] = [](RunConfig& c, const std::string& v) { c.distill.net.norm = nn::parse_norm(v); };
  enc["pooling"] = [](RunConfig& c, const std::string& v) { c.distill.net.pooling = nn::parse_pooling(v); };

  auto& ev = t["Evaluation"];
  ev["n_models"] = [](RunConfig& c, const std::string& v) { c.eval.n_models = parse_number<int>(v); };
  ev["epochs"] = [](RunConfig& c, const std::string& v) { c.eval.epochs = parse_number<int>(v); };
  ev["lr_net"] = [](RunConfig& c, const std::string& v) { c.eval.lr_net = parse_number<double>(v); };
  ev["momentum"] = [](RunConfig& c, const std::string& v) { c.eval.net_momentum = parse_number<double>(v); };
  ev["weight_decay"] = [](RunConfig& c, const std::string& v) { c.eval.weight_decay = parse_number<double>(v); };
  ev["decay_rate"] = [](RunConfig& c, const std::string& v) { c.eval.decay_rate = parse_number<double>(v); };
  ev["decay_step"] = [](RunConfig& c, const std::string& v) { c.eval.decay_step = parse_number<int>(v); };
  ev["batch_cap"] = [](RunConfig& c, const std::string& v) { c.eval.batch_cap = parse_number<int>(v); };
  ev["augment"] = [](RunConfig& c, const std::string& v) { c.eval.augment = parse_bool(v); };
  ev["arch"] = [](RunConfig& c, const std::string& v) { c.eval.arch = nn::parse_spec(v, c.eval.arch); };
  ev["seed"] = [](RunConfig& c, const std::string& v) { c.eval.seed = parse_number<std::uint64_t>(v); };

  auto& nas = t["NAS"];
  nas["grid"] = [](RunConfig& c, const std::string& v) {
    if (v != "desk" && v != "full") throw ParameterError("grid must be desk or full, got '" + v + "'");
    c.nas_grid = v;
  };
  nas["reference"] = [](RunConfig& c, const std::string& v) { c.nas_reference = parse_bool(v); };
  nas["epochs"] = [](RunConfig& c, const std::string& v) { c.nas_epochs = parse_number<int>(v); };
  return t;
}

}  // namespace detail

/// Parses configuration text. `name` is used in messages. When `require_ipc`
/// is set, a missing [Optimization] ipc key is an error. The evaluation
/// architecture defaults to the encoder when [Evaluation] arch is absent.
inline RunConfig parse_config(std::istream& in, const std::string& name, bool require_ipc) {
  const auto table = detail::key_table();
  RunConfig cfg;
  std::string section;
  std::set<std::string> seen;
  bool eval_arch_set = false;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    const std::string where = name + ":" + std::to_string(lineno) + ": ";
    std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(where + "unterminated section header");
      section = detail::trim(s.substr(1, s.size() - 2));
      if (!table.count(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = detail::trim(s.substr(0, eq));
    const std::string value = detail::trim(s.substr(eq + 1));
    if (section.empty()) throw ConfigError(where + "key '" + key + "' appears before any section");
    const auto& keys = table.at(section);
    const auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
    if (!seen.insert(section + "." + key).second) {
      throw ConfigError(where + "duplicate key '" + key + "' in [" + section + "]");
    }
    try {
      it->second(cfg, value);
    } catch (const Error& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
    if (section == "Evaluation" && key == "arch") eval_arch_set = true;
  }
  if (require_ipc && !seen.count("Optimization.ipc")) {
    throw ConfigError(name + ": missing required key 'ipc' in [Optimization]");
  }
  if (!eval_arch_set) cfg.eval.arch = cfg.distill.net;
  try {
    cfg.distill.validate();
    cfg.eval.validate();
    if (cfg.checkpoint_every < 0) throw ParameterError("checkpoint_every must be >= 0");
    if (cfg.nas_epochs < 0) throw ParameterError("NAS epochs must be >= 0");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(name + ": " + e.what());
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path, bool require_ipc) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  return parse_config(in, path, require_ipc);
}

inline std::string RunConfig::to_ini() const {
  std::ostringstream os;
  os.precision(17);
  const auto& d = distill;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "[Data]\ndataset = " << dataset << "\npreprocess = " << to_string(preprocess)
     << "\nzca_eps = " << zca_eps << "\n";
  if (!zca_cache.empty()) os << "zca_cache = " << zca_cache << "\n";
  os << "\n[Optimization]\nipc = " << d.ipc << "\niterations = " << d.iterations
     << "\nlr_images = " << d.lr_images << "\nimage_momentum = " << d.image_momentum
     << "\nweight_decay_images = " << d.weight_decay_images << "\nbatch_real = " << d.batch_real
     << "\nsyn_batch_cap = " << d.syn_batch_cap << "\nseed = " << d.seed
     << "\ncheckpoint_every = " << checkpoint_every << "\nabort_loss = " << d.abort_loss << "\n";
  os << "\n[Loss Function]\nmode = " << to_string(d.attention.mode) << "\np_s = " << d.attention.p_s
     << "\np_c = " << d.attention.p_c << "\nlambda = " << d.lambda
     << "\nspatial_weight = " << d.attention.spatial_weight
     << "\nchannel_weight = " << d.attention.channel_weight << "\nnorm_eps = " << d.attention.norm_eps
     << "\ntap_point = " << nn::to_string(d.tap) << "\n";
  os << "\n[DSA Augmentations]\naugment = " << b(d.augment) << "\nops = ";
  bool first = true;
  for (dsa::Op op : dsa::kAllOps) {
    if (!d.dsa.is_enabled(op)) continue;
    os << (first ? "" : ", ") << dsa::to_string(op);
    first = false;
  }
  os << "\nbrightness = " << d.dsa.brightness << "\nsaturation = " << d.dsa.saturation
     << "\ncontrast = " << d.dsa.contrast << "\ncrop_pad = " << d.dsa.crop_pad
     << "\ncutout = " << d.dsa.cutout << "\nflip_p = " << d.dsa.flip_p << "\nscale = " << d.dsa.scale
     << "\nrotate_deg = " << d.dsa.rotate_deg << "\nper_image = " << b(d.dsa.per_image) << "\n";
  os << "\n[Encoder Parameters]\ndepth = " << d.net.depth << "\nwidth = " << d.net.width
     << "\nactivation = " << nn::to_string(d.net.activation) << "\nnorm = " << nn::to_string(d.net.norm)
     << "\npooling = " << nn::to_string(d.net.pooling) << "\n";
  os << "\n[Evaluation]\nn_models = " << eval.n_models << "\nepochs = " << eval.epochs
     << "\nlr_net = " << eval.lr_net << "\nmomentum = " << eval.net_momentum
     << "\nweight_decay = " << eval.weight_decay << "\ndecay_rate = " << eval.decay_rate
     << "\ndecay_step = " << eval.decay_step << "\nbatch_cap = " << eval.batch_cap
     << "\naugment = " << b(eval.augment) << "\narch = " << eval.arch.canonical()
     << "\nseed = " << eval.seed << "\n";
  os << "\n[NAS]\ngrid = " << nas_grid << "\nreference = " << b(nas_reference) << "\nepochs = " << nas_epochs
     << "\n";
  return os.str();
}

}  // namespace atom::cli
