// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <sstream>
#include <string>

#include "atom/attention/attention.hpp"
#include "atom/augment/dsa.hpp"
#include "atom/core/binary_io.hpp"
#include "atom/core/error.hpp"
#include "atom/nn/spec.hpp"

namespace atom {

/// Image learning rate by images-per-class: 1.0 up to 50, 10.0 above.
inline double default_lr_images(int ipc) { return ipc <= 50 ? 1.0 : 10.0; }

/// Hyperparameters of one distillation run.
struct DistillConfig {
  int ipc = 10;
  long iterations = 8000;
  double lr_images = 1.0;
  double image_momentum = 0.5;
  double weight_decay_images = 0.0;
  double lambda = 0.01;
  AttentionConfig attention;
  int batch_real = 128;
  /// Synthetic images per class fed per step; 0 uses all ipc images.
  int syn_batch_cap = 0;
  std::uint64_t seed = 0;
  nn::TapPoint tap = nn::TapPoint::kPostPool;
  bool augment = true;
  dsa::Config dsa;
  /// Architecture; input shape and class count are taken from the dataset.
  nn::ConvNetSpec net;
  double abort_loss = 1e6;

  void validate() const {
    auto fail = [](const std::string& m) { throw ParameterError("distill config: " + m); };
    if (ipc < 1) fail("ipc must be >= 1");
    if (iterations < 0) fail("iterations must be >= 0");
    if (!(lr_images >= 0.0 && lr_images <= 10.0)) fail("lr_images must lie in [0, 10]");
    if (!(image_momentum >= 0.0 && image_momentum < 1.0)) fail("image_momentum must lie in [0, 1)");
    if (!(weight_decay_images >= 0.0)) fail("weight_decay_images must be >= 0");
    if (!(lambda >= 0.0)) fail("lambda must be >= 0");
    if (batch_real < 1) fail("batch_real must be >= 1");
    if (syn_batch_cap < 0) fail("syn_batch_cap must be >= 0");
    if (!(abort_loss > 0.0)) fail("abort_loss must be > 0");
    if (augment && !dsa.any_enabled()) fail("augmentation is on but no op is enabled");
    attention.validate();
  }

  /// Canonical "key = value" listing of every field; the config hash is
  /// taken over this text.
  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "ipc = " << ipc << '\n'
       << "iterations = " << iterations << '\n'
       << "lr_images = " << lr_images << '\n'
       << "image_momentum = " << image_momentum << '\n'
       << "weight_decay_images = " << weight_decay_images << '\n'
       << "lambda = " << lambda << '\n'
       << "p_s = " << attention.p_s << '\n'
       << "p_c = " << attention.p_c << '\n'
       << "mode = " << to_string(attention.mode) << '\n'
       << "spatial_weight = " << attention.spatial_weight << '\n'
       << "channel_weight = " << attention.channel_weight << '\n'
       << "norm_eps = " << attention.norm_eps << '\n'
       << "batch_real = " << batch_real << '\n'
       << "syn_batch_cap = " << syn_batch_cap << '\n'
       << "seed = " << seed << '\n'
       << "tap_point = " << nn::to_string(tap) << '\n'
       << "augment = " << (augment ? "true" : "false") << '\n';
    for (dsa::Op op : dsa::kAllOps) {
      os << "aug_" << dsa::to_string(op) << " = " << (dsa.is_enabled(op) ? "true" : "false") << '\n';
    }
    os << "brightness = " << dsa.brightness << '\n'
       << "saturation = " << dsa.saturation << '\n'
       << "contrast = " << dsa.contrast << '\n'
       << "crop_pad = " << dsa.crop_pad << '\n'
       << "cutout = " << dsa.cutout << '\n'
       << "flip_p = " << dsa.flip_p << '\n'
       << "scale = " << dsa.scale << '\n'
       << "rotate_deg = " << dsa.rotate_deg << '\n'
       << "per_image = " << (dsa.per_image ? "true" : "false") << '\n'
       << "net = " << net.canonical() << '\n'
       << "abort_loss = " << abort_loss << '\n';
    return os.str();
  }

  std::uint64_t hash() const {
    io::Fnv1a h;
    h.update(canonical());
    return h.digest();
  }
};

}  // namespace atom
