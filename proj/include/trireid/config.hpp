#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "trireid/types.hpp"

namespace trireid {

/// Every knob of a run. Defaults reproduce the reference recipe; anything
/// left out of a config file keeps its default.
struct Config {
  int num_identities_per_batch = 8;   // P
  int tracklets_per_identity = 4;     // K
  int frames_per_clip = 8;            // T
  double lambda1 = 1.0;               // triplet weight
  double lambda2 = 1.5;               // style-attack weight
  double lambda3 = 1.0;               // edge-reconstruction weight
  double lambda4 = 1.5;               // video-to-memory weight
  double tau = 0.07;                  // contrastive temperature
  double lr_init = 3.5e-4;
  int epochs = 120;
  int64_t seed = 42;
  StreamMask stream_mask{};
  int image_height = 32;
  int image_width = 16;
  int embed_dim = 32;
  int fusion_dim = 32;
  double triplet_margin = 0.3;
  double label_smoothing = 0.1;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 10.0;
  double norm_mean = 0.5;
  double norm_std = 0.25;
  std::array<double, 9> edge_kernel{0, 1, 0, 1, -4, 1, 0, 1, 0};
  double edge_offset = 0.0;
  bool cr_on_pixels = false;          // edge-reconstruction loss on raw
                                      // anaglyph pixels instead of features
  bool per_stream_id_heads = false;   // auxiliary identity heads per stream
  bool camera_filter = true;          // drop same-camera gallery entries
  int steps_per_epoch = 0;            // 0 = derive from the train split size
  int checkpoint_every_epochs = 10;
  int st1_channels = 8;
  int st2_layers = 1;
  int st2_patch = 4;
  int st3_channels = 8;

  bool operator==(const Config&) const = default;
};

/// A config key the text format understands: formatting, parsing, and the
/// one-line description used by the CLI help text.
struct ConfigKey {
  std::string name;
  std::string description;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

const std::vector<ConfigKey>& config_keys();

Config default_config();

/// Parses `key = value` lines; '#' starts a comment, blank lines are
/// skipped. Unknown keys and malformed values raise ConfigError naming
/// the key. Validates before returning.
Config parse_config_text(const std::string& text);
Config load_config(const std::string& path);

/// Applies one `key=value` override (CLI --set). Does not re-validate;
/// callers validate once after the last override.
void apply_override(Config& cfg, const std::string& assignment);

/// Throws ConfigError naming the offending key.
void validate_config(const Config& cfg);

/// Emits every key in registry order; parse_config_text(serialize_config(c))
/// reproduces c exactly.
std::string serialize_config(const Config& cfg);

/// One "key = default  description" block per key, for --help.
std::string config_help();

/// FNV-1a of the serialized config, stamped into checkpoints.
uint64_t config_hash(const Config& cfg);

/// lr_init * 0.5 * (1 + cos(pi * step / total_steps)).
/// Requires 0 <= step <= total_steps and total_steps > 0.
double cosine_lr(int step, int total_steps, double lr_init);

}  // namespace trireid
