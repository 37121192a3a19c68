#include "trireid/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "trireid/errors.hpp"

namespace trireid {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_int(int64_t v) { return std::to_string(v); }

double parse_double(const std::string& key, const std::string& s) {
  try {
    size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
  }
}

int64_t parse_int(const std::string& key, const std::string& s) {
  try {
    size_t used = 0;
    int64_t v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + s +
                      "'");
  }
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + s + "'");
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  auto di = [](int Config::* f) {
    return [f](const Config& c) { return fmt_int(c.*f); };
  };
  auto si = [](int Config::* f, const char* name) {
    return [f, name](Config& c, const std::string& v) {
      c.*f = static_cast<int>(parse_int(name, v));
    };
  };
  auto dd = [](double Config::* f) {
    return [f](const Config& c) { return fmt_double(c.*f); };
  };
  auto sd = [](double Config::* f, const char* name) {
    return [f, name](Config& c, const std::string& v) {
      c.*f = parse_double(name, v);
    };
  };
  auto db = [](bool Config::* f) {
    return [f](const Config& c) { return std::string(c.*f ? "true" : "false"); };
  };
  auto sb = [](bool Config::* f, const char* name) {
    return [f, name](Config& c, const std::string& v) {
      c.*f = parse_bool(name, v);
    };
  };

  static const std::vector<ConfigKey> keys = {
      {"num_identities_per_batch", "identities per training batch (P)",
       di(&Config::num_identities_per_batch),
       si(&Config::num_identities_per_batch, "num_identities_per_batch")},
      {"tracklets_per_identity", "tracklets sampled per identity (K)",
       di(&Config::tracklets_per_identity),
       si(&Config::tracklets_per_identity, "tracklets_per_identity")},
      {"frames_per_clip", "frames sampled per tracklet (T)",
       di(&Config::frames_per_clip),
       si(&Config::frames_per_clip, "frames_per_clip")},
      {"lambda1", "weight of the triplet loss", dd(&Config::lambda1),
       sd(&Config::lambda1, "lambda1")},
      {"lambda2", "weight of the style-attack loss", dd(&Config::lambda2),
       sd(&Config::lambda2, "lambda2")},
      {"lambda3", "weight of the edge-reconstruction loss",
       dd(&Config::lambda3), sd(&Config::lambda3, "lambda3")},
      {"lambda4", "weight of the video-to-memory loss", dd(&Config::lambda4),
       sd(&Config::lambda4, "lambda4")},
      {"tau", "temperature of the video-to-memory loss", dd(&Config::tau),
       sd(&Config::tau, "tau")},
      {"lr_init", "initial learning rate", dd(&Config::lr_init),
       sd(&Config::lr_init, "lr_init")},
      {"epochs", "training epochs", di(&Config::epochs),
       si(&Config::epochs, "epochs")},
      {"seed", "root random seed",
       [](const Config& c) { return fmt_int(c.seed); },
       [](Config& c, const std::string& v) { c.seed = parse_int("seed", v); }},
      {"stream_mask", "enabled streams, comma-joined subset of st1,st2,st3",
       [](const Config& c) { return c.stream_mask.format(); },
       [](Config& c, const std::string& v) { c.stream_mask = StreamMask::parse(v); }},
      {"image_height", "input frame height in pixels",
       di(&Config::image_height), si(&Config::image_height, "image_height")},
      {"image_width", "input frame width in pixels", di(&Config::image_width),
       si(&Config::image_width, "image_width")},
      {"embed_dim", "per-stream feature width", di(&Config::embed_dim),
       si(&Config::embed_dim, "embed_dim")},
      {"fusion_dim", "fused feature width", di(&Config::fusion_dim),
       si(&Config::fusion_dim, "fusion_dim")},
      {"triplet_margin", "margin of the batch-hard triplet loss",
       dd(&Config::triplet_margin), sd(&Config::triplet_margin, "triplet_margin")},
      {"label_smoothing", "label smoothing of the identity loss",
       dd(&Config::label_smoothing),
       sd(&Config::label_smoothing, "label_smoothing")},
      {"weight_decay", "L2 penalty applied by the optimizer",
       dd(&Config::weight_decay), sd(&Config::weight_decay, "weight_decay")},
      {"adam_beta1", "first-moment decay", dd(&Config::adam_beta1),
       sd(&Config::adam_beta1, "adam_beta1")},
      {"adam_beta2", "second-moment decay", dd(&Config::adam_beta2),
       sd(&Config::adam_beta2, "adam_beta2")},
      {"adam_eps", "optimizer denominator floor", dd(&Config::adam_eps),
       sd(&Config::adam_eps, "adam_eps")},
      {"grad_clip_norm", "global gradient-norm clip", dd(&Config::grad_clip_norm),
       sd(&Config::grad_clip_norm, "grad_clip_norm")},
      {"norm_mean", "pixel standardization mean", dd(&Config::norm_mean),
       sd(&Config::norm_mean, "norm_mean")},
      {"norm_std", "pixel standardization std", dd(&Config::norm_std),
       sd(&Config::norm_std, "norm_std")},
      {"edge_kernel", "row-major 3x3 edge operator, 9 comma-joined numbers",
       [](const Config& c) {
         std::string out;
         for (int i = 0; i < 9; ++i) {
           if (i) out += ',';
           out += fmt_double(c.edge_kernel[static_cast<size_t>(i)]);
         }
         return out;
       },
       [](Config& c, const std::string& v) {
         std::array<double, 9> k{};
         size_t pos = 0;
         for (int i = 0; i < 9; ++i) {
           size_t comma = v.find(',', pos);
           bool last = comma == std::string::npos;
           if (last != (i == 8))
             throw ConfigError("key 'edge_kernel': expected 9 numbers");
           std::string tok = trim(v.substr(pos, last ? v.size() - pos
                                                     : comma - pos));
           k[static_cast<size_t>(i)] = parse_double("edge_kernel", tok);
           pos = comma + 1;
         }
         c.edge_kernel = k;
       }},
      {"edge_offset", "scalar added after the edge correlation",
       dd(&Config::edge_offset), sd(&Config::edge_offset, "edge_offset")},
      {"cr_on_pixels",
       "edge-reconstruction loss on raw anaglyph pixels instead of features",
       db(&Config::cr_on_pixels), sb(&Config::cr_on_pixels, "cr_on_pixels")},
      {"per_stream_id_heads", "auxiliary identity head per enabled stream",
       db(&Config::per_stream_id_heads),
       sb(&Config::per_stream_id_heads, "per_stream_id_heads")},
      {"camera_filter", "exclude same-camera same-id gallery entries",
       db(&Config::camera_filter), sb(&Config::camera_filter, "camera_filter")},
      {"steps_per_epoch", "optimizer steps per epoch, 0 derives from data size",
       di(&Config::steps_per_epoch),
       si(&Config::steps_per_epoch, "steps_per_epoch")},
      {"checkpoint_every_epochs", "checkpoint cadence",
       di(&Config::checkpoint_every_epochs),
       si(&Config::checkpoint_every_epochs, "checkpoint_every_epochs")},
      {"st1_channels", "stem width of the appearance stream",
       di(&Config::st1_channels), si(&Config::st1_channels, "st1_channels")},
      {"st2_layers", "attention blocks in the sequence stream",
       di(&Config::st2_layers), si(&Config::st2_layers, "st2_layers")},
      {"st2_patch", "patch size of the sequence stream",
       di(&Config::st2_patch), si(&Config::st2_patch, "st2_patch")},
      {"st3_channels", "stem width of the edge stream",
       di(&Config::st3_channels), si(&Config::st3_channels, "st3_channels")},
  };
  return keys;
}

Config default_config() { return Config{}; }

void apply_override(Config& cfg, const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not key=value");
  std::string key = trim(assignment.substr(0, eq));
  std::string value = trim(assignment.substr(eq + 1));
  for (const auto& k : config_keys()) {
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

Config parse_config_text(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        " is not key = value: '" + line + "'");
    apply_override(cfg, line);
  }
  validate_config(cfg);
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void validate_config(const Config& cfg) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("key '" + key + "': " + why);
  };
  if (cfg.num_identities_per_batch < 2)
    fail("num_identities_per_batch", "must be >= 2");
  if (cfg.tracklets_per_identity < 2)
    fail("tracklets_per_identity", "must be >= 2");
  if (cfg.frames_per_clip < 1) fail("frames_per_clip", "must be >= 1");
  if (cfg.lambda1 < 0) fail("lambda1", "must be >= 0");
  if (cfg.lambda2 < 0) fail("lambda2", "must be >= 0");
  if (cfg.lambda3 < 0) fail("lambda3", "must be >= 0");
  if (cfg.lambda4 < 0) fail("lambda4", "must be >= 0");
  if (!(cfg.tau > 0)) fail("tau", "must be > 0");
  if (!(cfg.lr_init > 0)) fail("lr_init", "must be > 0");
  if (cfg.epochs < 1) fail("epochs", "must be >= 1");
  if (!cfg.stream_mask.any()) fail("stream_mask", "must enable a stream");
  if (cfg.image_height < 8) fail("image_height", "must be >= 8");
  if (cfg.image_width < 8) fail("image_width", "must be >= 8");
  if (cfg.embed_dim < 1) fail("embed_dim", "must be >= 1");
  if (cfg.fusion_dim < 1) fail("fusion_dim", "must be >= 1");
  if (cfg.triplet_margin < 0) fail("triplet_margin", "must be >= 0");
  if (cfg.label_smoothing < 0 || cfg.label_smoothing >= 1)
    fail("label_smoothing", "must be in [0, 1)");
  if (cfg.weight_decay < 0) fail("weight_decay", "must be >= 0");
  if (cfg.adam_beta1 < 0 || cfg.adam_beta1 >= 1)
    fail("adam_beta1", "must be in [0, 1)");
  if (cfg.adam_beta2 < 0 || cfg.adam_beta2 >= 1)
    fail("adam_beta2", "must be in [0, 1)");
  if (!(cfg.adam_eps > 0)) fail("adam_eps", "must be > 0");
  if (!(cfg.grad_clip_norm > 0)) fail("grad_clip_norm", "must be > 0");
  if (!(cfg.norm_std > 0)) fail("norm_std", "must be > 0");
  if (cfg.steps_per_epoch < 0) fail("steps_per_epoch", "must be >= 0");
  if (cfg.checkpoint_every_epochs < 1)
    fail("checkpoint_every_epochs", "must be >= 1");
  if (cfg.st1_channels < 1) fail("st1_channels", "must be >= 1");
  if (cfg.st2_layers < 1) fail("st2_layers", "must be >= 1");
  if (cfg.st2_patch < 1) fail("st2_patch", "must be >= 1");
  if (cfg.image_height % cfg.st2_patch != 0)
    fail("st2_patch", "must divide image_height");
  if (cfg.image_width % cfg.st2_patch != 0)
    fail("st2_patch", "must divide image_width");
  if (cfg.st3_channels < 1) fail("st3_channels", "must be >= 1");
}

std::string serialize_config(const Config& cfg) {
  std::string out;
  for (const auto& k : config_keys()) {
    out += k.name;
    out += " = ";
    out += k.get(cfg);
    out += '\n';
  }
  return out;
}

std::string config_help() {
  Config defaults;
  std::string out;
  for (const auto& k : config_keys()) {
    out += "  " + k.name + " = " + k.get(defaults) + "\n      " +
           k.description + "\n";
  }
  return out;
}

uint64_t config_hash(const Config& cfg) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : serialize_config(cfg)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

double cosine_lr(int step, int total_steps, double lr_init) {
  if (total_steps <= 0)
    throw std::invalid_argument("cosine_lr: total_steps must be > 0");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("cosine_lr: step out of [0, total_steps]");
  return lr_init * 0.5 *
         (1.0 + std::cos(3.14159265358979323846 * step / total_steps));
}

}  // namespace trireid
