#include "trireid/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>

#include "trireid/image.hpp"

namespace trireid {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kGoldenAngle = 2.39996322972865332;
constexpr int kCamerasPerCell = 2;

struct Appearance {
  double r, g, b;       // base blob color
  double stripe_freq;   // vertical stripe frequency in unit coordinates
  double stripe_phase;
};

/// Pure function of the identity index. Gray levels form an even ladder
/// and the chroma offset carries zero luma, so infrared (luma-mapped)
/// frames stay exactly as separable as visible ones.
Appearance appearance_of(int id, int total_ids) {
  const double t =
      total_ids > 1 ? static_cast<double>(id) / (total_ids - 1) : 0.5;
  const double level = 0.25 + 0.6 * t;
  const double theta = id * kGoldenAngle;
  const double hr = 0.5 + 0.5 * std::cos(theta);
  const double hg = 0.5 + 0.5 * std::cos(theta - 2.0 * kPi / 3.0);
  const double hb = 0.5 + 0.5 * std::cos(theta + 2.0 * kPi / 3.0);
  const double hl = luma601(hr, hg, hb);
  Appearance a;
  a.r = level + 0.12 * (hr - hl);
  a.g = level + 0.12 * (hg - hl);
  a.b = level + 0.12 * (hb - hl);
  a.stripe_freq = 3.0 + id % 5;
  a.stripe_phase = id * kGoldenAngle * 0.5;
  return a;
}

struct FrameGeometry {
  double cx, cy;  // blob center in unit coordinates
};

/// Renders one frame at (h, w). squash_y < 1 flattens the blob the way a
/// top-down view would.
Image render(int h, int w, double squash_y, const Appearance& ap,
             const FrameGeometry& geo, Rng& rng) {
  Image img(h, w, 3);
  const double ry = 0.32 * squash_y;
  const double rx = 0.30;
  for (int y = 0; y < h; ++y) {
    const double u = (y + 0.5) / h;
    for (int x = 0; x < w; ++x) {
      const double v = (x + 0.5) / w;
      double r, g, b;
      const double du = (u - geo.cy) / ry;
      const double dv = (v - geo.cx) / rx;
      if (du * du + dv * dv <= 1.0) {
        const double stripe =
            0.1 * std::sin(2.0 * kPi * ap.stripe_freq * u + ap.stripe_phase);
        r = ap.r + stripe;
        g = ap.g + stripe;
        b = ap.b + stripe;
      } else {
        r = g = b = rng.uniform(0.08, 0.16);
      }
      auto q = [](double val) {
        return static_cast<uint8_t>(
            std::lround(std::clamp(val, 0.0, 1.0) * 255.0));
      };
      img.at(y, x, 0) = q(r);
      img.at(y, x, 1) = q(g);
      img.at(y, x, 2) = q(b);
    }
  }
  return img;
}

Image to_infrared(const Image& rgb) {
  Image ir(rgb.height, rgb.width, 1);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x) {
      const double g = luma601(rgb.at(y, x, 0) / 255.0, rgb.at(y, x, 1) / 255.0,
                               rgb.at(y, x, 2) / 255.0);
      const double remapped = 0.15 + 0.8 * std::pow(g, 0.9);
      ir.at(y, x, 0) = static_cast<uint8_t>(
          std::lround(std::clamp(remapped, 0.0, 1.0) * 255.0));
    }
  return ir;
}

std::string camera_name(Platform p, Modality m, int camera) {
  return std::string(1, to_string(p)[0]) + std::string(1, to_string(m)[0]) +
         std::to_string(camera);
}

}  // namespace

void validate_spec(const SynthSpec& spec) {
  if (spec.num_identities < 0 || spec.num_test_identities < 0 ||
      spec.num_distractors < 0 || spec.tracklets_per_cell < 0)
    throw DataError("synthetic spec: counts must be >= 0");
  if (spec.frames_per_tracklet < 1)
    throw DataError("synthetic spec: frames_per_tracklet must be >= 1");
  if (spec.image_height < 8 || spec.image_width < 8)
    throw DataError("synthetic spec: image size must be at least 8x8");
  if (spec.platforms.empty() || spec.modalities.empty())
    throw DataError("synthetic spec: need at least one platform and modality");
}

Manifest generate_synthetic(const SynthSpec& spec, const std::string& root,
                            Rng& rng) {
  validate_spec(spec);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root))
    throw DataError("cannot create dataset root '" + root + "'");

  Manifest m;
  m.root = root;
  const int total_ids =
      spec.num_identities + spec.num_test_identities + spec.num_distractors;
  std::map<std::string, int> next_frame;  // per-directory frame counter

  auto emit_tracklet = [&](Split split, int id, Platform p, Modality mo,
                           int camera, int nframes) {
    Tracklet t;
    t.split = split;
    t.id = id;
    t.platform = p;
    t.modality = mo;
    t.camera = camera_name(p, mo, camera);
    t.distractor = split == Split::Distractor;

    const std::string rel_dir = std::string(to_string(split)) + "/" +
                                std::to_string(id) + "/" +
                                std::string(to_string(p)) + "_" +
                                to_string(mo) + "_" + t.camera;
    fs::create_directories(fs::path(root) / rel_dir);
    int& counter = next_frame[rel_dir];

    const Appearance ap = appearance_of(id, total_ids);
    FrameGeometry geo;
    const double phase_x = rng.uniform(0.0, 2.0 * kPi);
    const double phase_y = rng.uniform(0.0, 2.0 * kPi);
    for (int f = 0; f < nframes; ++f) {
      geo.cx = 0.5 + 0.12 * std::sin(phase_x + 0.5 * f);
      geo.cy = 0.5 + 0.10 * std::cos(phase_y + 0.35 * f);
      Image frame;
      if (p == Platform::Aerial) {
        Image low = render(std::max(spec.image_height / 2, 4),
                           std::max(spec.image_width / 2, 4), 0.55, ap, geo,
                           rng);
        frame = resize_bilinear(low, spec.image_height, spec.image_width);
      } else {
        frame = render(spec.image_height, spec.image_width, 1.0, ap, geo, rng);
      }
      if (mo == Modality::Infrared) frame = to_infrared(frame);

      char name[32];
      std::snprintf(name, sizeof name, "%06d.png", counter++);
      const std::string rel = rel_dir + "/" + name;
      write_png(root + "/" + rel, frame);
      t.frames.push_back(rel);
    }
    m.tracklets.push_back(std::move(t));
  };

  auto emit_identity = [&](Split split, int id, int tracklets_per_cell) {
    for (Platform p : spec.platforms)
      for (Modality mo : spec.modalities)
        for (int k = 0; k < tracklets_per_cell; ++k)
          emit_tracklet(split, id, p, mo, k % kCamerasPerCell,
                        spec.frames_per_tracklet);
  };

  int id = 0;
  for (int i = 0; i < spec.num_identities; ++i)
    emit_identity(Split::Train, id++, spec.tracklets_per_cell);
  for (int i = 0; i < spec.num_test_identities; ++i)
    emit_identity(Split::Test, id++, spec.tracklets_per_cell);
  for (int i = 0; i < spec.num_distractors; ++i)
    emit_identity(Split::Distractor, id++, 1);

  save_manifest(m, root + "/manifest.txt");
  return m;
}

}  // namespace trireid
