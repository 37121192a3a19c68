// Python surface over the core operations: schedules, style ops, edge
// maps, the five losses, retrieval metrics, view memories, and the
// synthetic data generator. Arrays cross the boundary as copies; every
// function is stateless so the module never owns a graph.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <utility>
#include <vector>

#include "trireid/autodiff.hpp"
#include "trireid/config.hpp"
#include "trireid/eval.hpp"
#include "trireid/fusion.hpp"
#include "trireid/manifest.hpp"
#include "trireid/rng.hpp"
#include "trireid/sampler.hpp"
#include "trireid/selftest.hpp"
#include "trireid/stream_intermediary.hpp"
#include "trireid/stream_memory.hpp"
#include "trireid/stream_style.hpp"
#include "trireid/synth.hpp"
#include "trireid/tensor.hpp"

namespace py = pybind11;
using namespace trireid;

namespace {

using DoubleArray =
    py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const DoubleArray& a) {
  std::vector<int> shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i)
    shape.push_back(static_cast<int>(a.shape(i)));
  Tensor t(shape);
  const double* p = a.data();
  std::copy(p, p + t.numel(), t.data.begin());
  return t;
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<double> a(shape);
  std::copy(t.data.begin(), t.data.end(), a.mutable_data());
  return a;
}

std::vector<Platform> platforms_from(const std::vector<std::string>& names) {
  std::vector<Platform> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(platform_from(n));
  return out;
}

std::vector<RankItem> rank_items(const std::vector<int>& ids,
                                 const std::vector<std::string>& cameras) {
  if (ids.size() != cameras.size())
    throw std::invalid_argument("ids and cameras must pair up");
  std::vector<RankItem> out;
  for (size_t i = 0; i < ids.size(); ++i)
    out.push_back({ids[i], cameras[i]});
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() =
      "Core operations of the three-stream re-identification toolkit";

  m.def("cosine_lr", &cosine_lr, py::arg("step"), py::arg("total_steps"),
        py::arg("lr_init"),
        "Cosine-annealed learning rate over [0, total_steps]");

  m.def("clip_starts", &clip_starts, py::arg("length"), py::arg("frames"),
        "Start offsets of fixed-length windows covering a tracklet");

  m.def("clip_indices", &clip_indices, py::arg("length"), py::arg("frames"),
        "Frame indices of one fixed-length clip (loops short tracklets)");

  m.def(
      "style_gains",
      [](uint64_t seed, int count) {
        Rng rng(seed);
        py::array_t<double> out({count, 4});
        double* p = out.mutable_data();
        for (int i = 0; i < count; ++i) {
          const StyleCoeffs c = sample_style_coeffs(rng);
          p[i * 4 + 0] = c.r;
          p[i * 4 + 1] = c.g;
          p[i * 4 + 2] = c.b;
          p[i * 4 + 3] = c.ir;
        }
        return out;
      },
      py::arg("seed"), py::arg("count"),
      "Per-frame channel gains, one (r, g, b, ir) row per draw");

  m.def(
      "style_augment",
      [](const DoubleArray& frame, const std::string& modality, double r,
         double g, double b, double ir) {
        StyleCoeffs c;
        c.r = r;
        c.g = g;
        c.b = b;
        c.ir = ir;
        return to_array(
            style_augment(to_tensor(frame), modality_from(modality), c));
      },
      py::arg("frame"), py::arg("modality"), py::arg("r") = 1.0,
      py::arg("g") = 1.0, py::arg("b") = 1.0, py::arg("ir") = 1.0,
      "Scale the channels of one [3, H, W] frame");

  m.def(
      "style_attack",
      [](const DoubleArray& target, const DoubleArray& donor,
         double sigma_floor) {
        // The same array on both sides means self-attack, which the core
        // treats as an exact fixed point; hand it one node so it can tell.
        Var t = make_const(to_tensor(target));
        Var d = target.is(donor) ? t : make_const(to_tensor(donor));
        AttackResult res = style_attack(t, d, sigma_floor);
        return py::make_tuple(to_array(res.features->value),
                              res.skipped_channels);
      },
      py::arg("target"), py::arg("donor"), py::arg("sigma_floor") = 1e-6,
      "Re-style [N, C, H, W] samples with donor channel statistics; "
      "returns (features, skipped_channels)");

  m.def(
      "anaglyph",
      [](const DoubleArray& frame, const std::string& modality,
         const std::vector<double>& kernel, double offset) {
        EdgeOperator op;
        if (kernel.size() != 9)
          throw std::invalid_argument("kernel must have 9 taps");
        std::copy(kernel.begin(), kernel.end(), op.kernel.begin());
        op.offset = offset;
        return to_array(
            anaglyph(to_tensor(frame), modality_from(modality), op));
      },
      py::arg("frame"), py::arg("modality"),
      py::arg("kernel") =
          std::vector<double>{0, 1, 0, 1, -4, 1, 0, 1, 0},
      py::arg("offset") = 0.0,
      "Mirror-padded 3x3 edge map of one frame, luma first for visible");

  m.def(
      "loss_id",
      [](const DoubleArray& logits, const std::vector<int>& ids,
         double smoothing) {
        return value(loss_id(make_const(to_tensor(logits)), ids, smoothing));
      },
      py::arg("logits"), py::arg("ids"), py::arg("smoothing") = 0.1,
      "Label-smoothed cross entropy over [B, C] logits");

  m.def(
      "loss_tri",
      [](const DoubleArray& features, const std::vector<int>& ids,
         double margin) {
        return value(loss_tri(make_const(to_tensor(features)), ids, margin));
      },
      py::arg("features"), py::arg("ids"), py::arg("margin") = 0.3,
      "Batch-hard triplet loss over [B, D] features");

  m.def(
      "loss_sa",
      [](const DoubleArray& logits, const DoubleArray& attacked_logits,
         const DoubleArray& features, const DoubleArray& attacked_features,
         const std::vector<int>& ids) {
        return value(loss_sa(make_const(to_tensor(logits)),
                             make_const(to_tensor(attacked_logits)),
                             make_const(to_tensor(features)),
                             make_const(to_tensor(attacked_features)), ids));
      },
      py::arg("logits"), py::arg("attacked_logits"), py::arg("features"),
      py::arg("attacked_features"), py::arg("ids"),
      "Attack defense: attacked-logit cross entropy plus mean squared "
      "feature drift");

  m.def(
      "loss_cr",
      [](const DoubleArray& vis, const DoubleArray& ir,
         const DoubleArray& mapping) {
        Var a = make_const(to_tensor(mapping));
        return value(loss_cr(make_const(to_tensor(vis)),
                             make_const(to_tensor(ir)),
                             [&a](const Var& x) { return matmul(x, a); }));
      },
      py::arg("vis"), py::arg("ir"), py::arg("mapping"),
      "Cyclic reconstruction loss with a linear [D, D] mapper");

  m.def(
      "loss_v2m",
      [](const DoubleArray& features, const std::vector<int>& ids,
         const std::vector<std::string>& platforms, const DoubleArray& memory,
         const std::vector<std::pair<int, std::string>>& keys, double tau) {
        std::vector<MemKey> mem_keys;
        for (const auto& [id, plat] : keys)
          mem_keys.push_back(MemKey{id, platform_from(plat)});
        return value(loss_v2m(make_const(to_tensor(features)), ids,
                              platforms_from(platforms),
                              make_const(to_tensor(memory)), mem_keys, tau));
      },
      py::arg("features"), py::arg("ids"), py::arg("platforms"),
      py::arg("memory"), py::arg("keys"), py::arg("tau") = 0.07,
      "Memory-anchored contrastive loss over [B, D] features");

  m.def(
      "build_memory",
      [](const DoubleArray& features, const std::vector<int>& ids,
         const std::vector<std::string>& platforms) {
        Tensor f = to_tensor(features);
        if (f.ndim() != 2 || ids.size() != platforms.size() ||
            (int)ids.size() != f.dim(0))
          throw std::invalid_argument("features rows must pair with ids");
        const int d = f.dim(1);
        std::vector<SequenceFeature> feats;
        for (size_t i = 0; i < ids.size(); ++i) {
          SequenceFeature sf;
          sf.v = Tensor({d});
          std::copy(f.data.begin() + (py::ssize_t)i * d,
                    f.data.begin() + ((py::ssize_t)i + 1) * d,
                    sf.v.data.begin());
          sf.id = ids[i];
          sf.platform = platform_from(platforms[i]);
          feats.push_back(std::move(sf));
        }
        ViewMemory mem = build_memory(feats);
        std::vector<std::pair<int, std::string>> keys;
        for (const auto& k : mem.keys)
          keys.emplace_back(k.id, to_string(k.platform));
        return py::make_tuple(keys, mem.counts, to_array(mem.base));
      },
      py::arg("features"), py::arg("ids"), py::arg("platforms"),
      "Per-(identity, platform) mean rows; returns (keys, counts, base)");

  m.def(
      "rank",
      [](const DoubleArray& query, const DoubleArray& gallery,
         const std::vector<int>& query_ids,
         const std::vector<std::string>& query_cameras,
         const std::vector<int>& gallery_ids,
         const std::vector<std::string>& gallery_cameras,
         bool camera_filter) {
        RankingResult r =
            rank(to_tensor(query), to_tensor(gallery),
                 rank_items(query_ids, query_cameras),
                 rank_items(gallery_ids, gallery_cameras), camera_filter);
        py::dict out;
        out["cmc"] = r.cmc;
        out["map"] = r.map;
        out["per_query_ap"] = r.per_query_ap;
        return out;
      },
      py::arg("query"), py::arg("gallery"), py::arg("query_ids"),
      py::arg("query_cameras"), py::arg("gallery_ids"),
      py::arg("gallery_cameras"), py::arg("camera_filter") = true,
      "Cosine-distance retrieval; returns cmc curve, mAP, per-query AP");

  m.def(
      "generate_synthetic",
      [](const std::string& root, int ids, int test_ids, int distractors,
         int tracklets, int frames, int height, int width, uint64_t seed) {
        SynthSpec spec;
        spec.num_identities = ids;
        spec.num_test_identities = test_ids;
        spec.num_distractors = distractors;
        spec.tracklets_per_cell = tracklets;
        spec.frames_per_tracklet = frames;
        spec.image_height = height;
        spec.image_width = width;
        Rng rng(seed);
        Manifest man = generate_synthetic(spec, root, rng);
        return (int)man.tracklets.size();
      },
      py::arg("root"), py::arg("ids") = 8, py::arg("test_ids") = 0,
      py::arg("distractors") = 0, py::arg("tracklets") = 2,
      py::arg("frames") = 8, py::arg("height") = 32, py::arg("width") = 16,
      py::arg("seed") = 42,
      "Render a synthetic dataset under root; returns the tracklet count");

  m.def(
      "config_defaults", [] { return serialize_config(Config{}); },
      "Default run configuration in the text format train expects");

  m.def("selftest", &run_selftest,
        "Run the built-in oracle suite; true when every property passed");
}
