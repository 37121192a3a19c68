#include "trireid/fusion.hpp"

#include <stdexcept>
#include <tuple>

namespace trireid {

Fusion::Fusion(ParamStore& ps, const std::string& name, int streams,
               int in_dim, int out_dim, Rng& rng)
    : streams_(streams), in_dim_(in_dim), out_dim_(out_dim) {
  if (streams < 1) throw std::invalid_argument("fusion: no streams enabled");
  proj_ = Linear(ps, name + ".proj", streams * in_dim, out_dim, rng);
}

Var Fusion::fuse(const std::vector<Var>& feats,
                 const std::vector<double>& weights) const {
  if (feats.empty()) throw std::invalid_argument("fuse: no stream features");
  if (static_cast<int>(feats.size()) != streams_)
    throw std::invalid_argument("fuse: expected " + std::to_string(streams_) +
                                " streams, got " +
                                std::to_string(feats.size()));
  if (weights.size() != feats.size())
    throw std::invalid_argument("fuse: one weight per stream required");

  const int rows = feats[0]->value.dim(0);
  std::vector<Var> blocks;
  blocks.reserve(feats.size());
  for (size_t i = 0; i < feats.size(); ++i) {
    const Tensor& t = feats[i]->value;
    if (t.ndim() != 2 || t.dim(0) != rows || t.dim(1) != in_dim_)
      throw std::invalid_argument("fuse: stream " + std::to_string(i + 1) +
                                  " has the wrong shape");
    blocks.push_back(scale(l2_normalize_rows(feats[i]), weights[i]));
  }
  Var cat = blocks.size() == 1 ? blocks[0] : concat_cols(blocks);
  return proj_.forward(cat);
}

Var Fusion::fuse(const std::vector<Var>& feats) const {
  return fuse(feats, std::vector<double>(feats.size(), 1.0));
}

Var total_loss(const LossTerms& terms, const Config& cfg,
               LossReport* report) {
  auto expect_scalar = [](const Var& v, const char* what) {
    if (!v || v->value.numel() != 1)
      throw std::invalid_argument(std::string("total_loss: ") + what +
                                  " must be a present scalar");
  };
  expect_scalar(terms.id, "identity term");
  expect_scalar(terms.tri, "triplet term");
  auto opt = [](const Var& v) {
    return v ? v : make_const(Tensor::scalar(0.0));
  };
  Var sa = opt(terms.sa);
  Var cr = opt(terms.cr);
  Var v2m = opt(terms.v2m);

  Var total = add(terms.id, scale(terms.tri, cfg.lambda1));
  total = add(total, scale(sa, cfg.lambda2));
  total = add(total, scale(cr, cfg.lambda3));
  total = add(total, scale(v2m, cfg.lambda4));

  if (report) {
    report->l_id = value(terms.id);
    report->l_tri = value(terms.tri);
    report->l_sa = value(sa);
    report->l_cr = value(cr);
    report->l_v2m = value(v2m);
    report->lambda1 = cfg.lambda1;
    report->lambda2 = cfg.lambda2;
    report->lambda3 = cfg.lambda3;
    report->lambda4 = cfg.lambda4;
    report->total = value(total);
  }
  return total;
}

std::vector<StreamWeights> weight_grid(const StreamMask& mask) {
  if (!mask.any())
    throw std::invalid_argument("weight_grid: no streams enabled");
  static const double kLevels[] = {0.0, 0.5, 1.0};
  std::vector<StreamWeights> out;
  for (double w1 : kLevels) {
    if (!mask.st1 && w1 != 0.0) continue;
    for (double w2 : kLevels) {
      if (!mask.st2 && w2 != 0.0) continue;
      for (double w3 : kLevels) {
        if (!mask.st3 && w3 != 0.0) continue;
        out.push_back({w1, w2, w3});
      }
    }
  }
  return out;
}

StreamWeights select_weights(const std::vector<WeightedResult>& grid,
                             const StreamMask& mask) {
  if (grid.empty())
    throw std::invalid_argument("select_weights: empty grid");
  auto uniform = [&](const StreamWeights& w) {
    double first = 0.0;
    bool seen = false;
    for (auto [on, v] : {std::pair{mask.st1, w.w1}, std::pair{mask.st2, w.w2},
                         std::pair{mask.st3, w.w3}}) {
      if (!on) continue;
      if (!seen) {
        first = v;
        seen = true;
      } else if (v != first) {
        return false;
      }
    }
    return true;
  };
  auto better = [&](const WeightedResult& a, const WeightedResult& b) {
    if (a.map != b.map) return a.map > b.map;
    const bool ua = uniform(a.weights), ub = uniform(b.weights);
    if (ua != ub) return ua;
    return std::tie(a.weights.w1, a.weights.w2, a.weights.w3) >
           std::tie(b.weights.w1, b.weights.w2, b.weights.w3);
  };
  const WeightedResult* best = &grid[0];
  for (const auto& g : grid)
    if (better(g, *best)) best = &g;
  return best->weights;
}

}  // namespace trireid
