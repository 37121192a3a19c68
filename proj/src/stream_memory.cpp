#include "trireid/stream_memory.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>

#include "trireid/errors.hpp"

namespace trireid {

int ViewMemory::find(const MemKey& k) const {
  auto it = std::lower_bound(keys.begin(), keys.end(), k);
  if (it == keys.end() || !(*it == k)) return -1;
  return static_cast<int>(it - keys.begin());
}

ViewMemory build_memory(const std::vector<SequenceFeature>& feats) {
  if (feats.empty())
    throw std::invalid_argument("build_memory: no sequence features");
  const int d = feats[0].v.dim(0);
  std::map<MemKey, std::pair<Tensor, int>> cells;
  for (const SequenceFeature& f : feats) {
    if (f.v.ndim() != 1 || f.v.dim(0) != d)
      throw std::invalid_argument("build_memory: feature width mismatch");
    auto [it, fresh] =
        cells.try_emplace(MemKey{f.id, f.platform}, Tensor::zeros({d}), 0);
    for (int j = 0; j < d; ++j) it->second.first[j] += f.v[j];
    ++it->second.second;
  }

  ViewMemory mem;
  const int m = static_cast<int>(cells.size());
  mem.base = Tensor({m, d});
  int row = 0;
  for (auto& [key, cell] : cells) {
    mem.keys.push_back(key);
    mem.counts.push_back(cell.second);
    for (int j = 0; j < d; ++j)
      mem.base[static_cast<int64_t>(row) * d + j] =
          cell.first[j] / cell.second;
    ++row;
  }
  mem.prompts = Tensor::zeros({m, d});
  mem.updated = mem.base;
  return mem;
}

PromptDecoder::PromptDecoder(ParamStore& ps, const Config& cfg, Rng& rng) {
  const int d = cfg.embed_dim;
  for (int i = 0; i < 2; ++i) {
    const std::string base = "dec.layer" + std::to_string(i + 1);
    Layer l;
    l.self_attn = CrossAttention(ps, base + ".self", d, rng);
    l.cross_attn = CrossAttention(ps, base + ".cross", d, rng);
    l.ff_norm = LayerNorm(ps, base + ".ff_norm", d);
    l.ff1 = Linear(ps, base + ".ff1", d, 2 * d, rng);
    l.ff2 = Linear(ps, base + ".ff2", 2 * d, d, rng);
    layers_.push_back(std::move(l));
  }
  out_ = Linear(ps, "dec.out", d, d, rng);
}

Var PromptDecoder::layer_forward(const Layer& l, Var x, int lq,
                                 const Var& kv, int lkv) const {
  x = l.self_attn.forward(x, lq, x, lq);
  x = l.cross_attn.forward(x, lq, kv, lkv);
  Var h = l.ff2.forward(leaky_relu(l.ff1.forward(l.ff_norm.forward(x)), 0.1));
  return add(x, h);
}

Var PromptDecoder::prompt_rows(const ViewMemory& mem) const {
  if (mem.size() == 0)
    throw std::invalid_argument("prompt_rows: empty memory");
  Var base = make_const(mem.base);

  std::vector<int> branch_order;
  std::vector<Var> branch_prompts;
  for (Platform p : {Platform::Aerial, Platform::Ground}) {
    std::vector<int> idx;
    for (int i = 0; i < mem.size(); ++i)
      if (mem.keys[i].platform == p) idx.push_back(i);
    if (idx.empty()) continue;
    Var x = gather_dim0(base, idx);
    const int lq = static_cast<int>(idx.size());
    for (const Layer& l : layers_)
      x = layer_forward(l, x, lq, base, mem.size());
    branch_prompts.push_back(out_.forward(x));
    branch_order.insert(branch_order.end(), idx.begin(), idx.end());
  }

  Var stacked = branch_prompts.size() == 1 ? branch_prompts[0]
                                           : concat_rows(branch_prompts);
  std::vector<int> back(mem.size());
  for (int pos = 0; pos < mem.size(); ++pos) back[branch_order[pos]] = pos;
  bool ordered = true;
  for (int i = 0; i < mem.size(); ++i) ordered = ordered && back[i] == i;
  return ordered ? stacked : gather_dim0(stacked, back);
}

Var PromptDecoder::refreshed(const ViewMemory& mem) const {
  return add(make_const(mem.base), prompt_rows(mem));
}

void PromptDecoder::refresh(ViewMemory& mem) const {
  Var p = prompt_rows(mem);
  mem.prompts = p->value;
  for (int64_t i = 0; i < mem.base.numel(); ++i)
    mem.updated[i] = mem.base[i] + mem.prompts[i];
}

Var loss_v2m(const Var& feats, const std::vector<int>& ids,
             const std::vector<Platform>& platforms, const Var& updated,
             const std::vector<MemKey>& keys, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("loss_v2m: tau must be > 0");
  const int b = feats->value.dim(0);
  if (feats->value.ndim() != 2 || b == 0 ||
      ids.size() != static_cast<size_t>(b) || platforms.size() != ids.size())
    throw std::invalid_argument("loss_v2m: batch labeling mismatch");
  if (updated->value.ndim() != 2 ||
      updated->value.dim(0) != static_cast<int>(keys.size()) ||
      updated->value.dim(1) != feats->value.dim(1))
    throw std::invalid_argument("loss_v2m: memory shape mismatch");

  std::map<MemKey, std::vector<int>> cells;
  for (int i = 0; i < b; ++i)
    cells[MemKey{ids[i], platforms[i]}].push_back(i);

  std::vector<int> anchor_rows;
  const int a = static_cast<int>(cells.size());
  Tensor positives = Tensor::zeros({a, b});
  int row = 0;
  for (const auto& [key, members] : cells) {
    auto it = std::lower_bound(keys.begin(), keys.end(), key);
    if (it == keys.end() || !(*it == key))
      throw DataError("loss_v2m: no memory entry for identity " +
                      std::to_string(key.id) + " on platform " +
                      to_string(key.platform));
    anchor_rows.push_back(static_cast<int>(it - keys.begin()));
    const double w = 1.0 / (static_cast<double>(a) * members.size());
    for (int i : members) positives[static_cast<int64_t>(row) * b + i] = w;
    ++row;
  }

  Var vhat = l2_normalize_rows(feats);
  Var anchors = gather_dim0(l2_normalize_rows(updated), anchor_rows);
  Var sims = scale(matmul_nt(anchors, vhat), 1.0 / tau);  // [A, B]
  return sub(mean_all(logsumexp_rows(sims)),
             sum_all(mul(sims, make_const(positives))));
}

Tensor patchify(const Tensor& frames, int p) {
  if (frames.ndim() != 4)
    throw std::invalid_argument("patchify: expected [N, C, H, W]");
  const int n = frames.dim(0), c = frames.dim(1);
  const int h = frames.dim(2), w = frames.dim(3);
  if (p <= 0 || h % p != 0 || w % p != 0)
    throw std::invalid_argument("patchify: patch must divide frame size");
  const int gy = h / p, gx = w / p;
  Tensor out({n * gy * gx, c * p * p});
  int64_t r = 0;
  for (int i = 0; i < n; ++i)
    for (int ty = 0; ty < gy; ++ty)
      for (int tx = 0; tx < gx; ++tx, ++r) {
        int64_t col = 0;
        for (int ch = 0; ch < c; ++ch)
          for (int py = 0; py < p; ++py)
            for (int px = 0; px < p; ++px, ++col)
              out[r * c * p * p + col] =
                  frames[((static_cast<int64_t>(i) * c + ch) * h + ty * p +
                          py) *
                             w +
                         tx * p + px];
      }
  return out;
}

Stream2::Stream2(ParamStore& ps, const Config& cfg, Rng& rng) : cfg_(cfg) {
  const int d = cfg.embed_dim;
  const int p = cfg.st2_patch;
  tokens_per_frame_ = (cfg.image_height / p) * (cfg.image_width / p);
  embed_ = Linear(ps, "st2.embed", 3 * p * p, d, rng);
  pos_ = ps.add("st2.pos",
                glorot_uniform(rng, {tokens_per_frame_, d},
                               tokens_per_frame_, d));
  for (int i = 0; i < cfg.st2_layers; ++i)
    blocks_.emplace_back(ps, "st2.block" + std::to_string(i + 1), d, rng);
}

Var Stream2::forward_frames(const Tensor& frames, int T) const {
  const int n = frames.dim(0);
  if (T <= 0 || n % T != 0)
    throw std::invalid_argument("forward_frames: frames do not tile into T");
  Tensor std_frames =
      standardize_frames(frames, cfg_.norm_mean, cfg_.norm_std);
  Var x = embed_.forward(make_const(patchify(std_frames, cfg_.st2_patch)));
  x = add_tile_rows(x, pos_);
  for (const AttentionBlock& blk : blocks_)
    x = blk.forward(x, tokens_per_frame_);
  Var frame_feats = mean_groups(x, tokens_per_frame_);  // [n, D]
  return mean_groups(frame_feats, T);                   // [n / T, D]
}

Var Stream2::forward(const ClipBatch& batch) const {
  return forward_frames(batch.pixels, batch.T);
}

}  // namespace trireid
