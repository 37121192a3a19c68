#include "trireid/model.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "trireid/eval.hpp"

namespace trireid {

std::vector<int> train_identity_vocab(const Manifest& m) {
  std::set<int> ids;
  for (const Tracklet& t : m.tracklets)
    if (t.split == Split::Train && !t.distractor) ids.insert(t.id);
  return {ids.begin(), ids.end()};
}

Model::Model(const Config& cfg, std::vector<int> identity_vocab,
             Rng& init_rng)
    : cfg_(cfg), vocab_(std::move(identity_vocab)) {
  if (!cfg.stream_mask.any())
    throw ConfigError("model: every stream is disabled");
  if (vocab_.empty()) throw DataError("model: no training identities");
  if (!std::is_sorted(vocab_.begin(), vocab_.end()) ||
      std::adjacent_find(vocab_.begin(), vocab_.end()) != vocab_.end())
    throw std::invalid_argument("model: identity vocab must be sorted unique");

  if (cfg.stream_mask.st1)
    st1_ = std::make_unique<Stream1>(ps_, cfg, num_classes(), init_rng);
  if (cfg.stream_mask.st2) {
    st2_ = std::make_unique<Stream2>(ps_, cfg, init_rng);
    decoder_ = std::make_unique<PromptDecoder>(ps_, cfg, init_rng);
  }
  if (cfg.stream_mask.st3)
    st3_ = std::make_unique<Stream3>(ps_, cfg, init_rng);

  fusion_ = std::make_unique<Fusion>(ps_, "fus", cfg.stream_mask.count(),
                                     cfg.embed_dim, cfg.fusion_dim,
                                     init_rng);
  classifier_ =
      Linear(ps_, "cls", cfg.fusion_dim, num_classes(), init_rng);
  if (cfg.per_stream_id_heads) {
    if (st2_)
      aux2_ = Linear(ps_, "aux2", cfg.embed_dim, num_classes(), init_rng);
    if (st3_)
      aux3_ = Linear(ps_, "aux3", cfg.embed_dim, num_classes(), init_rng);
  }
}

std::vector<int> Model::labels_of(const std::vector<int>& ids) const {
  std::vector<int> labels;
  labels.reserve(ids.size());
  for (int id : ids) {
    auto it = std::lower_bound(vocab_.begin(), vocab_.end(), id);
    if (it == vocab_.end() || *it != id)
      throw DataError("model: identity " + std::to_string(id) +
                      " not in the training vocabulary");
    labels.push_back(static_cast<int>(it - vocab_.begin()));
  }
  return labels;
}

std::vector<double> Model::enabled_weights() const {
  std::vector<double> w;
  if (st1_) w.push_back(weights_.w1);
  if (st2_) w.push_back(weights_.w2);
  if (st3_) w.push_back(weights_.w3);
  return w;
}

Model::Forward Model::forward_train(const ClipBatch& batch, Rng& rng) {
  const std::vector<int> labels = labels_of(batch.ids);

  std::vector<Var> feats;
  Stream1::Output o1;
  Var f2;
  Stream3::Output o3;
  if (st1_) {
    o1 = st1_->forward(batch, /*train=*/true, rng);
    feats.push_back(o1.features);
  }
  if (st2_) {
    f2 = st2_->forward(batch);
    feats.push_back(f2);
  }
  if (st3_) {
    o3 = st3_->forward(batch);
    feats.push_back(o3.features);
  }

  Forward out;
  out.fused = fusion_->fuse(feats);
  out.logits = classifier_.forward(out.fused);

  Var ce = loss_id(out.logits, labels, cfg_.label_smoothing);
  if (cfg_.per_stream_id_heads) {
    std::vector<Var> heads{ce};
    if (st1_)
      heads.push_back(loss_id(o1.logits, labels, cfg_.label_smoothing));
    if (st2_)
      heads.push_back(
          loss_id(aux2_.forward(f2), labels, cfg_.label_smoothing));
    if (st3_)
      heads.push_back(
          loss_id(aux3_.forward(o3.features), labels, cfg_.label_smoothing));
    Var sum = heads[0];
    for (size_t i = 1; i < heads.size(); ++i) sum = add(sum, heads[i]);
    ce = scale(sum, 1.0 / static_cast<double>(heads.size()));
  }
  out.terms.id = ce;
  out.terms.tri = loss_tri(out.fused, batch.ids, cfg_.triplet_margin);
  if (st1_)
    out.terms.sa = loss_sa(o1.logits, o1.attacked_logits, o1.features,
                           o1.attacked_features, labels);
  if (st3_ && o3.cr_vis)
    out.terms.cr = loss_cr(o3.cr_vis, o3.cr_ir, [this](const Var& x) {
      return st3_->map_feature(x);
    });
  if (st2_) {
    if (!memory_ready_)
      throw std::logic_error("model: view memory not built for this epoch");
    Var updated = decoder_->refreshed(memory_);
    out.terms.v2m = loss_v2m(f2, batch.ids, batch.platforms, updated,
                             memory_.keys, cfg_.tau);
  }
  return out;
}

Tensor Model::encode_clip(const Tensor& pixels, int T, Modality mo) const {
  if (pixels.ndim() != 4 || pixels.dim(0) != T)
    throw std::invalid_argument("encode_clip: need [T,3,H,W] pixels");
  ClipBatch b;
  b.pixels = pixels;
  b.ids = {0};
  b.platforms = {Platform::Ground};
  b.modalities = {mo};
  b.P = 1;
  b.K = 1;
  b.T = T;

  Rng scratch(0);
  std::vector<Var> feats;
  if (st1_) feats.push_back(st1_->forward(b, /*train=*/false, scratch).features);
  if (st2_) feats.push_back(st2_->forward(b));
  if (st3_) feats.push_back(st3_->forward(b).features);
  Var fused = fusion_->fuse(feats, enabled_weights());

  Tensor out({cfg_.fusion_dim});
  std::copy(fused->value.data.begin(), fused->value.data.end(),
            out.data.begin());
  return out;
}

void Model::rebuild_memory(const Manifest& m, FrameCache& cache) {
  if (!st2_) return;
  std::vector<SequenceFeature> feats;
  for (const Tracklet& t : m.tracklets) {
    if (t.split != Split::Train || t.distractor) continue;
    const auto idx =
        clip_indices(static_cast<int>(t.frames.size()), cfg_.frames_per_clip);
    Tensor clip = load_clip(m, t, idx, cfg_.image_height, cfg_.image_width,
                            cache);
    Var v = st2_->forward_frames(clip, cfg_.frames_per_clip);
    SequenceFeature sf;
    sf.v = Tensor({cfg_.embed_dim});
    std::copy(v->value.data.begin(), v->value.data.end(), sf.v.data.begin());
    sf.id = t.id;
    sf.platform = t.platform;
    feats.push_back(std::move(sf));
  }
  memory_ = build_memory(feats);
  decoder_->refresh(memory_);
  memory_ready_ = true;
}

void Model::set_memory(ViewMemory mem) {
  memory_ = std::move(mem);
  memory_ready_ = memory_.size() > 0;
}

}  // namespace trireid
