#include "trireid/sampler.hpp"

#include <algorithm>
#include <map>

namespace trireid {

std::vector<int> clip_indices(int len, int T) {
  if (len <= 0 || T <= 0) throw DataError("clip_indices: lengths must be > 0");
  std::vector<int> out(static_cast<size_t>(T));
  if (len < T) {
    for (int i = 0; i < T; ++i) out[static_cast<size_t>(i)] = i % len;
  } else {
    for (int i = 0; i < T; ++i)
      out[static_cast<size_t>(i)] =
          static_cast<int>(static_cast<int64_t>(i) * len / T);
  }
  return out;
}

const Image& FrameCache::get(const std::string& path) {
  auto it = cache_.find(path);
  if (it != cache_.end()) return it->second;
  return cache_.emplace(path, read_png(path)).first->second;
}

Tensor load_clip(const Manifest& m, const Tracklet& t,
                 const std::vector<int>& indices, int h, int w,
                 FrameCache& cache) {
  const int T = static_cast<int>(indices.size());
  Tensor out({T, 3, h, w});
  for (int f = 0; f < T; ++f) {
    const Image& raw = cache.get(frame_path(m, t, indices[static_cast<size_t>(f)]));
    const Image* img = &raw;
    Image resized;
    if (raw.height != h || raw.width != w) {
      resized = resize_bilinear(raw, h, w);
      img = &resized;
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) {
          const int src_c = img->channels == 1 ? 0 : c;
          out[((static_cast<int64_t>(f) * 3 + c) * h + y) * w + x] =
              img->at(y, x, src_c) / 255.0;
        }
  }
  return out;
}

BatchSampler::BatchSampler(const Manifest& m, const Config& cfg)
    : manifest_(m), cfg_(cfg) {
  std::map<int, std::vector<int>> by_id;
  for (size_t i = 0; i < m.tracklets.size(); ++i) {
    const auto& t = m.tracklets[i];
    if (t.split == Split::Train)
      by_id[t.id].push_back(static_cast<int>(i));
  }
  for (const auto& [id, list] : by_id) {
    if (static_cast<int>(list.size()) >= cfg.tracklets_per_identity) {
      eligible_ids_.push_back(id);
      tracklets_by_id_[id] = list;
    }
  }
  if (static_cast<int>(eligible_ids_.size()) < cfg.num_identities_per_batch)
    throw DataError(
        "need " + std::to_string(cfg.num_identities_per_batch) +
        " train identities with >= " +
        std::to_string(cfg.tracklets_per_identity) + " tracklets, found " +
        std::to_string(eligible_ids_.size()) + " of " +
        std::to_string(by_id.size()));
}

ClipBatch BatchSampler::next(Rng& rng, FrameCache& cache) {
  const int P = cfg_.num_identities_per_batch;
  const int K = cfg_.tracklets_per_identity;
  const int T = cfg_.frames_per_clip;
  const int h = cfg_.image_height, w = cfg_.image_width;

  std::vector<int> ids = eligible_ids_;
  rng.shuffle(ids);
  ids.resize(static_cast<size_t>(P));

  ClipBatch batch;
  batch.P = P;
  batch.K = K;
  batch.T = T;
  batch.pixels = Tensor({P * K * T, 3, h, w});
  const int64_t frame_sz = static_cast<int64_t>(3) * h * w;

  int slot = 0;
  for (int id : ids) {
    std::vector<int> pool = tracklets_by_id_.at(id);
    rng.shuffle(pool);
    for (int k = 0; k < K; ++k, ++slot) {
      const Tracklet& t =
          manifest_.tracklets[static_cast<size_t>(pool[static_cast<size_t>(k)])];
      auto idx = clip_indices(static_cast<int>(t.frames.size()), T);
      Tensor clip = load_clip(manifest_, t, idx, h, w, cache);
      std::copy(clip.data.begin(), clip.data.end(),
                batch.pixels.data.begin() +
                    static_cast<int64_t>(slot) * T * frame_sz);
      batch.ids.push_back(t.id);
      batch.platforms.push_back(t.platform);
      batch.modalities.push_back(t.modality);
    }
  }
  return batch;
}

Tensor standardize_frames(const Tensor& pixels, double mean, double stddev) {
  Tensor out(pixels.shape);
  const double inv = 1.0 / stddev;
  for (int64_t i = 0; i < pixels.numel(); ++i)
    out[i] = (pixels[i] - mean) * inv;
  return out;
}

}  // namespace trireid
