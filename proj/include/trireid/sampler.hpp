#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "trireid/config.hpp"
#include "trireid/image.hpp"
#include "trireid/manifest.hpp"
#include "trireid/rng.hpp"
#include "trireid/tensor.hpp"

namespace trireid {

/// Pixels for P identities x K tracklets x T frames, values in [0, 1].
/// Infrared frames are replicated to three channels at load.
struct ClipBatch {
  Tensor pixels;                     // [P*K*T, 3, H, W]
  std::vector<int> ids;              // [P*K]
  std::vector<Platform> platforms;   // [P*K]
  std::vector<Modality> modalities;  // [P*K]
  int P = 0, K = 0, T = 0;
};

/// Frame indices for a fixed-length clip: tracklets shorter than T loop,
/// longer ones are sampled at uniform stride with floor rounding.
std::vector<int> clip_indices(int len, int T);

/// Decoded frames keyed by absolute path; synthetic desk datasets fit in
/// memory comfortably.
class FrameCache {
 public:
  const Image& get(const std::string& path);
  size_t size() const { return cache_.size(); }

 private:
  std::unordered_map<std::string, Image> cache_;
};

/// Loads one tracklet's clip as [T, 3, H, W] in [0, 1], resizing frames
/// that do not already match (h, w).
Tensor load_clip(const Manifest& m, const Tracklet& t,
                 const std::vector<int>& indices, int h, int w,
                 FrameCache& cache);

/// (x - mean) / stddev, applied uniformly to every value.
Tensor standardize_frames(const Tensor& pixels, double mean, double stddev);

class BatchSampler {
 public:
  /// Indexes train tracklets by identity. Throws DataError with counts
  /// when fewer than P identities own at least K tracklets.
  BatchSampler(const Manifest& m, const Config& cfg);

  ClipBatch next(Rng& rng, FrameCache& cache);

  int eligible_identities() const {
    return static_cast<int>(eligible_ids_.size());
  }

 private:
  const Manifest& manifest_;
  Config cfg_;
  std::vector<int> eligible_ids_;
  std::unordered_map<int, std::vector<int>> tracklets_by_id_;
};

}  // namespace trireid
