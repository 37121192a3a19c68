#pragma once

#include <string>
#include <vector>

#include "trireid/manifest.hpp"
#include "trireid/rng.hpp"
#include "trireid/types.hpp"

namespace trireid {

/// Shape of a generated dataset. Train and test identities cover every
/// (platform, modality) cell with tracklets_per_cell tracklets each;
/// distractor identities get one gallery-only tracklet per cell.
struct SynthSpec {
  int num_identities = 8;       // train identities
  int num_test_identities = 0;
  int num_distractors = 0;
  std::vector<Platform> platforms{Platform::Aerial, Platform::Ground};
  std::vector<Modality> modalities{Modality::Visible, Modality::Infrared};
  int tracklets_per_cell = 2;
  int frames_per_tracklet = 8;
  int image_height = 32;
  int image_width = 16;
};

void validate_spec(const SynthSpec& spec);

/// Renders every frame under root and writes root/manifest.txt.
/// Identity appearance (base gray level, hue, stripe period) is a pure
/// function of the identity index; only motion and background noise come
/// from rng, so equal seeds give byte-identical datasets.
Manifest generate_synthetic(const SynthSpec& spec, const std::string& root,
                            Rng& rng);

}  // namespace trireid
