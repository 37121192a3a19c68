#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trireid/types.hpp"

namespace trireid {

enum class Split { Train, Test, Distractor };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    default: return "distractor";
  }
}
inline Split split_from(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  if (s == "distractor") return Split::Distractor;
  throw DataError("unknown split '" + s + "'");
}

struct Tracklet {
  Split split = Split::Train;
  int id = 0;
  Platform platform = Platform::Ground;
  Modality modality = Modality::Visible;
  std::string camera;
  bool distractor = false;
  std::vector<std::string> frames;  // paths relative to the manifest root
};

/// One tracklet per line:
///   split id platform modality camera distractor nframes path...
/// after a `trireid-manifest v1` header. Paths are relative to the
/// directory holding the manifest file.
struct Manifest {
  std::string root;
  std::vector<Tracklet> tracklets;
};

Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& m, const std::string& path);

std::string frame_path(const Manifest& m, const Tracklet& t, int frame);

/// Rule violations as human-readable strings, empty when clean.
/// check_files additionally stats every referenced frame.
std::vector<std::string> validate_manifest(const Manifest& m,
                                           bool check_files);

struct SplitSummary {
  int identities = 0;
  int tracklets = 0;
  int64_t frames = 0;
};
SplitSummary summarize(const Manifest& m, Split split);

}  // namespace trireid
