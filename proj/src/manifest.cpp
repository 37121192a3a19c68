#include "trireid/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace trireid {

namespace {

constexpr const char* kHeader = "trireid-manifest v1";

}  // namespace

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest '" + path + "'");
  Manifest m;
  m.root = std::filesystem::path(path).parent_path().string();
  if (m.root.empty()) m.root = ".";

  std::string line;
  if (!std::getline(in, line) || line != kHeader)
    throw DataError("manifest '" + path + "' missing header '" +
                    std::string(kHeader) + "'");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string split, platform, modality;
    Tracklet t;
    int flag = 0, nframes = 0;
    if (!(ls >> split >> t.id >> platform >> modality >> t.camera >> flag >>
          nframes))
      throw DataError("manifest line " + std::to_string(lineno) +
                      ": malformed record");
    t.split = split_from(split);
    t.platform = platform_from(platform);
    t.modality = modality_from(modality);
    t.distractor = flag != 0;
    if (nframes <= 0)
      throw DataError("manifest line " + std::to_string(lineno) +
                      ": frame count must be positive");
    t.frames.resize(static_cast<size_t>(nframes));
    for (int i = 0; i < nframes; ++i) {
      if (!(ls >> t.frames[static_cast<size_t>(i)]))
        throw DataError("manifest line " + std::to_string(lineno) +
                        ": expected " + std::to_string(nframes) + " paths");
    }
    std::string extra;
    if (ls >> extra)
      throw DataError("manifest line " + std::to_string(lineno) +
                      ": trailing tokens");
    m.tracklets.push_back(std::move(t));
  }
  return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest '" + path + "'");
  out << kHeader << '\n';
  for (const auto& t : m.tracklets) {
    out << to_string(t.split) << ' ' << t.id << ' ' << to_string(t.platform)
        << ' ' << to_string(t.modality) << ' ' << t.camera << ' '
        << (t.distractor ? 1 : 0) << ' ' << t.frames.size();
    for (const auto& f : t.frames) out << ' ' << f;
    out << '\n';
  }
  if (!out) throw DataError("write to manifest '" + path + "' failed");
}

std::string frame_path(const Manifest& m, const Tracklet& t, int frame) {
  return m.root + "/" + t.frames[static_cast<size_t>(frame)];
}

std::vector<std::string> validate_manifest(const Manifest& m,
                                           bool check_files) {
  std::vector<std::string> out;
  std::set<int> train_ids, test_ids, distractor_ids;
  for (const auto& t : m.tracklets) {
    switch (t.split) {
      case Split::Train: train_ids.insert(t.id); break;
      case Split::Test: test_ids.insert(t.id); break;
      case Split::Distractor: distractor_ids.insert(t.id); break;
    }
  }
  for (int id : train_ids)
    if (test_ids.count(id))
      out.push_back("id " + std::to_string(id) +
                    " appears in both train and test splits");
  for (int id : distractor_ids) {
    if (train_ids.count(id))
      out.push_back("distractor id " + std::to_string(id) +
                    " collides with a train identity");
    if (test_ids.count(id))
      out.push_back("distractor id " + std::to_string(id) +
                    " collides with a test identity");
  }
  for (size_t i = 0; i < m.tracklets.size(); ++i) {
    const auto& t = m.tracklets[i];
    const std::string tag = "tracklet " + std::to_string(i);
    if (t.distractor != (t.split == Split::Distractor))
      out.push_back(tag + ": distractor flag disagrees with split tag");
    if (t.frames.empty()) out.push_back(tag + ": no frames");
    if (t.camera.empty()) out.push_back(tag + ": empty camera");
    if (t.id < 0) out.push_back(tag + ": negative id");
    if (check_files) {
      for (size_t f = 0; f < t.frames.size(); ++f) {
        std::string p = frame_path(m, t, static_cast<int>(f));
        if (!std::filesystem::exists(p))
          out.push_back(tag + ": missing frame file " + p);
      }
    }
  }
  return out;
}

SplitSummary summarize(const Manifest& m, Split split) {
  SplitSummary s;
  std::set<int> ids;
  for (const auto& t : m.tracklets) {
    if (t.split != split) continue;
    ids.insert(t.id);
    ++s.tracklets;
    s.frames += static_cast<int64_t>(t.frames.size());
  }
  s.identities = static_cast<int>(ids.size());
  return s;
}

}  // namespace trireid
