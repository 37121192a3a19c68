#pragma once

#include <functional>
#include <string>
#include <vector>

#include "trireid/manifest.hpp"
#include "trireid/tensor.hpp"
#include "trireid/types.hpp"

namespace trireid {

/// Retrieval direction: which modality queries and which is searched.
enum class Direction { V2I, I2V };

inline const char* to_string(Direction d) {
  return d == Direction::V2I ? "V2I" : "I2V";
}
inline Direction direction_from(const std::string& s) {
  if (s == "V2I" || s == "v2i") return Direction::V2I;
  if (s == "I2V" || s == "i2v") return Direction::I2V;
  throw DataError("unknown direction '" + s + "'");
}

struct ProtocolSpec {
  Platform query_platform = Platform::Ground;
  Platform gallery_platform = Platform::Ground;
  Direction direction = Direction::V2I;
  bool include_distractors = true;
};

inline Modality query_modality(const ProtocolSpec& s) {
  return s.direction == Direction::V2I ? Modality::Visible
                                       : Modality::Infrared;
}
inline Modality gallery_modality(const ProtocolSpec& s) {
  return s.direction == Direction::V2I ? Modality::Infrared
                                       : Modality::Visible;
}

/// "A2G" style scenario tag: query platform, then gallery platform.
std::string scenario_name(const ProtocolSpec& s);

/// Tracklet indices into the manifest making up one retrieval task.
struct Protocol {
  std::vector<int> query;
  std::vector<int> gallery;
};

/// Selects query and gallery tracklets of the given split by the spec's
/// platform and modality, appending matching distractor tracklets to the
/// gallery when enabled. Throws DataError when either side is empty or a
/// query identity never appears in the gallery.
Protocol build_protocol(const Manifest& m, const ProtocolSpec& spec,
                        Split split = Split::Test);

/// Identity and camera of one ranked item.
struct RankItem {
  int id = 0;
  std::string camera;
};

struct RankingResult {
  std::vector<double> cmc;  // cmc[r] = fraction of queries hit by rank r+1
  double map = 0.0;
  std::vector<double> per_query_ap;
};

/// cmc at a 1-based rank, clamped to the curve length.
double cmc_at(const RankingResult& r, int rank);

/// Cosine-distance retrieval. Rows of the feature matrices pair with the
/// metadata entries. With camera_filter, gallery entries sharing both
/// identity and camera with the query are skipped for that query. Ties in
/// distance resolve by gallery index, so results are reproducible.
/// Throws on mismatched shapes and on queries left without a same-identity
/// gallery entry.
RankingResult rank(const Tensor& query_feats, const Tensor& gallery_feats,
                   const std::vector<RankItem>& query_meta,
                   const std::vector<RankItem>& gallery_meta,
                   bool camera_filter);

/// Start offsets of length-t windows covering [0, n): stride t, plus a
/// tail window flushed to the end when frames would be left over. A short
/// sequence yields the single start 0.
std::vector<int> clip_starts(int n, int t);

/// Maps one tracklet to its feature vector [D].
using TrackletEncoder = std::function<Tensor(const Tracklet&)>;

struct EvalRow {
  ProtocolSpec spec;
  int num_query = 0;
  int num_gallery = 0;
  RankingResult result;
};

/// All four platform pairings crossed with both directions, in scenario
/// order A2A, A2G, G2A, G2G with V2I before I2V.
std::vector<ProtocolSpec> default_protocols(bool include_distractors);

/// Runs rank once per spec, encoding every distinct tracklet exactly once
/// across all protocols. Throws on an empty spec list.
std::vector<EvalRow> evaluate(const Manifest& m,
                              const std::vector<ProtocolSpec>& specs,
                              const TrackletEncoder& encode,
                              bool camera_filter, Split split = Split::Test);

/// Tab-separated table: protocol, direction, counts, R1/R5/R10/R20, mAP.
std::string render_results_table(const std::vector<EvalRow>& rows);

/// Aligned percentage table for terminals.
std::string render_results_text(const std::vector<EvalRow>& rows);

}  // namespace trireid
