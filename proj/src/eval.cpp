#include "trireid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>

namespace trireid {

std::string scenario_name(const ProtocolSpec& s) {
  auto letter = [](Platform p) {
    return p == Platform::Aerial ? 'A' : 'G';
  };
  return std::string{letter(s.query_platform), '2',
                     letter(s.gallery_platform)};
}

Protocol build_protocol(const Manifest& m, const ProtocolSpec& spec,
                        Split split) {
  const Modality qm = query_modality(spec);
  const Modality gm = gallery_modality(spec);
  Protocol p;
  for (int i = 0; i < static_cast<int>(m.tracklets.size()); ++i) {
    const Tracklet& t = m.tracklets[static_cast<size_t>(i)];
    if (t.split == split && !t.distractor) {
      if (t.platform == spec.query_platform && t.modality == qm)
        p.query.push_back(i);
      if (t.platform == spec.gallery_platform && t.modality == gm)
        p.gallery.push_back(i);
    }
    if (spec.include_distractors && t.distractor &&
        t.platform == spec.gallery_platform && t.modality == gm)
      p.gallery.push_back(i);
  }
  const std::string tag =
      scenario_name(spec) + " " + to_string(spec.direction);
  if (p.query.empty())
    throw DataError("protocol " + tag + " has no query tracklets");
  if (p.gallery.empty())
    throw DataError("protocol " + tag + " has no gallery tracklets");

  std::set<int> gallery_ids;
  for (int i : p.gallery) {
    const Tracklet& t = m.tracklets[static_cast<size_t>(i)];
    if (!t.distractor) gallery_ids.insert(t.id);
  }
  for (int i : p.query) {
    const int id = m.tracklets[static_cast<size_t>(i)].id;
    if (!gallery_ids.count(id))
      throw DataError("protocol " + tag + ": query identity " +
                      std::to_string(id) + " absent from gallery");
  }
  return p;
}

double cmc_at(const RankingResult& r, int rank) {
  if (r.cmc.empty()) return 0.0;
  const int i = std::min<int>(rank, static_cast<int>(r.cmc.size())) - 1;
  return r.cmc[static_cast<size_t>(std::max(i, 0))];
}

RankingResult rank(const Tensor& query_feats, const Tensor& gallery_feats,
                   const std::vector<RankItem>& query_meta,
                   const std::vector<RankItem>& gallery_meta,
                   bool camera_filter) {
  if (query_feats.ndim() != 2 || gallery_feats.ndim() != 2 ||
      query_feats.dim(1) != gallery_feats.dim(1))
    throw std::invalid_argument("rank: feature dimensions do not match");
  const int q = query_feats.dim(0), g = gallery_feats.dim(0);
  const int d = query_feats.dim(1);
  if (static_cast<int>(query_meta.size()) != q ||
      static_cast<int>(gallery_meta.size()) != g)
    throw std::invalid_argument("rank: metadata count mismatch");

  auto unit = [d](const Tensor& f) {
    Tensor u = f;
    for (int i = 0; i < f.dim(0); ++i) {
      double n = 0.0;
      for (int k = 0; k < d; ++k) n += f[i * d + k] * f[i * d + k];
      n = std::max(std::sqrt(n), 1e-12);
      for (int k = 0; k < d; ++k) u[i * d + k] /= n;
    }
    return u;
  };
  const Tensor qn = unit(query_feats), gn = unit(gallery_feats);

  RankingResult out;
  out.per_query_ap.reserve(static_cast<size_t>(q));
  std::vector<int> first_hit(static_cast<size_t>(q), -1);
  int max_len = 0;

  std::vector<std::pair<double, int>> order;
  for (int i = 0; i < q; ++i) {
    order.clear();
    for (int j = 0; j < g; ++j) {
      if (camera_filter && gallery_meta[(size_t)j].id == query_meta[(size_t)i].id &&
          gallery_meta[(size_t)j].camera == query_meta[(size_t)i].camera)
        continue;
      double dot = 0.0;
      for (int k = 0; k < d; ++k) dot += qn[i * d + k] * gn[j * d + k];
      order.emplace_back(1.0 - dot, j);
    }
    if (order.empty())
      throw DataError("rank: query " + std::to_string(i) +
                      " has no valid gallery entries");
    std::sort(order.begin(), order.end());
    max_len = std::max(max_len, static_cast<int>(order.size()));

    int relevant = 0;
    for (const auto& [dist, j] : order)
      relevant += gallery_meta[(size_t)j].id == query_meta[(size_t)i].id;
    if (relevant == 0)
      throw DataError("rank: query " + std::to_string(i) +
                      " has no matching gallery identity");

    double ap = 0.0;
    int hits = 0;
    for (int pos = 0; pos < static_cast<int>(order.size()); ++pos) {
      if (gallery_meta[(size_t)order[(size_t)pos].second].id !=
          query_meta[(size_t)i].id)
        continue;
      if (hits == 0) first_hit[(size_t)i] = pos;
      ++hits;
      ap += static_cast<double>(hits) / (pos + 1);
    }
    out.per_query_ap.push_back(ap / relevant);
  }

  out.cmc.assign(static_cast<size_t>(max_len), 0.0);
  for (int i = 0; i < q; ++i) out.cmc[(size_t)first_hit[(size_t)i]] += 1.0;
  double cum = 0.0;
  for (auto& v : out.cmc) {
    cum += v;
    v = cum / q;
  }
  for (double ap : out.per_query_ap) out.map += ap;
  out.map /= q;
  return out;
}

std::vector<int> clip_starts(int n, int t) {
  if (n <= 0 || t <= 0)
    throw std::invalid_argument("clip_starts: lengths must be positive");
  if (n <= t) return {0};
  std::vector<int> out;
  for (int s = 0; s + t <= n; s += t) out.push_back(s);
  if (out.back() + t < n) out.push_back(n - t);
  return out;
}

std::vector<ProtocolSpec> default_protocols(bool include_distractors) {
  std::vector<ProtocolSpec> specs;
  for (Platform qp : {Platform::Aerial, Platform::Ground})
    for (Platform gp : {Platform::Aerial, Platform::Ground})
      for (Direction dir : {Direction::V2I, Direction::I2V})
        specs.push_back({qp, gp, dir, include_distractors});
  return specs;
}

std::vector<EvalRow> evaluate(const Manifest& m,
                              const std::vector<ProtocolSpec>& specs,
                              const TrackletEncoder& encode,
                              bool camera_filter, Split split) {
  if (specs.empty())
    throw std::invalid_argument("evaluate: no protocols given");

  std::map<int, Tensor> cache;
  auto feature = [&](int idx) -> const Tensor& {
    auto it = cache.find(idx);
    if (it == cache.end())
      it = cache.emplace(idx, encode(m.tracklets[(size_t)idx])).first;
    return it->second;
  };
  auto pack = [&](const std::vector<int>& idxs, Tensor& feats,
                  std::vector<RankItem>& meta) {
    const int n = static_cast<int>(idxs.size());
    const int d = feature(idxs[0]).dim(0);
    feats = Tensor({n, d});
    for (int r = 0; r < n; ++r) {
      const Tensor& f = feature(idxs[(size_t)r]);
      if (f.ndim() != 1 || f.dim(0) != d)
        throw std::invalid_argument("evaluate: encoder output shape varies");
      std::copy(f.data.begin(), f.data.end(),
                feats.data.begin() + static_cast<int64_t>(r) * d);
      const Tracklet& t = m.tracklets[(size_t)idxs[(size_t)r]];
      meta.push_back({t.id, t.camera});
    }
  };

  std::vector<EvalRow> rows;
  for (const ProtocolSpec& spec : specs) {
    Protocol p = build_protocol(m, spec, split);
    Tensor qf, gf;
    std::vector<RankItem> qm, gm;
    pack(p.query, qf, qm);
    pack(p.gallery, gf, gm);
    EvalRow row;
    row.spec = spec;
    row.num_query = static_cast<int>(p.query.size());
    row.num_gallery = static_cast<int>(p.gallery.size());
    row.result = rank(qf, gf, qm, gm, camera_filter);
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string format_double(const char* fmt, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace

std::string render_results_table(const std::vector<EvalRow>& rows) {
  std::string out =
      "protocol\tdirection\tquery\tgallery\tR1\tR5\tR10\tR20\tmAP\n";
  for (const EvalRow& r : rows) {
    out += scenario_name(r.spec);
    out += '\t';
    out += to_string(r.spec.direction);
    out += '\t';
    out += std::to_string(r.num_query);
    out += '\t';
    out += std::to_string(r.num_gallery);
    for (int k : {1, 5, 10, 20}) {
      out += '\t';
      out += format_double("%.6f", cmc_at(r.result, k));
    }
    out += '\t';
    out += format_double("%.6f", r.result.map);
    out += '\n';
  }
  return out;
}

std::string render_results_text(const std::vector<EvalRow>& rows) {
  std::string out =
      "protocol  dir  query  gallery     R1     R5    R10    R20    mAP\n";
  for (const EvalRow& r : rows) {
    char line[160];
    std::snprintf(line, sizeof line,
                  "%-8s  %-3s  %5d  %7d  %5.1f  %5.1f  %5.1f  %5.1f  %5.1f\n",
                  scenario_name(r.spec).c_str(), to_string(r.spec.direction),
                  r.num_query, r.num_gallery, 100.0 * cmc_at(r.result, 1),
                  100.0 * cmc_at(r.result, 5), 100.0 * cmc_at(r.result, 10),
                  100.0 * cmc_at(r.result, 20), 100.0 * r.result.map);
    out += line;
  }
  return out;
}

}  // namespace trireid
