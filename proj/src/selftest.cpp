#include "trireid/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "trireid/autodiff.hpp"
#include "trireid/config.hpp"
#include "trireid/eval.hpp"
#include "trireid/fusion.hpp"
#include "trireid/rng.hpp"
#include "trireid/stream_intermediary.hpp"
#include "trireid/stream_memory.hpp"
#include "trireid/stream_style.hpp"
#include "trireid/tensor.hpp"

namespace trireid {
namespace {

constexpr double kPi = 3.14159265358979323846;

bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

Tensor rand_t(Rng& rng, const std::vector<int>& shape, double lo, double hi) {
  Tensor t(shape);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

double dist_row(const Tensor& a, int i, const Tensor& b, int j) {
  const int d = a.dim(1);
  double ss = 0.0;
  for (int k = 0; k < d; ++k) {
    const double diff = a[i * d + k] - b[j * d + k];
    ss += diff * diff;
  }
  return std::sqrt(ss);
}

// Smoothed cross-entropy over an explicit softmax, no shared code with
// the graph op.
double loop_ce(const Tensor& logits, const std::vector<int>& ids,
               double eps) {
  const int r = logits.dim(0), c = logits.dim(1);
  double total = 0.0;
  for (int i = 0; i < r; ++i) {
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(logits[i * c + j]);
    double row = 0.0;
    for (int j = 0; j < c; ++j) {
      const double target =
          eps / c + (ids[(size_t)i] == j ? 1.0 - eps : 0.0);
      row -= target * std::log(std::exp(logits[i * c + j]) / z);
    }
    total += row;
  }
  return total / r;
}

double loop_triplet(const Tensor& f, const std::vector<int>& ids,
                    double margin) {
  const int b = f.dim(0);
  double total = 0.0;
  int valid = 0;
  for (int i = 0; i < b; ++i) {
    double dpos = -1.0, dneg = -1.0;
    for (int j = 0; j < b; ++j) {
      if (j == i) continue;
      const double dd = dist_row(f, i, f, j);
      if (ids[(size_t)j] == ids[(size_t)i])
        dpos = std::max(dpos, dd);
      else
        dneg = dneg < 0.0 ? dd : std::min(dneg, dd);
    }
    if (dpos < 0.0 || dneg < 0.0) continue;
    ++valid;
    total += std::max(0.0, dpos - dneg + margin);
  }
  return total / valid;
}

double loop_sa(const Tensor& attacked_logits, const Tensor& f,
               const Tensor& fa, const std::vector<int>& ids) {
  const int b = f.dim(0), d = f.dim(1);
  double con = 0.0;
  for (int i = 0; i < b; ++i)
    for (int k = 0; k < d; ++k) {
      const double diff = f[i * d + k] - fa[i * d + k];
      con += diff * diff;
    }
  return loop_ce(attacked_logits, ids, 0.0) + con / b;
}

// Cyclic reconstruction with the linear mapper x -> x A spelled out.
double loop_cr(const Tensor& vis, const Tensor& ir, const Tensor& A) {
  const int n = vis.dim(0), d = vis.dim(1);
  auto side = [&](const Tensor& from, const Tensor& to) {
    double total = 0.0;
    for (int r = 0; r < n; ++r) {
      double ss = 0.0;
      for (int j = 0; j < d; ++j) {
        double mapped = 0.0;
        for (int k = 0; k < d; ++k) mapped += from[r * d + k] * A[k * d + j];
        const double diff = to[r * d + j] - mapped;
        ss += diff * diff;
      }
      total += std::sqrt(ss);
    }
    return total;
  };
  return (side(ir, vis) + side(vis, ir)) / n;
}

double loop_v2m(const Tensor& feats, const std::vector<int>& ids,
                const std::vector<Platform>& plats, const Tensor& mem,
                const std::vector<MemKey>& keys, double tau) {
  const int b = feats.dim(0), d = feats.dim(1), m = mem.dim(0);
  auto unit = [d](const Tensor& t, int row) {
    std::vector<double> u((size_t)d);
    double n = 0.0;
    for (int j = 0; j < d; ++j) n += t[row * d + j] * t[row * d + j];
    n = std::sqrt(n);
    for (int j = 0; j < d; ++j) u[(size_t)j] = t[row * d + j] / n;
    return u;
  };
  std::map<std::pair<int, int>, std::vector<int>> cells;
  for (int i = 0; i < b; ++i)
    cells[{ids[(size_t)i], (int)plats[(size_t)i]}].push_back(i);

  double total = 0.0;
  for (const auto& [cell, members] : cells) {
    int row = -1;
    for (int i = 0; i < m; ++i)
      if (keys[(size_t)i].id == cell.first &&
          (int)keys[(size_t)i].platform == cell.second)
        row = i;
    std::vector<double> mrow = unit(mem, row);
    double denom = 0.0;
    std::vector<double> sim((size_t)b);
    for (int j = 0; j < b; ++j) {
      std::vector<double> vj = unit(feats, j);
      double dot = 0.0;
      for (int k = 0; k < d; ++k) dot += vj[(size_t)k] * mrow[(size_t)k];
      sim[(size_t)j] = dot / tau;
      denom += std::exp(sim[(size_t)j]);
    }
    double cell_loss = 0.0;
    for (int p : members)
      cell_loss += -std::log(std::exp(sim[(size_t)p]) / denom);
    total += cell_loss / (double)members.size();
  }
  return total / (double)cells.size();
}

// Position-count ranking: a candidate's rank is the number of candidates
// strictly closer, with index order breaking exact ties.
struct LoopRank {
  std::vector<double> cmc;
  double map = 0.0;
};

LoopRank loop_rank(const Tensor& qf, const Tensor& gf,
                   const std::vector<RankItem>& qm,
                   const std::vector<RankItem>& gm, bool filter) {
  const int q = qf.dim(0), g = gf.dim(0), d = qf.dim(1);
  auto unit = [d](const Tensor& t, int row) {
    std::vector<double> u((size_t)d);
    double n = 0.0;
    for (int j = 0; j < d; ++j) n += t[row * d + j] * t[row * d + j];
    n = std::max(std::sqrt(n), 1e-12);
    for (int j = 0; j < d; ++j) u[(size_t)j] = t[row * d + j] / n;
    return u;
  };

  LoopRank out;
  out.cmc.assign((size_t)g, 0.0);
  for (int a = 0; a < q; ++a) {
    std::vector<double> ua = unit(qf, a);
    std::vector<int> cand;
    std::vector<double> dist;
    for (int c = 0; c < g; ++c) {
      if (filter && gm[(size_t)c].id == qm[(size_t)a].id &&
          gm[(size_t)c].camera == qm[(size_t)a].camera)
        continue;
      std::vector<double> uc = unit(gf, c);
      double ss = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff = ua[(size_t)j] - uc[(size_t)j];
        ss += diff * diff;
      }
      cand.push_back(c);
      dist.push_back(std::sqrt(ss));
    }

    std::vector<int> rel_pos;
    for (size_t i = 0; i < cand.size(); ++i) {
      if (gm[(size_t)cand[i]].id != qm[(size_t)a].id) continue;
      int pos = 0;
      for (size_t j = 0; j < cand.size(); ++j) {
        if (j == i) continue;
        if (dist[j] < dist[i] || (dist[j] == dist[i] && j < i)) ++pos;
      }
      rel_pos.push_back(pos);
    }
    std::sort(rel_pos.begin(), rel_pos.end());

    double ap = 0.0;
    for (size_t t = 0; t < rel_pos.size(); ++t)
      ap += (double)(t + 1) / (double)(rel_pos[t] + 1);
    ap /= (double)rel_pos.size();
    out.map += ap;
    for (int r = rel_pos.front(); r < g; ++r) out.cmc[(size_t)r] += 1.0;
  }
  out.map /= q;
  for (auto& v : out.cmc) v /= q;
  return out;
}

Tensor edge_map_loop(const Tensor& frame, Modality m,
                     const EdgeOperator& op) {
  const int c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  auto mirror = [](int i, int n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  std::vector<double> lum((size_t)h * w);
  const int64_t plane = (int64_t)h * w;
  for (int64_t i = 0; i < plane; ++i)
    lum[(size_t)i] = (m == Modality::Visible && c == 3)
                         ? 0.299 * frame[i] + 0.587 * frame[plane + i] +
                               0.114 * frame[2 * plane + i]
                         : frame[i];
  Tensor out({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = op.offset;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx)
          acc += op.kernel[(size_t)(ky * 3 + kx)] *
                 lum[(size_t)mirror(y + ky - 1, h) * w + mirror(x + kx - 1, w)];
      out[(int64_t)y * w + x] = acc;
    }
  return out;
}

void channel_stats(const Tensor& x, int n, int c, double* mu, double* sd) {
  const int h = x.dim(2), w = x.dim(3);
  const int64_t base = ((int64_t)n * x.dim(1) + c) * h * w;
  double m = 0.0;
  for (int64_t i = 0; i < (int64_t)h * w; ++i) m += x[base + i];
  m /= (double)(h * w);
  double v = 0.0;
  for (int64_t i = 0; i < (int64_t)h * w; ++i) {
    const double diff = x[base + i] - m;
    v += diff * diff;
  }
  *mu = m;
  *sd = std::sqrt(v / (double)(h * w));
}

struct Suite {
  int failed = 0;
  void report(bool ok, const char* what) {
    std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", what);
    if (!ok) ++failed;
  }
};

void check_losses(Suite& s) {
  Rng rng(101);
  bool ce_ok = true, tri_ok = true, sa_ok = true, cr_ok = true,
       v2m_ok = true;
  for (int trial = 0; trial < 10; ++trial) {
    const int b = 4 + (int)rng.uniform_int(12);
    const int c = 2 + (int)rng.uniform_int(7);
    const int d = 2 + (int)rng.uniform_int(7);

    Tensor logits = rand_t(rng, {b, c}, -3.0, 3.0);
    std::vector<int> labels;
    for (int i = 0; i < b; ++i) labels.push_back((int)rng.uniform_int(c));
    const double eps = trial % 2 == 0 ? 0.1 : 0.0;
    ce_ok = ce_ok && close(value(loss_id(make_const(logits), labels, eps)),
                           loop_ce(logits, labels, eps), 1e-6);

    Tensor feats = rand_t(rng, {b, d}, -2.0, 2.0);
    std::vector<int> ids;
    for (int i = 0; i < b; ++i) ids.push_back((int)rng.uniform_int(3));
    ids[0] = 0;
    ids[1] = 0;
    ids[(size_t)b - 1] = 1;
    tri_ok = tri_ok &&
             close(value(loss_tri(make_const(feats), ids, 0.3)),
                   loop_triplet(feats, ids, 0.3), 1e-6);

    Tensor att_logits = rand_t(rng, {b, c}, -3.0, 3.0);
    Tensor att_feats = rand_t(rng, {b, d}, -2.0, 2.0);
    sa_ok = sa_ok &&
            close(value(loss_sa(make_const(logits), make_const(att_logits),
                                make_const(feats), make_const(att_feats),
                                labels)),
                  loop_sa(att_logits, feats, att_feats, labels), 1e-6);

    Tensor vis = rand_t(rng, {b, d}, -2.0, 2.0);
    Tensor ir = rand_t(rng, {b, d}, -2.0, 2.0);
    Tensor A = rand_t(rng, {d, d}, -1.0, 1.0);
    Var a_node = make_const(A);
    const double got_cr = value(loss_cr(
        make_const(vis), make_const(ir),
        [&a_node](const Var& x) { return matmul(x, a_node); }));
    cr_ok = cr_ok && close(got_cr, loop_cr(vis, ir, A), 1e-6);

    std::vector<MemKey> keys;
    for (int id = 0; id < 3; ++id)
      for (Platform p : {Platform::Aerial, Platform::Ground})
        keys.push_back(MemKey{id, p});
    std::vector<Platform> plats;
    for (int i = 0; i < b; ++i)
      plats.push_back(rng.uniform_int(2) == 0 ? Platform::Aerial
                                              : Platform::Ground);
    Tensor mem = rand_t(rng, {(int)keys.size(), d}, -2.0, 2.0);
    v2m_ok = v2m_ok &&
             close(value(loss_v2m(make_const(feats), ids, plats,
                                  make_const(mem), keys, 0.3)),
                   loop_v2m(feats, ids, plats, mem, keys, 0.3), 1e-6);
  }
  s.report(ce_ok, "identity loss matches a softmax double loop");
  s.report(tri_ok, "triplet loss matches an exhaustive pair scan");
  s.report(sa_ok, "style defense loss matches its two-term form");
  s.report(cr_ok, "reconstruction loss matches a row-norm loop");
  s.report(v2m_ok, "memory contrastive loss matches a cell loop");
}

void check_metrics(Suite& s) {
  Rng rng(202);
  bool rank_ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    const int ids = 2 + (int)rng.uniform_int(5);
    const int q = 1 + (int)rng.uniform_int(10);
    const int extra = (int)rng.uniform_int(12);
    const int d = 4;

    std::vector<RankItem> qm, gm;
    for (int i = 0; i < q; ++i)
      qm.push_back({(int)rng.uniform_int(ids),
                    "q" + std::to_string((int)rng.uniform_int(3))});
    for (int i = 0; i < ids; ++i)
      gm.push_back({i, "g" + std::to_string((int)rng.uniform_int(3))});
    for (int i = 0; i < extra; ++i)
      gm.push_back({(int)rng.uniform_int(ids),
                    "g" + std::to_string((int)rng.uniform_int(3))});

    Tensor qf = rand_t(rng, {q, d}, -1.0, 1.0);
    Tensor gf = rand_t(rng, {(int)gm.size(), d}, -1.0, 1.0);

    RankingResult got = rank(qf, gf, qm, gm, false);
    LoopRank want = loop_rank(qf, gf, qm, gm, false);
    rank_ok = rank_ok && close(got.map, want.map, 1e-9);
    for (size_t r = 0; r < want.cmc.size(); ++r)
      rank_ok = rank_ok && close(got.cmc[r], want.cmc[r], 1e-9);
  }
  s.report(rank_ok, "ranking matches a position-count oracle");

  // One relevant at rank 1 and one at rank 3: AP = (1/1 + 2/3) / 2.
  auto angle = [](double deg) {
    const double rad = deg * kPi / 180.0;
    return std::vector<double>{std::cos(rad), std::sin(rad)};
  };
  Tensor qf({1, 2}, angle(0.0));
  Tensor gf({3, 2});
  const std::vector<double> g0 = angle(10.0), g1 = angle(20.0),
                            g2 = angle(30.0);
  std::copy(g0.begin(), g0.end(), gf.data.begin());
  std::copy(g1.begin(), g1.end(), gf.data.begin() + 2);
  std::copy(g2.begin(), g2.end(), gf.data.begin() + 4);
  RankingResult hand =
      rank(qf, gf, {{7, "q"}}, {{7, "g0"}, {3, "g1"}, {7, "g2"}}, true);
  bool ap_ok = close(hand.map, 5.0 / 6.0, 1e-12);
  for (size_t r = 1; r < hand.cmc.size(); ++r)
    ap_ok = ap_ok && hand.cmc[r] >= hand.cmc[r - 1];
  s.report(ap_ok, "average precision worked case comes out 5/6");
}

void check_style_ops(Suite& s) {
  Rng rng(303);
  bool stat_ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const int h = 2 + (int)rng.uniform_int(4);
    const int w = 2 + (int)rng.uniform_int(4);
    Tensor target = rand_t(rng, {1, 2, h, w}, -2.0, 2.0);
    Tensor donor = rand_t(rng, {1, 2, h, w}, -2.0, 2.0);
    AttackResult res =
        style_attack(make_const(target), make_const(donor), 1e-6);
    for (int c = 0; c < 2; ++c) {
      double mu_t, sd_t, mu_d, sd_d, mu_o, sd_o;
      channel_stats(target, 0, c, &mu_t, &sd_t);
      if (sd_t <= 1e-6) continue;
      channel_stats(donor, 0, c, &mu_d, &sd_d);
      channel_stats(res.features->value, 0, c, &mu_o, &sd_o);
      stat_ok = stat_ok && close(mu_o, mu_d, 1e-4) &&
                close(sd_o, sd_d, 1e-4);
    }
  }
  s.report(stat_ok, "style attack adopts the donor channel statistics");

  Tensor same = rand_t(rng, {2, 3, 5, 4}, -1.0, 1.0);
  Var node = make_const(same);
  AttackResult fixed = style_attack(node, node, 1e-6);
  s.report(fixed.features->value.data == same.data,
           "style attack on itself is an exact fixed point");

  bool range_ok = true;
  for (int i = 0; i < 2500; ++i) {
    const StyleCoeffs c = sample_style_coeffs(rng);
    for (double v : {c.r, c.g, c.b, c.ir})
      range_ok = range_ok && v >= 0.5 && v <= 1.5;
  }
  s.report(range_ok, "style gains stay inside [0.5, 1.5]");

  Tensor frame = rand_t(rng, {3, 6, 5}, 0.0, 1.0);
  const StyleCoeffs unit;
  s.report(style_augment(frame, Modality::Visible, unit).data == frame.data &&
               style_augment(frame, Modality::Infrared, unit).data ==
                   frame.data,
           "unit style gains reproduce the frame exactly");
}

void check_memory_ops(Suite& s) {
  Rng rng(404);
  const int d = 6;
  std::vector<SequenceFeature> feats;
  for (int i = 0; i < 30; ++i) {
    SequenceFeature f;
    f.v = rand_t(rng, {d}, -2.0, 2.0);
    f.id = (int)rng.uniform_int(4);
    f.platform =
        rng.uniform_int(2) == 0 ? Platform::Aerial : Platform::Ground;
    feats.push_back(std::move(f));
  }
  ViewMemory mem = build_memory(feats);
  bool mean_ok = mem.size() > 0;
  for (int row = 0; row < mem.size(); ++row) {
    std::vector<double> acc((size_t)d, 0.0);
    int count = 0;
    for (const auto& f : feats)
      if (f.id == mem.keys[(size_t)row].id &&
          f.platform == mem.keys[(size_t)row].platform) {
        for (int j = 0; j < d; ++j) acc[(size_t)j] += f.v[j];
        ++count;
      }
    mean_ok = mean_ok && count == mem.counts[(size_t)row];
    for (int j = 0; j < d; ++j)
      mean_ok = mean_ok &&
                close(mem.base[row * d + j], acc[(size_t)j] / count, 1e-12);
  }
  s.report(mean_ok, "view memory rows are per-cell arithmetic means");

  Config cfg;
  cfg.embed_dim = d;
  ParamStore ps;
  Rng init(1);
  PromptDecoder dec(ps, cfg, init);
  for (const auto& [name, v] : ps.entries())
    std::fill(v->value.data.begin(), v->value.data.end(), 0.0);
  dec.refresh(mem);
  bool zero_ok = true;
  for (double v : mem.prompts.data) zero_ok = zero_ok && v == 0.0;
  zero_ok = zero_ok && mem.updated.data == mem.base.data;
  s.report(zero_ok, "a zeroed decoder leaves the memory untouched");
}

void check_edge_ops(Suite& s) {
  Rng rng(505);
  EdgeOperator op;
  op.offset = 2.0;
  bool map_ok = true;
  for (int trial = 0; trial < 10; ++trial) {
    const int h = 3 + (int)rng.uniform_int(6);
    const int w = 3 + (int)rng.uniform_int(6);
    Tensor frame({3, h, w});
    for (auto& v : frame.data) v = (double)rng.uniform_int(256);
    const Modality m =
        trial % 2 == 0 ? Modality::Visible : Modality::Infrared;
    map_ok = map_ok &&
             anaglyph(frame, m, op).data == edge_map_loop(frame, m, op).data;
  }
  s.report(map_ok, "edge maps match a mirrored double loop bit for bit");

  Tensor flat = Tensor::full({3, 5, 7}, 1.0);
  EdgeOperator zero_sum;
  zero_sum.kernel = {0.5, -1.0, 0.5, 1.0, -2.0, 1.0, 0.5, -1.0, 0.5};
  zero_sum.offset = 3.0;
  Tensor out = anaglyph(flat, Modality::Infrared, zero_sum);
  bool const_ok = true;
  for (double v : out.data) const_ok = const_ok && v == 3.0;
  s.report(const_ok, "a zero-sum kernel on a flat frame yields the offset");
}

void check_recombination(Suite& s) {
  Rng rng(606);
  bool ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    Config cfg;
    cfg.lambda1 = rng.uniform(0.0, 3.0);
    cfg.lambda2 = rng.uniform(0.0, 3.0);
    cfg.lambda3 = rng.uniform(0.0, 3.0);
    cfg.lambda4 = rng.uniform(0.0, 3.0);
    LossTerms terms;
    terms.id = make_const(Tensor::scalar(rng.uniform(0.0, 4.0)));
    terms.tri = make_const(Tensor::scalar(rng.uniform(0.0, 4.0)));
    if (trial % 2 == 0)
      terms.sa = make_const(Tensor::scalar(rng.uniform(0.0, 4.0)));
    if (trial % 3 == 0)
      terms.cr = make_const(Tensor::scalar(rng.uniform(0.0, 4.0)));
    if (trial % 4 == 0)
      terms.v2m = make_const(Tensor::scalar(rng.uniform(0.0, 4.0)));
    LossReport rep;
    total_loss(terms, cfg, &rep);
    const double recombined =
        ((((rep.l_id + cfg.lambda1 * rep.l_tri) + cfg.lambda2 * rep.l_sa) +
          cfg.lambda3 * rep.l_cr) +
         cfg.lambda4 * rep.l_v2m);
    ok = ok && rep.total == recombined;
  }
  s.report(ok, "reported totals recombine exactly from their terms");
}

}  // namespace

bool run_selftest() {
  Suite s;
  check_losses(s);
  check_metrics(s);
  check_style_ops(s);
  check_memory_ops(s);
  check_edge_ops(s);
  check_recombination(s);
  std::printf("%s\n", s.failed == 0 ? "selftest: all properties passed"
                                    : "selftest: FAILURES detected");
  return s.failed == 0;
}

}  // namespace trireid
