#include "trireid/eval.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "trireid/rng.hpp"

using namespace trireid;

namespace {

// Position-counting reimplementation of the ranker: no sort, each
// candidate's rank is the number of candidates beating it.
RankingResult oracle_rank(const Tensor& qf, const Tensor& gf,
                          const std::vector<RankItem>& qm,
                          const std::vector<RankItem>& gm, bool cam_filter) {
  const int q = qf.dim(0), g = gf.dim(0), d = qf.dim(1);
  auto dist = [&](int i, int j) {
    double nq = 0.0, ng = 0.0, dot = 0.0;
    for (int k = 0; k < d; ++k) {
      nq += qf[i * d + k] * qf[i * d + k];
      ng += gf[j * d + k] * gf[j * d + k];
    }
    nq = std::max(std::sqrt(nq), 1e-12);
    ng = std::max(std::sqrt(ng), 1e-12);
    for (int k = 0; k < d; ++k)
      dot += (qf[i * d + k] / nq) * (gf[j * d + k] / ng);
    return 1.0 - dot;
  };

  RankingResult out;
  std::vector<int> first_hit;
  int max_len = 0;
  for (int i = 0; i < q; ++i) {
    std::vector<int> cand;
    for (int j = 0; j < g; ++j) {
      if (cam_filter && gm[(size_t)j].id == qm[(size_t)i].id &&
          gm[(size_t)j].camera == qm[(size_t)i].camera)
        continue;
      cand.push_back(j);
    }
    max_len = std::max(max_len, (int)cand.size());
    std::vector<int> rel_pos;
    for (int a : cand) {
      if (gm[(size_t)a].id != qm[(size_t)i].id) continue;
      int pos = 0;
      for (int b : cand) {
        if (b == a) continue;
        const double da = dist(i, a), db = dist(i, b);
        if (db < da || (db == da && b < a)) ++pos;
      }
      rel_pos.push_back(pos);
    }
    double ap = 0.0;
    int best = max_len;
    for (int pa : rel_pos) {
      int hits = 0;
      for (int pb : rel_pos) hits += pb <= pa;
      ap += (double)hits / (pa + 1);
      best = std::min(best, pa);
    }
    first_hit.push_back(best);
    out.per_query_ap.push_back(ap / rel_pos.size());
  }
  out.cmc.assign((size_t)max_len, 0.0);
  for (int p : first_hit) out.cmc[(size_t)p] += 1.0;
  double cum = 0.0;
  for (auto& v : out.cmc) {
    cum += v;
    v = cum / q;
  }
  for (double ap : out.per_query_ap) out.map += ap;
  out.map /= q;
  return out;
}

// Unit vector at the given angle; cosine distance then orders by angle.
void put_angle(Tensor& f, int row, double deg) {
  const double rad = deg * 3.14159265358979323846 / 180.0;
  f[row * 2] = std::cos(rad);
  f[row * 2 + 1] = std::sin(rad);
}

std::vector<RankItem> items(const std::vector<int>& ids,
                            const std::string& prefix = "cam") {
  std::vector<RankItem> out;
  for (size_t i = 0; i < ids.size(); ++i)
    out.push_back({ids[i], prefix + std::to_string(i)});
  return out;
}

Tracklet tl(Split split, int id, Platform p, Modality m,
            const std::string& cam, bool distractor = false) {
  Tracklet t;
  t.split = split;
  t.id = id;
  t.platform = p;
  t.modality = m;
  t.camera = cam;
  t.distractor = distractor;
  t.frames = {"f.png"};
  return t;
}

}  // namespace

TEST_CASE("average precision for relevant items at ranks 1 and 3") {
  Tensor qf({1, 2}), gf({3, 2});
  put_angle(qf, 0, 0.0);
  put_angle(gf, 0, 5.0);   // relevant, rank 1
  put_angle(gf, 1, 10.0);  // other id, rank 2
  put_angle(gf, 2, 20.0);  // relevant, rank 3
  RankingResult r =
      rank(qf, gf, items({7}, "q"), items({7, 3, 7}, "g"),
           /*camera_filter=*/true);
  CHECK(r.map == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  REQUIRE(r.cmc.size() == 3);
  CHECK(r.cmc[0] == 1.0);
  CHECK(r.cmc[2] == 1.0);
}

TEST_CASE("perfect retrieval scores one everywhere") {
  const int n = 6;
  Tensor qf({n, 2}), gf({n, 2});
  std::vector<int> ids;
  for (int i = 0; i < n; ++i) {
    put_angle(qf, i, 30.0 * i);
    put_angle(gf, i, 30.0 * i + 2.0);
    ids.push_back(i);
  }
  RankingResult r = rank(qf, gf, items(ids, "q"), items(ids, "g"), true);
  CHECK(cmc_at(r, 1) == 1.0);
  CHECK(r.map == 1.0);
}

TEST_CASE("camera filtering excludes same-camera matches per query") {
  Tensor qf({1, 2}), gf({2, 2});
  put_angle(qf, 0, 0.0);
  put_angle(gf, 0, 1.0);   // same id, same camera: the near match
  put_angle(gf, 1, 40.0);  // same id, other camera
  std::vector<RankItem> qm{{5, "c0"}};
  std::vector<RankItem> gm{{5, "c0"}, {5, "c1"}};

  RankingResult off = rank(qf, gf, qm, gm, false);
  CHECK(off.cmc.size() == 2);
  CHECK(off.map == 1.0);

  RankingResult on = rank(qf, gf, qm, gm, true);
  CHECK(on.cmc.size() == 1);  // one candidate left
  CHECK(on.map == 1.0);

  // Filtering everything away is an error.
  std::vector<RankItem> all_same{{5, "c0"}, {5, "c0"}};
  CHECK_THROWS_AS(rank(qf, gf, qm, all_same, true), DataError);
}

TEST_CASE("ranker agrees with the position-counting oracle") {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const int ids_n = 2 + (int)rng.uniform_int(6);
    const int q = 1 + (int)rng.uniform_int(18);
    const int g_extra = (int)rng.uniform_int(30);
    const int d = 2 + (int)rng.uniform_int(6);
    const bool filter = trial % 2 == 0;

    // Gallery always carries every identity once so no query can starve.
    std::vector<RankItem> gm;
    for (int i = 0; i < ids_n; ++i)
      gm.push_back({i, "c" + std::to_string((int)rng.uniform_int(3))});
    for (int e = 0; e < g_extra; ++e)
      gm.push_back({(int)rng.uniform_int(ids_n),
                    "c" + std::to_string((int)rng.uniform_int(3))});
    std::vector<RankItem> qm;
    for (int i = 0; i < q; ++i)
      qm.push_back({(int)rng.uniform_int(ids_n), "q-cam"});

    Tensor qf({q, d}), gf({(int)gm.size(), d});
    for (auto& v : qf.data) v = rng.uniform(-1.0, 1.0);
    for (auto& v : gf.data) v = rng.uniform(-1.0, 1.0);

    RankingResult got = rank(qf, gf, qm, gm, filter);
    RankingResult want = oracle_rank(qf, gf, qm, gm, filter);
    REQUIRE(got.cmc.size() == want.cmc.size());
    for (size_t i = 0; i < got.cmc.size(); ++i)
      CHECK(got.cmc[i] == doctest::Approx(want.cmc[i]).epsilon(1e-9));
    CHECK(got.map == doctest::Approx(want.map).epsilon(1e-9));
    REQUIRE(got.per_query_ap.size() == want.per_query_ap.size());
    for (size_t i = 0; i < got.per_query_ap.size(); ++i)
      CHECK(got.per_query_ap[i] ==
            doctest::Approx(want.per_query_ap[i]).epsilon(1e-9));

    // Structural invariants on every instance.
    for (size_t i = 1; i < got.cmc.size(); ++i)
      CHECK(got.cmc[i] >= got.cmc[i - 1]);
    CHECK(got.cmc.back() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(got.map <= got.cmc.back() + 1e-12);
    CHECK(got.map >= 0.0);
  }
}

TEST_CASE("distractors never raise a query's precision") {
  Rng rng(113);
  Tensor qf({4, 3}), gf({8, 3});
  for (auto& v : qf.data) v = rng.uniform(-1.0, 1.0);
  for (auto& v : gf.data) v = rng.uniform(-1.0, 1.0);
  std::vector<RankItem> qm = items({0, 1, 2, 3});
  std::vector<RankItem> gm = items({0, 1, 2, 3, 0, 1, 2, 3});

  RankingResult before = rank(qf, gf, qm, gm, false);

  Tensor gf2({12, 3});
  std::copy(gf.data.begin(), gf.data.end(), gf2.data.begin());
  for (int64_t i = gf.numel(); i < gf2.numel(); ++i)
    gf2[i] = rng.uniform(-1.0, 1.0);
  std::vector<RankItem> gm2 = gm;
  for (int k = 0; k < 4; ++k) gm2.push_back({900 + k, "dcam"});

  RankingResult after = rank(qf, gf2, qm, gm2, false);
  for (size_t i = 0; i < qm.size(); ++i)
    CHECK(after.per_query_ap[i] <= before.per_query_ap[i] + 1e-12);
}

TEST_CASE("equal distances resolve by gallery index") {
  Tensor qf({1, 2}), gf({2, 2});
  put_angle(qf, 0, 0.0);
  put_angle(gf, 0, 15.0);
  put_angle(gf, 1, 15.0);  // identical to entry 0
  // Only entry 1 is relevant: with the tie broken toward index 0, the
  // relevant item sits at rank 2.
  RankingResult r = rank(qf, gf, items({4}), items({9, 4}), false);
  CHECK(r.cmc[0] == 0.0);
  CHECK(r.map == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("rank validates its inputs") {
  Tensor qf({1, 3}), gf({1, 2});
  CHECK_THROWS_AS(rank(qf, gf, items({0}), items({0}), true),
                  std::invalid_argument);
  Tensor gf3({2, 3});
  CHECK_THROWS_AS(rank(qf, gf3, items({0}), items({0}), true),
                  std::invalid_argument);
  // No gallery entry with the query's identity.
  Tensor gf4({1, 3});
  gf4[0] = 1.0;
  qf[0] = 1.0;
  CHECK_THROWS_AS(rank(qf, gf4, items({0}), items({1}), false), DataError);
}

TEST_CASE("protocol selection by platform, modality, and split") {
  Manifest m;
  m.root = ".";
  for (int id = 1; id <= 3; ++id) {
    m.tracklets.push_back(
        tl(Split::Test, id, Platform::Ground, Modality::Visible, "gv"));
    m.tracklets.push_back(
        tl(Split::Test, id, Platform::Ground, Modality::Infrared, "gi"));
    m.tracklets.push_back(
        tl(Split::Test, id, Platform::Aerial, Modality::Visible, "av"));
    m.tracklets.push_back(
        tl(Split::Train, id, Platform::Aerial, Modality::Infrared, "ai"));
  }
  m.tracklets.push_back(tl(Split::Distractor, 800, Platform::Ground,
                           Modality::Infrared, "gi", true));
  m.tracklets.push_back(tl(Split::Distractor, 801, Platform::Ground,
                           Modality::Visible, "gv", true));

  ProtocolSpec g2g{Platform::Ground, Platform::Ground, Direction::V2I, true};
  Protocol p = build_protocol(m, g2g);
  CHECK(p.query.size() == 3);
  CHECK(p.gallery.size() == 4);  // 3 infrared + 1 infrared distractor
  for (int i : p.query) {
    CHECK(m.tracklets[(size_t)i].modality == Modality::Visible);
    CHECK(m.tracklets[(size_t)i].platform == Platform::Ground);
  }

  ProtocolSpec no_dis = g2g;
  no_dis.include_distractors = false;
  CHECK(build_protocol(m, no_dis).gallery.size() == 3);

  // I2V swaps the modalities.
  ProtocolSpec i2v{Platform::Ground, Platform::Ground, Direction::I2V, false};
  Protocol pr = build_protocol(m, i2v);
  CHECK(pr.query.size() == 3);
  for (int i : pr.query)
    CHECK(m.tracklets[(size_t)i].modality == Modality::Infrared);

  // The aerial infrared tracklets live in the train split.
  ProtocolSpec a2a{Platform::Aerial, Platform::Aerial, Direction::V2I, false};
  CHECK_THROWS_AS(build_protocol(m, a2a), DataError);
  CHECK_THROWS_AS(build_protocol(m, a2a, Split::Train), DataError);

  // Gallery missing an identity the query side has.
  Manifest broken = m;
  broken.tracklets.erase(broken.tracklets.begin() + 1);  // id 1 gi
  CHECK_THROWS_AS(build_protocol(broken, g2g), DataError);
}

TEST_CASE("ground-to-ground gallery mirrors the reference split sizes") {
  Manifest m;
  m.root = ".";
  for (int id = 0; id < 163; ++id) {
    m.tracklets.push_back(
        tl(Split::Test, id, Platform::Ground, Modality::Visible, "v0"));
    if (id < 150)
      m.tracklets.push_back(
          tl(Split::Test, id, Platform::Ground, Modality::Visible, "v1"));
    m.tracklets.push_back(
        tl(Split::Test, id, Platform::Ground, Modality::Infrared, "i0"));
  }
  for (int k = 0; k < 36; ++k)
    m.tracklets.push_back(tl(Split::Distractor, 7000 + k, Platform::Ground,
                             Modality::Infrared, "i0", true));

  ProtocolSpec g2g{Platform::Ground, Platform::Ground, Direction::V2I, true};
  Protocol p = build_protocol(m, g2g);
  CHECK(p.query.size() == 313);
  CHECK(p.gallery.size() == 199);
}

TEST_CASE("clip windows cover every frame at a fixed stride") {
  CHECK(clip_starts(10, 4) == std::vector<int>{0, 4, 6});
  CHECK(clip_starts(8, 4) == std::vector<int>{0, 4});
  CHECK(clip_starts(3, 4) == std::vector<int>{0});
  CHECK(clip_starts(4, 4) == std::vector<int>{0});
  CHECK(clip_starts(9, 4) == std::vector<int>{0, 4, 5});
  CHECK_THROWS_AS(clip_starts(0, 4), std::invalid_argument);
  CHECK_THROWS_AS(clip_starts(4, 0), std::invalid_argument);
}

TEST_CASE("default protocols enumerate all scenario and direction pairs") {
  auto specs = default_protocols(true);
  REQUIRE(specs.size() == 8);
  const char* want[] = {"A2A", "A2A", "A2G", "A2G",
                        "G2A", "G2A", "G2G", "G2G"};
  for (int i = 0; i < 8; ++i) {
    CHECK(scenario_name(specs[(size_t)i]) == want[i]);
    CHECK(specs[(size_t)i].direction ==
          (i % 2 == 0 ? Direction::V2I : Direction::I2V));
  }
}

TEST_CASE("evaluate encodes each tracklet once and renders stable tables") {
  Manifest m;
  m.root = ".";
  for (int id = 0; id < 3; ++id)
    for (Platform p : {Platform::Aerial, Platform::Ground})
      for (Modality mo : {Modality::Visible, Modality::Infrared})
        m.tracklets.push_back(
            tl(Split::Test, id, p, mo,
               std::string(to_string(p)) + "-" + to_string(mo)));

  int calls = 0;
  TrackletEncoder enc = [&calls](const Tracklet& t) {
    ++calls;
    Tensor f({4});
    for (int k = 0; k < 4; ++k)
      f[k] = std::sin(1.0 + t.id * (k + 2) +
                      (t.platform == Platform::Aerial ? 0.7 : 0.0));
    return f;
  };

  auto rows = evaluate(m, default_protocols(false), enc, true);
  CHECK(rows.size() == 8);
  CHECK(calls == 12);
  for (const auto& r : rows) {
    CHECK(r.num_query == 3);
    CHECK(r.num_gallery == 3);
  }

  auto again = evaluate(m, default_protocols(false), enc, true);
  CHECK(render_results_table(rows) == render_results_table(again));

  std::string table = render_results_table(rows);
  CHECK(table.rfind("protocol\tdirection", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 9);
  std::string text = render_results_text(rows);
  CHECK(std::count(text.begin(), text.end(), '\n') == 9);

  CHECK_THROWS_AS(evaluate(m, {}, enc, true), std::invalid_argument);
}

TEST_CASE("random features rank near chance") {
  Rng rng(211);
  const int ids_n = 100, q = 200, d = 8;
  std::vector<RankItem> gm, qm;
  for (int i = 0; i < ids_n; ++i) gm.push_back({i, "g"});
  for (int i = 0; i < q; ++i)
    qm.push_back({(int)rng.uniform_int(ids_n), "q"});
  Tensor qf({q, d}), gf({ids_n, d});
  for (auto& v : qf.data) v = rng.normal();
  for (auto& v : gf.data) v = rng.normal();

  RankingResult r = rank(qf, gf, qm, gm, false);
  CHECK(cmc_at(r, 1) < 0.06);  // chance is 0.01
  CHECK(r.map < 0.15);
  CHECK(r.map > 0.0);
}
