#include <gtest/gtest.h>

#include <random>
#include <set>

#include "rtknet/evaluation.hpp"

using namespace rtknet;

namespace {

const PostprocConfig kCfg = PostprocConfig::with_classes(4, 2);  // 0,1 things; 2,3 stuff

PanopticLabelMap blank(std::size_t h, std::size_t w, std::uint32_t fill = kVoidId) {
  PanopticLabelMap m;
  m.height = h;
  m.width = w;
  m.ids.assign(h * w, fill);
  return m;
}

void paint(PanopticLabelMap& m, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1, std::uint32_t id) {
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) m.ids[r * m.width + c] = id;
}

std::uint32_t id(std::size_t cls, std::size_t inst) { return encode_panoptic_id(cls, inst, kCfg); }

// Plain pixel-count IoU, void-aware.
double brute_iou(const PanopticLabelMap& p, std::uint32_t pid, const PanopticLabelMap& g, std::uint32_t gid) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    const bool in_p = p.ids[i] == pid && g.ids[i] != kVoidId;
    const bool in_g = g.ids[i] == gid;
    inter += in_p && in_g;
    uni += in_p || in_g;
  }
  return uni ? double(inter) / double(uni) : 0.0;
}

PanopticLabelMap random_map(std::mt19937_64& rng, std::size_t h, std::size_t w) {
  PanopticLabelMap m = blank(h, w);
  std::uniform_int_distribution<std::size_t> cls(0, 3), inst(1, 3), pos(0, 7);
  for (int k = 0; k < 6; ++k) {
    const std::size_t c = cls(rng);
    const std::uint32_t v = id(c, c < 2 ? inst(rng) : 0);
    const std::size_t r0 = pos(rng), c0 = pos(rng);
    paint(m, r0, std::min(h, r0 + 1 + pos(rng)), c0, std::min(w, c0 + 1 + pos(rng)), v);
  }
  return m;
}

}  // namespace

TEST(MatchIoU, IdenticalAndDisjoint) {
  PanopticLabelMap a = blank(8, 8, id(2, 0));
  paint(a, 1, 4, 1, 4, id(0, 1));
  const MatchResult same = match_segments_iou(a, a, kCfg);
  ASSERT_EQ(same.matches.at(0).size(), 1u);
  EXPECT_EQ(same.matches.at(0)[0].iou, 1.0);
  EXPECT_EQ(same.matches.at(2)[0].iou, 1.0);

  PanopticLabelMap p = blank(8, 8, id(2, 0)), g = blank(8, 8, id(2, 0));
  paint(p, 0, 2, 0, 2, id(0, 1));
  paint(g, 5, 7, 5, 7, id(0, 1));
  const MatchResult r = match_segments_iou(p, g, kCfg);
  EXPECT_TRUE(!r.matches.count(0) || r.matches.at(0).empty());
}

TEST(MatchIoU, OffsetSquaresAgainstPixelCount) {
  // Labeled background, so no predicted pixel falls on void.
  PanopticLabelMap p = blank(8, 8, id(2, 0)), g = blank(8, 8, id(2, 0));
  paint(p, 0, 4, 0, 4, id(0, 1));
  paint(g, 0, 4, 3, 7, id(0, 1));
  const double expect = brute_iou(p, id(0, 1), g, id(0, 1));
  EXPECT_DOUBLE_EQ(expect, 4.0 / 28.0);
  EXPECT_DOUBLE_EQ(segment_iou(p, id(0, 1), g, id(0, 1)), expect);
}

TEST(MatchIoU, VoidPixelsLeaveTheUnion) {
  PanopticLabelMap p = blank(4, 4), g = blank(4, 4);
  paint(p, 0, 4, 0, 4, id(2, 0));
  paint(g, 0, 2, 0, 4, id(2, 0));  // lower half void
  EXPECT_DOUBLE_EQ(segment_iou(p, id(2, 0), g, id(2, 0)), 1.0);
  EXPECT_EQ(evaluate_pq(p, g, kCfg).all.pq, 1.0);
}

TEST(MatchIoU, ErrorsAndUniquenessOnRandomMaps) {
  EXPECT_THROW(match_segments_iou(blank(4, 4), blank(4, 5), kCfg), InputError);
  PanopticLabelMap bad = blank(2, 2);
  bad.ids[0] = id(3, 0) + kCfg.offset;  // class 4 does not exist
  EXPECT_THROW(match_segments_iou(bad, blank(2, 2), kCfg), InputError);

  std::mt19937_64 rng(12);
  for (int t = 0; t < 300; ++t) {
    const PanopticLabelMap p = random_map(rng, 10, 10), g = random_map(rng, 10, 10);
    const MatchResult r = match_segments_iou(p, g, kCfg);
    std::set<std::uint32_t> ps, gs;
    for (const auto& [cls, list] : r.matches)
      for (const auto& m : list) {
        EXPECT_TRUE(ps.insert(m.pred_id).second);
        EXPECT_TRUE(gs.insert(m.gt_id).second);
        EXPECT_EQ(decode_panoptic_id(m.pred_id, kCfg).class_label, cls);
        EXPECT_GT(m.iou, 0.5);
        EXPECT_DOUBLE_EQ(m.iou, brute_iou(p, m.pred_id, g, m.gt_id));
      }
  }
}

TEST(PanopticQuality, PerfectAndSingleTp) {
  PanopticLabelMap g = blank(8, 8, id(2, 0));
  paint(g, 0, 3, 0, 3, id(0, 1));
  paint(g, 4, 7, 4, 8, id(1, 2));
  const PQResult perfect = evaluate_pq(g, g, kCfg);
  EXPECT_EQ(perfect.all.pq, 1.0);
  EXPECT_EQ(perfect.things.pq, 1.0);
  EXPECT_EQ(perfect.stuff.pq, 1.0);
  EXPECT_EQ(perfect.tp, 3u);

  // One TP at IoU 0.8 and one FP: 0.8 * 1 / (1 + 0.5).
  PanopticLabelMap gt = blank(10, 10), pr = blank(10, 10);
  paint(gt, 0, 5, 0, 4, id(0, 1));   // 20 px
  paint(pr, 0, 4, 0, 4, id(0, 1));   // 16 px inside -> IoU 0.8
  paint(gt, 6, 10, 5, 10, id(2, 0)); // stuff under the false positive
  paint(pr, 7, 9, 7, 9, id(0, 3));   // false positive
  const PQResult r = evaluate_pq(pr, gt, kCfg);
  const ClassPQ& c0 = r.per_class.front();
  EXPECT_EQ(c0.tp, 1u);
  EXPECT_EQ(c0.fp, 1u);
  EXPECT_EQ(c0.fn, 0u);
  EXPECT_NEAR(c0.pq, 0.8 / 1.5, 1e-12);
  EXPECT_NEAR(c0.sq, 0.8, 1e-12);
  EXPECT_NEAR(c0.rq, 2.0 / 3.0, 1e-12);
}

TEST(PanopticQuality, AllVoidIsEmpty) {
  const PQResult r = evaluate_pq(blank(4, 4), blank(4, 4), kCfg);
  EXPECT_TRUE(r.empty);
  EXPECT_EQ(r.all.pq, 0.0);
  EXPECT_EQ(r.to_json()["empty"], true);
}

TEST(PanopticQuality, IdentitiesAndRelabelInvariance) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 200; ++t) {
    const PanopticLabelMap p = random_map(rng, 10, 10), g = random_map(rng, 10, 10);
    const PQResult r = evaluate_pq(p, g, kCfg);
    for (const auto& c : r.per_class) {
      EXPECT_DOUBLE_EQ(c.pq, c.sq * c.rq);
      EXPECT_GE(c.pq, 0.0);
      EXPECT_LE(c.pq, 1.0);
    }
    // Swapping instance indices within a class does not change anything.
    PanopticLabelMap q = p;
    for (auto& v : q.ids) {
      if (v == kVoidId) continue;
      const DecodedId d = decode_panoptic_id(v, kCfg);
      if (d.class_label < 2) v = id(d.class_label, 4 - d.instance_index);
    }
    const PQResult s = evaluate_pq(q, g, kCfg);
    EXPECT_DOUBLE_EQ(s.all.pq, r.all.pq);
    EXPECT_EQ(s.tp, r.tp);
    EXPECT_EQ(s.fp, r.fp);
  }
}

TEST(PanopticQuality, PredictionOnVoidIsNotFalsePositive) {
  PanopticLabelMap g = blank(6, 6), p = blank(6, 6);
  paint(g, 0, 3, 0, 6, id(2, 0));
  paint(p, 0, 3, 0, 6, id(2, 0));
  const PQResult before = evaluate_pq(p, g, kCfg);
  paint(p, 4, 6, 0, 3, id(0, 1));  // entirely on ground-truth void
  const PQResult after = evaluate_pq(p, g, kCfg);
  EXPECT_EQ(after.fp, before.fp);
  EXPECT_EQ(after.all.pq, before.all.pq);
}

TEST(PQAccumulator, SumsAcrossImages) {
  PanopticLabelMap g1 = blank(4, 4), p1 = blank(4, 4), g2 = blank(4, 4), p2 = blank(4, 4);
  paint(g1, 0, 4, 0, 4, id(0, 1));
  paint(p1, 0, 4, 0, 4, id(0, 1));
  paint(g2, 0, 2, 0, 2, id(0, 1));  // missed in image 2
  PQAccumulator acc(kCfg), other(kCfg);
  acc.add(match_segments_iou(p1, g1, kCfg));
  other.add(match_segments_iou(p2, g2, kCfg));
  acc.merge(other);
  const PQResult r = acc.result();
  EXPECT_EQ(r.tp, 1u);
  EXPECT_EQ(r.fn, 1u);
  EXPECT_NEAR(r.all.pq, 1.0 * (1.0 / 1.5), 1e-12);
}
