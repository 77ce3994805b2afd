#include "rtknet/evaluation.hpp"

#include <algorithm>
#include <set>
#include <string>
#include <utility>

#include "rtknet/errors.hpp"

namespace rtknet {

using nlohmann::json;

namespace {

void expect_comparable(const PanopticLabelMap& pred, const PanopticLabelMap& gt) {
  if (pred.width != gt.width || pred.height != gt.height) {
    throw InputError("label maps differ in size: " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " vs " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  if (pred.offset != gt.offset) throw InputError("label maps use different offsets");
  if (pred.ids.size() != pred.width * pred.height || gt.ids.size() != gt.width * gt.height) {
    throw InputError("label map pixel count does not match its size");
  }
}

std::size_t class_of(std::uint32_t id, const PanopticLabelMap& map, const PostprocConfig& cfg) {
  const std::size_t label = id / map.offset;
  if (label >= cfg.num_classes()) {
    throw InputError("segment id " + std::to_string(id) + " decodes to unknown class " + std::to_string(label));
  }
  return label;
}

SplitPQ average(const std::vector<const ClassPQ*>& rows) {
  SplitPQ s;
  s.classes = rows.size();
  if (rows.empty()) return s;
  for (const ClassPQ* r : rows) {
    s.pq += r->pq;
    s.sq += r->sq;
    s.rq += r->rq;
  }
  const auto n = static_cast<double>(rows.size());
  s.pq /= n;
  s.sq /= n;
  s.rq /= n;
  return s;
}

json split_json(const SplitPQ& s) { return {{"pq", s.pq}, {"sq", s.sq}, {"rq", s.rq}, {"classes", s.classes}}; }

}  // namespace

MatchResult match_segments_iou(const PanopticLabelMap& pred, const PanopticLabelMap& gt, const PostprocConfig& cfg) {
  expect_comparable(pred, gt);
  std::map<std::uint32_t, SegmentInfo> pred_info, gt_info;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> intersections;
  for (std::size_t p = 0; p < pred.ids.size(); ++p) {
    const std::uint32_t pid = pred.ids[p], gid = gt.ids[p];
    if (gid != gt.void_id) {
      auto& g = gt_info[gid];
      g.id = gid;
      ++g.area;
    }
    if (pid != pred.void_id) {
      auto& q = pred_info[pid];
      q.id = pid;
      ++q.area;
      if (gid == gt.void_id) {
        ++q.void_overlap;
      } else {
        ++intersections[{pid, gid}];
      }
    }
  }
  MatchResult out;
  for (auto& [id, info] : pred_info) {
    info.class_label = class_of(id, pred, cfg);
    out.pred_segments.push_back(info);
  }
  for (auto& [id, info] : gt_info) {
    info.class_label = class_of(id, gt, cfg);
    out.gt_segments.push_back(info);
  }
  for (const auto& [key, inter] : intersections) {
    const SegmentInfo& q = pred_info.at(key.first);
    const SegmentInfo& g = gt_info.at(key.second);
    if (q.class_label != g.class_label) continue;
    const std::size_t uni = q.area - q.void_overlap + g.area - inter;
    const double iou = static_cast<double>(inter) / static_cast<double>(uni);
    if (iou > 0.5) out.matches[q.class_label].push_back({key.first, key.second, iou});
  }
  return out;
}

double segment_iou(const PanopticLabelMap& pred, std::uint32_t pred_id, const PanopticLabelMap& gt,
                   std::uint32_t gt_id) {
  expect_comparable(pred, gt);
  std::size_t inter = 0, uni = 0;
  for (std::size_t p = 0; p < pred.ids.size(); ++p) {
    const bool in_pred = pred.ids[p] == pred_id && gt.ids[p] != gt.void_id;
    const bool in_gt = gt.ids[p] == gt_id;
    inter += (in_pred && in_gt) ? 1 : 0;
    uni += (in_pred || in_gt) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

PQAccumulator::PQAccumulator(PostprocConfig cfg) : cfg_(std::move(cfg)) {}

void PQAccumulator::add(const MatchResult& m) {
  std::set<std::uint32_t> matched_pred, matched_gt;
  for (const auto& [label, list] : m.matches) {
    auto& row = classes_[label];
    for (const auto& match : list) {
      if (!matched_pred.insert(match.pred_id).second || !matched_gt.insert(match.gt_id).second) {
        throw AssignmentError("a segment takes part in two matches");
      }
      ++row.tp;
      row.iou_sum += match.iou;
    }
  }
  for (const auto& g : m.gt_segments) {
    if (!matched_gt.count(g.id)) ++classes_[g.class_label].fn;
  }
  for (const auto& q : m.pred_segments) {
    if (matched_pred.count(q.id)) continue;
    auto& row = classes_[q.class_label];
    // Mostly void predictions are neither hits nor false positives, but the
    // class still counts as present.
    if (2 * q.void_overlap > q.area) continue;
    ++row.fp;
  }
}

void PQAccumulator::merge(const PQAccumulator& other) {
  for (const auto& [label, row] : other.classes_) {
    auto& mine = classes_[label];
    mine.tp += row.tp;
    mine.fp += row.fp;
    mine.fn += row.fn;
    mine.iou_sum += row.iou_sum;
  }
}

PQResult PQAccumulator::result() const {
  PQResult out;
  for (const auto& [label, counts] : classes_) {
    ClassPQ row = counts;
    row.class_label = label;
    row.is_thing = cfg_.is_thing(label);
    const double denom =
        static_cast<double>(row.tp) + 0.5 * static_cast<double>(row.fp) + 0.5 * static_cast<double>(row.fn);
    if (denom == 0.0) continue;  // only void-dominated predictions
    if (row.tp > 0) {
      row.sq = row.iou_sum / static_cast<double>(row.tp);
      row.rq = static_cast<double>(row.tp) / denom;
      row.pq = row.sq * row.rq;
    }
    out.tp += row.tp;
    out.fp += row.fp;
    out.fn += row.fn;
    out.per_class.push_back(row);
  }
  std::vector<const ClassPQ*> all, things, stuff;
  for (const auto& row : out.per_class) {
    all.push_back(&row);
    (row.is_thing ? things : stuff).push_back(&row);
  }
  out.all = average(all);
  out.things = average(things);
  out.stuff = average(stuff);
  out.empty = all.empty();
  return out;
}

PQResult panoptic_quality(const MatchResult& matches, const PostprocConfig& cfg) {
  PQAccumulator acc(cfg);
  acc.add(matches);
  return acc.result();
}

PQResult evaluate_pq(const PanopticLabelMap& pred, const PanopticLabelMap& gt, const PostprocConfig& cfg) {
  return panoptic_quality(match_segments_iou(pred, gt, cfg), cfg);
}

json PQResult::to_json() const {
  json rows = json::array();
  for (const auto& r : per_class) {
    rows.push_back({{"class", r.class_label},
                    {"is_thing", r.is_thing},
                    {"pq", r.pq},
                    {"sq", r.sq},
                    {"rq", r.rq},
                    {"tp", r.tp},
                    {"fp", r.fp},
                    {"fn", r.fn}});
  }
  return {{"pq", all.pq},     {"sq", all.sq},       {"rq", all.rq},       {"pq_th", things.pq},
          {"pq_st", stuff.pq}, {"things", split_json(things)}, {"stuff", split_json(stuff)},
          {"tp", tp},         {"fp", fp},           {"fn", fn},           {"empty", empty},
          {"per_class", rows}};
}

}  // namespace rtknet
