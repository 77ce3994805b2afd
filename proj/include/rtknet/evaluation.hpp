#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include <json.hpp>

#include "rtknet/postprocess.hpp"

namespace rtknet {

struct SegmentInfo {
  std::uint32_t id = 0;
  std::size_t class_label = 0;
  std::size_t area = 0;          // all pixels carrying the id
  std::size_t void_overlap = 0;  // predicted pixels lying on ground-truth void
};

struct SegmentMatch {
  std::uint32_t pred_id = 0;
  std::uint32_t gt_id = 0;
  double iou = 0.0;
};

struct MatchResult {
  std::map<std::size_t, std::vector<SegmentMatch>> matches;  // by class
  std::vector<SegmentInfo> pred_segments;                     // ascending id
  std::vector<SegmentInfo> gt_segments;
};

// Pairs predicted and ground-truth segments of the same class whose IoU
// exceeds 0.5. Predicted pixels on ground-truth void do not count toward
// the union. Throws InputError on mismatched maps or unknown classes.
MatchResult match_segments_iou(const PanopticLabelMap& pred, const PanopticLabelMap& gt, const PostprocConfig& cfg);

// IoU of two ids under the same void convention, by pixel counting.
double segment_iou(const PanopticLabelMap& pred, std::uint32_t pred_id, const PanopticLabelMap& gt,
                   std::uint32_t gt_id);

struct ClassPQ {
  std::size_t class_label = 0;
  bool is_thing = false;
  double iou_sum = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double pq = 0.0;
  double sq = 0.0;
  double rq = 0.0;
};

struct SplitPQ {
  double pq = 0.0;
  double sq = 0.0;
  double rq = 0.0;
  std::size_t classes = 0;
};

struct PQResult {
  SplitPQ all;
  SplitPQ things;
  SplitPQ stuff;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::vector<ClassPQ> per_class;  // classes present in either map, ascending
  bool empty = true;               // no class present anywhere

  nlohmann::json to_json() const;
};

// Per-class counts that can be summed over images before computing PQ.
class PQAccumulator {
 public:
  explicit PQAccumulator(PostprocConfig cfg);

  void add(const MatchResult& matches);
  void merge(const PQAccumulator& other);
  PQResult result() const;

 private:
  PostprocConfig cfg_;
  std::map<std::size_t, ClassPQ> classes_;
};

// A predicted segment left unmatched is a false positive unless more than
// half of it lies on ground-truth void.
PQResult panoptic_quality(const MatchResult& matches, const PostprocConfig& cfg);

PQResult evaluate_pq(const PanopticLabelMap& pred, const PanopticLabelMap& gt, const PostprocConfig& cfg);

}  // namespace rtknet
