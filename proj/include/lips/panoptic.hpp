#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lips/query_decoder.hpp"

namespace lips {

struct Category {
  int id = 0;
  std::string name;
  bool is_thing = false;
};

/// Categories sorted by id. Class index k of the decoder maps to the k-th
/// entry.
class CategoryTable {
 public:
  CategoryTable() = default;
  explicit CategoryTable(std::vector<Category> categories);

  /// `n` categories with ids 1..n; odd ids are things.
  static CategoryTable synthetic(int n);

  /// CSV `id,name,is_thing`, optional header line.
  static CategoryTable read_csv(std::istream& in, const std::string& source = "categories");
  void write_csv(std::ostream& out) const;

  const std::vector<Category>& categories() const { return categories_; }
  int size() const { return static_cast<int>(categories_.size()); }
  const Category* find(int id) const;
  const Category& at_index(int k) const { return categories_[static_cast<size_t>(k)]; }

 private:
  std::vector<Category> categories_;
};

struct SegmentInfo {
  int id = 0;
  int category_id = 0;
  bool is_thing = false;
};

/// Row-major id grid (0 = void) plus one record per segment.
struct PanopticSegmentation {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<int32_t> id_map;
  std::vector<SegmentInfo> segments;

  const SegmentInfo* find(int id) const;
};

/// Returns a description of the first violated invariant, if any.
std::optional<std::string> check_invariants(const PanopticSegmentation& seg);

// LSEG text format: "H W", segment count, "id category is_thing" lines, then
// H rows of W ids. Parse errors carry "<source>:<line>:" prefixes.
PanopticSegmentation read_lseg(std::istream& in, const std::string& source = "lseg");
void write_lseg(std::ostream& out, const PanopticSegmentation& seg);

struct PanopticOptions {
  double object_score_threshold = 0.25;
  double overlap_keep_threshold = 0.8;
  float mask_threshold = 0.5f;
};

/// Greedy canvas fill from query predictions, highest score first.
PanopticSegmentation panoptic_inference(const DecoderOutput& output,
                                        const CategoryTable& categories, int64_t target_h,
                                        int64_t target_w, const PanopticOptions& options = {});

struct ClassQuality {
  double pq = 0.0;
  double sq = 0.0;
  double rq = 0.0;
  double iou_sum = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

struct PqResult {
  double pq = 0.0;
  double sq = 0.0;
  double rq = 0.0;
  std::map<int, ClassQuality> per_class;  // category id -> quality, GT classes only
};

/// Segments match iff same category and IoU > 0.5, with ground-truth void
/// pixels excluded from both sides.
PqResult compute_pq(const PanopticSegmentation& pred, const PanopticSegmentation& gt,
                    const CategoryTable& categories);

/// Category grid (0 = void) from a panoptic segmentation.
std::vector<int> semantic_map(const PanopticSegmentation& seg);

/// Mean IoU over classes present in either grid, ignoring ground-truth void.
double compute_miou(const std::vector<int>& pred, const std::vector<int>& gt);

struct InstanceMask {
  std::vector<uint8_t> mask;
  int category_id = 0;
  double score = 1.0;
};

std::vector<double> default_iou_thresholds();

/// Mask AP with 101-point interpolation, averaged over thresholds and over
/// categories that have at least one ground-truth instance.
double compute_ap(const std::vector<InstanceMask>& preds, const std::vector<InstanceMask>& gts,
                  const std::vector<double>& iou_thresholds = default_iou_thresholds());

/// Thing segments as instance masks with a uniform score.
std::vector<InstanceMask> thing_instances(const PanopticSegmentation& seg);

struct MetricsResult {
  PqResult pq;
  double miou = 0.0;
  double ap = 0.0;
};

MetricsResult evaluate(const PanopticSegmentation& pred, const PanopticSegmentation& gt,
                       const CategoryTable& categories);

}  // namespace lips
