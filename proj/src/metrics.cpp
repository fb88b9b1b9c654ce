#include <algorithm>
#include <map>
#include <set>
#include <utility>

#include "lips/panoptic.hpp"

namespace lips {
namespace {

void require_same_size(const PanopticSegmentation& a, const PanopticSegmentation& b) {
  if (a.height != b.height || a.width != b.width) {
    throw InvalidInputError("segmentation sizes differ: " + std::to_string(a.height) + "x" +
                            std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                            std::to_string(b.width));
  }
  for (const auto* s : {&a, &b}) {
    if (auto err = check_invariants(*s)) throw InvalidInputError("invalid segmentation: " + *err);
  }
}

void require_known_categories(const PanopticSegmentation& seg, const CategoryTable& categories) {
  for (const auto& s : seg.segments) {
    if (!categories.find(s.category_id)) {
      throw InvalidInputError("segment " + std::to_string(s.id) + " has unknown category " +
                              std::to_string(s.category_id));
    }
  }
}

}  // namespace

PqResult compute_pq(const PanopticSegmentation& pred, const PanopticSegmentation& gt,
                    const CategoryTable& categories) {
  require_same_size(pred, gt);
  require_known_categories(pred, categories);
  require_known_categories(gt, categories);

  std::map<int, int64_t> pred_area, gt_area;
  std::map<std::pair<int, int>, int64_t> inter;  // (gt id, pred id), 0 = void
  for (size_t i = 0; i < gt.id_map.size(); ++i) {
    const int g = gt.id_map[i], p = pred.id_map[i];
    ++gt_area[g];
    ++pred_area[p];
    ++inter[{g, p}];
  }
  auto void_overlap = [&](int pred_id) {
    auto it = inter.find({0, pred_id});
    return it == inter.end() ? int64_t{0} : it->second;
  };

  std::map<int, ClassQuality> acc;
  for (const auto& g : gt.segments) acc[g.category_id];

  std::set<int> gt_matched, pred_matched;
  for (const auto& [key, count] : inter) {
    const auto [g, p] = key;
    if (g == 0 || p == 0) continue;
    const SegmentInfo* gs = gt.find(g);
    const SegmentInfo* ps = pred.find(p);
    if (gs->category_id != ps->category_id) continue;
    const int64_t uni = pred_area[p] + gt_area[g] - count - void_overlap(p);
    const double iou = static_cast<double>(count) / static_cast<double>(uni);
    // IoU > 0.5 makes matches unique, so no assignment search is needed.
    if (iou > 0.5) {
      ClassQuality& c = acc[gs->category_id];
      ++c.tp;
      c.iou_sum += iou;
      gt_matched.insert(g);
      pred_matched.insert(p);
    }
  }
  for (const auto& g : gt.segments) {
    if (!gt_matched.count(g.id) && gt_area[g.id] > 0) ++acc[g.category_id].fn;
  }
  for (const auto& p : pred.segments) {
    if (pred_matched.count(p.id)) continue;
    const int64_t area = pred_area[p.id];
    // Predictions lying mostly on unlabeled ground truth are not penalized.
    if (area == 0 || static_cast<double>(void_overlap(p.id)) / static_cast<double>(area) > 0.5) {
      continue;
    }
    acc[p.category_id].fp += 1;
  }

  PqResult result;
  for (auto& [cat, c] : acc) {
    const bool in_gt = std::any_of(gt.segments.begin(), gt.segments.end(),
                                   [&](const SegmentInfo& s) { return s.category_id == cat; });
    if (!in_gt) continue;
    const double denom = c.tp + 0.5 * c.fp + 0.5 * c.fn;
    if (denom > 0) {
      c.pq = c.iou_sum / denom;
      c.rq = c.tp / denom;
    }
    c.sq = c.tp > 0 ? c.iou_sum / c.tp : 0.0;
    result.per_class[cat] = c;
  }
  if (!result.per_class.empty()) {
    for (const auto& [cat, c] : result.per_class) {
      result.pq += c.pq;
      result.sq += c.sq;
      result.rq += c.rq;
    }
    const double n = static_cast<double>(result.per_class.size());
    result.pq /= n;
    result.sq /= n;
    result.rq /= n;
  }
  return result;
}

std::vector<int> semantic_map(const PanopticSegmentation& seg) {
  std::map<int, int> cat_of;
  for (const auto& s : seg.segments) cat_of[s.id] = s.category_id;
  std::vector<int> out(seg.id_map.size(), 0);
  for (size_t i = 0; i < out.size(); ++i) {
    if (seg.id_map[i] != 0) out[i] = cat_of.at(seg.id_map[i]);
  }
  return out;
}

double compute_miou(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size()) throw InvalidInputError("semantic grids differ in size");
  std::map<int, int64_t> inter, uni;
  for (size_t i = 0; i < gt.size(); ++i) {
    const int g = gt[i], p = pred[i];
    if (g == 0) continue;
    ++uni[g];
    if (p == g) {
      ++inter[g];
    } else if (p != 0) {
      ++uni[p];
    }
  }
  if (uni.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [c, u] : uni) sum += static_cast<double>(inter[c]) / static_cast<double>(u);
  return sum / static_cast<double>(uni.size());
}

std::vector<double> default_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

namespace {

double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
  int64_t in = 0, un = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    in += a[i] && b[i];
    un += a[i] || b[i];
  }
  return un == 0 ? 0.0 : static_cast<double>(in) / static_cast<double>(un);
}

double interpolated_ap(const std::vector<bool>& is_tp, int64_t num_gt) {
  const size_t n = is_tp.size();
  std::vector<double> recall(n), precision(n);
  int64_t tp = 0, fp = 0;
  for (size_t i = 0; i < n; ++i) {
    is_tp[i] ? ++tp : ++fp;
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  for (size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) sum += precision[static_cast<size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

}  // namespace

double compute_ap(const std::vector<InstanceMask>& preds, const std::vector<InstanceMask>& gts,
                  const std::vector<double>& iou_thresholds) {
  for (const auto& p : preds) {
    for (const auto& g : gts) {
      if (p.mask.size() != g.mask.size()) throw InvalidInputError("instance masks differ in size");
    }
  }
  std::set<int> gt_categories;
  for (const auto& g : gts) gt_categories.insert(g.category_id);
  if (gt_categories.empty() || iou_thresholds.empty()) return 0.0;

  double total = 0.0;
  for (int cat : gt_categories) {
    std::vector<size_t> gt_idx, pred_idx;
    for (size_t i = 0; i < gts.size(); ++i) {
      if (gts[i].category_id == cat) gt_idx.push_back(i);
    }
    for (size_t i = 0; i < preds.size(); ++i) {
      if (preds[i].category_id == cat) pred_idx.push_back(i);
    }
    std::stable_sort(pred_idx.begin(), pred_idx.end(),
                     [&](size_t a, size_t b) { return preds[a].score > preds[b].score; });
    std::vector<std::vector<double>> ious(pred_idx.size(), std::vector<double>(gt_idx.size()));
    for (size_t i = 0; i < pred_idx.size(); ++i) {
      for (size_t j = 0; j < gt_idx.size(); ++j) {
        ious[i][j] = mask_iou(preds[pred_idx[i]].mask, gts[gt_idx[j]].mask);
      }
    }
    for (double t : iou_thresholds) {
      std::vector<bool> used(gt_idx.size(), false), is_tp;
      for (size_t i = 0; i < pred_idx.size(); ++i) {
        int best = -1;
        double best_iou = -1.0;
        for (size_t j = 0; j < gt_idx.size(); ++j) {
          if (!used[j] && ious[i][j] >= t && ious[i][j] > best_iou) {
            best = static_cast<int>(j);
            best_iou = ious[i][j];
          }
        }
        if (best >= 0) used[static_cast<size_t>(best)] = true;
        is_tp.push_back(best >= 0);
      }
      total += is_tp.empty() ? 0.0 : interpolated_ap(is_tp, static_cast<int64_t>(gt_idx.size()));
    }
  }
  return total / static_cast<double>(gt_categories.size() * iou_thresholds.size());
}

std::vector<InstanceMask> thing_instances(const PanopticSegmentation& seg) {
  std::vector<InstanceMask> out;
  for (const auto& s : seg.segments) {
    if (!s.is_thing) continue;
    InstanceMask m;
    m.mask.resize(seg.id_map.size());
    for (size_t i = 0; i < seg.id_map.size(); ++i) m.mask[i] = seg.id_map[i] == s.id;
    m.category_id = s.category_id;
    out.push_back(std::move(m));
  }
  return out;
}

MetricsResult evaluate(const PanopticSegmentation& pred, const PanopticSegmentation& gt,
                       const CategoryTable& categories) {
  MetricsResult r;
  r.pq = compute_pq(pred, gt, categories);
  r.miou = compute_miou(semantic_map(pred), semantic_map(gt));
  r.ap = compute_ap(thing_instances(pred), thing_instances(gt));
  return r;
}

}  // namespace lips
