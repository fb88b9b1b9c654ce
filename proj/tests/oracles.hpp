#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. None of these call into the library's kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "lips/panoptic.hpp"
#include "lips/pixel_decoder.hpp"
#include "lips/tensor.hpp"

namespace oracle {

using lips::Tensor;

inline Tensor random_tensor(std::mt19937_64& rng, lips::Shape shape, float lo = -1.0f,
                            float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = u(rng);
  return t;
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int64_t cout = w.dim(0), k = w.dim(2);
  const int64_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor out({cout, oh, ow});
  for (int64_t o = 0; o < cout; ++o) {
    for (int64_t y = 0; y < oh; ++y) {
      for (int64_t xx = 0; xx < ow; ++xx) {
        double acc = b.empty() ? 0.0 : b[o];
        for (int64_t c = 0; c < cin; ++c) {
          for (int64_t ky = 0; ky < k; ++ky) {
            for (int64_t kx = 0; kx < k; ++kx) {
              const int64_t iy = y * stride - pad + ky, ix = xx * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += static_cast<double>(x.at(c, iy, ix)) * w[((o * cin + c) * k + ky) * k + kx];
            }
          }
        }
        out.at(o, y, xx) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

inline std::vector<double> matvec(const Tensor& w, const Tensor& b, const float* x) {
  std::vector<double> out(static_cast<size_t>(w.dim(0)));
  for (int64_t o = 0; o < w.dim(0); ++o) {
    double acc = b.empty() ? 0.0 : b[o];
    for (int64_t i = 0; i < w.dim(1); ++i) acc += static_cast<double>(w.at(o, i)) * x[i];
    out[static_cast<size_t>(o)] = acc;
  }
  return out;
}

/// Bilinear read of channel `c` of a C x H x W map at normalized (x, y),
/// pixel centers at (i + 0.5) / W, zero outside the grid.
inline double bilinear(const Tensor& f, int64_t c, double x, double y) {
  const int64_t h = f.dim(1), w = f.dim(2);
  const double px = x * static_cast<double>(w) - 0.5, py = y * static_cast<double>(h) - 0.5;
  const double fx = std::floor(px), fy = std::floor(py);
  double acc = 0.0;
  for (int dy = 0; dy <= 1; ++dy) {
    for (int dx = 0; dx <= 1; ++dx) {
      const int64_t ix = static_cast<int64_t>(fx) + dx, iy = static_cast<int64_t>(fy) + dy;
      const double wx = dx ? px - fx : 1.0 - (px - fx);
      const double wy = dy ? py - fy : 1.0 - (py - fy);
      if (ix < 0 || ix >= w || iy < 0 || iy >= h) continue;
      acc += wx * wy * f.at(c, iy, ix);
    }
  }
  return acc;
}

/// Query x head x level x point loop over explicit per-level maps.
inline Tensor msdeform(const lips::TokenSequence& queries, const lips::TokenSequence& values,
                       const lips::DeformAttnWeights& w) {
  const int64_t n = queries.tokens.dim(0), d = values.tokens.dim(1);
  const int heads = w.heads, nl = w.levels, np = w.points;
  const int64_t dh = d / heads;

  // Projected value maps, one D x h x w tensor per level.
  std::vector<Tensor> maps;
  for (const auto& lv : values.levels) {
    Tensor m({d, lv.h, lv.w});
    for (int64_t y = 0; y < lv.h; ++y) {
      for (int64_t x = 0; x < lv.w; ++x) {
        const auto v = matvec(w.value.weight, w.value.bias,
                              &values.tokens.at(lv.start + y * lv.w + x, 0));
        for (int64_t c = 0; c < d; ++c) m.at(c, y, x) = static_cast<float>(v[static_cast<size_t>(c)]);
      }
    }
    maps.push_back(std::move(m));
  }

  Tensor out({n, d});
  for (const auto& qlv : queries.levels) {
    for (int64_t qy = 0; qy < qlv.h; ++qy) {
      for (int64_t qx = 0; qx < qlv.w; ++qx) {
        const int64_t q = qlv.start + qy * qlv.w + qx;
        const double rx = (qx + 0.5) / static_cast<double>(qlv.w);
        const double ry = (qy + 0.5) / static_cast<double>(qlv.h);
        const auto off = matvec(w.offsets.weight, w.offsets.bias, &queries.tokens.at(q, 0));
        const auto logit = matvec(w.logits.weight, w.logits.bias, &queries.tokens.at(q, 0));
        std::vector<double> agg(static_cast<size_t>(d), 0.0);
        for (int h = 0; h < heads; ++h) {
          double mx = -1e300, z = 0.0;
          for (int s = 0; s < nl * np; ++s) mx = std::max(mx, logit[static_cast<size_t>(h * nl * np + s)]);
          for (int s = 0; s < nl * np; ++s) z += std::exp(logit[static_cast<size_t>(h * nl * np + s)] - mx);
          for (int l = 0; l < nl; ++l) {
            const auto& lv = values.levels[static_cast<size_t>(l)];
            for (int p = 0; p < np; ++p) {
              const int s = (h * nl + l) * np + p;
              const double a = std::exp(logit[static_cast<size_t>(s)] - mx) / z;
              const double sx = rx + off[static_cast<size_t>(2 * s)] / static_cast<double>(lv.w);
              const double sy = ry + off[static_cast<size_t>(2 * s + 1)] / static_cast<double>(lv.h);
              for (int64_t c = 0; c < dh; ++c) {
                agg[static_cast<size_t>(h * dh + c)] +=
                    a * bilinear(maps[static_cast<size_t>(l)], h * dh + c, sx, sy);
              }
            }
          }
        }
        std::vector<float> aggf(agg.begin(), agg.end());
        const auto o = matvec(w.output.weight, w.output.bias, aggf.data());
        for (int64_t c = 0; c < d; ++c) out.at(q, c) = static_cast<float>(o[static_cast<size_t>(c)]);
      }
    }
  }
  return out;
}

/// PQ with exhaustive per-class matching: every partial one-to-one
/// assignment of same-category segments is enumerated and the one with the
/// most IoU > 0.5 pairs (ties: largest IoU sum) is kept.
inline lips::PqResult exhaustive_pq(const lips::PanopticSegmentation& pred,
                                    const lips::PanopticSegmentation& gt) {
  std::map<int, int64_t> parea, garea, pvoid;
  std::map<std::pair<int, int>, int64_t> inter;
  for (size_t i = 0; i < gt.id_map.size(); ++i) {
    const int g = gt.id_map[i], p = pred.id_map[i];
    ++garea[g];
    ++parea[p];
    if (g == 0) ++pvoid[p];
    if (g && p) ++inter[{g, p}];
  }
  auto iou = [&](int g, int p) {
    const auto it = inter.find({g, p});
    if (it == inter.end()) return 0.0;
    const int64_t uni = parea[p] + garea[g] - it->second - pvoid[p];
    return static_cast<double>(it->second) / static_cast<double>(uni);
  };
  std::set<int> cats;
  for (const auto& s : gt.segments) cats.insert(s.category_id);

  lips::PqResult r;
  for (int cat : cats) {
    std::vector<int> gs, ps;
    for (const auto& s : gt.segments) {
      if (s.category_id == cat && garea[s.id] > 0) gs.push_back(s.id);
    }
    for (const auto& s : pred.segments) {
      if (s.category_id == cat && parea[s.id] > 0) ps.push_back(s.id);
    }
    int best_tp = 0;
    double best_sum = 0.0;
    std::vector<int> best_assign(ps.size(), -1), assign(ps.size(), -1);
    std::vector<bool> used(gs.size(), false);
    std::function<void(size_t, int, double)> rec = [&](size_t i, int tp, double sum) {
      if (i == ps.size()) {
        if (tp > best_tp || (tp == best_tp && sum > best_sum)) {
          best_tp = tp;
          best_sum = sum;
          best_assign = assign;
        }
        return;
      }
      assign[i] = -1;
      rec(i + 1, tp, sum);
      for (size_t j = 0; j < gs.size(); ++j) {
        if (used[j]) continue;
        const double v = iou(gs[j], ps[i]);
        if (v <= 0.5) continue;
        used[j] = true;
        assign[i] = static_cast<int>(j);
        rec(i + 1, tp + 1, sum + v);
        used[j] = false;
      }
      assign[i] = -1;
    };
    rec(0, 0, 0.0);

    lips::ClassQuality c;
    c.tp = best_tp;
    c.iou_sum = best_sum;
    c.fn = static_cast<int>(gs.size()) - best_tp;
    for (size_t i = 0; i < ps.size(); ++i) {
      if (best_assign[i] >= 0) continue;
      if (static_cast<double>(pvoid[ps[i]]) / static_cast<double>(parea[ps[i]]) > 0.5) continue;
      ++c.fp;
    }
    const double denom = c.tp + 0.5 * c.fp + 0.5 * c.fn;
    if (denom > 0) {
      c.pq = c.iou_sum / denom;
      c.rq = c.tp / denom;
    }
    c.sq = c.tp ? c.iou_sum / c.tp : 0.0;
    r.per_class[cat] = c;
    r.pq += c.pq;
    r.sq += c.sq;
    r.rq += c.rq;
  }
  if (!r.per_class.empty()) {
    const double n = static_cast<double>(r.per_class.size());
    r.pq /= n;
    r.sq /= n;
    r.rq /= n;
  }
  return r;
}

/// Random h x w segmentation with up to `max_segments` rectangular segments
/// drawn over a void background.
inline lips::PanopticSegmentation random_segmentation(std::mt19937_64& rng, int64_t h, int64_t w,
                                                      int max_segments, int num_categories) {
  lips::PanopticSegmentation s;
  s.height = h;
  s.width = w;
  s.id_map.assign(static_cast<size_t>(h * w), 0);
  std::uniform_int_distribution<int> nseg(1, max_segments), cat(1, num_categories);
  std::uniform_int_distribution<int64_t> ry(0, h - 1), rx(0, w - 1);
  const int n = nseg(rng);
  for (int id = 1; id <= n; ++id) {
    int64_t y0 = ry(rng), y1 = ry(rng), x0 = rx(rng), x1 = rx(rng);
    if (y0 > y1) std::swap(y0, y1);
    if (x0 > x1) std::swap(x0, x1);
    for (int64_t y = y0; y <= y1; ++y) {
      for (int64_t x = x0; x <= x1; ++x) s.id_map[static_cast<size_t>(y * w + x)] = id;
    }
    const int c = cat(rng);
    s.segments.push_back({id, c, c % 2 == 1});
  }
  return s;
}

/// Copy of `base` with a fraction of pixels reassigned at random.
inline lips::PanopticSegmentation perturb(std::mt19937_64& rng, const lips::PanopticSegmentation& base,
                                          double flip) {
  lips::PanopticSegmentation s = base;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(base.segments.size()));
  for (auto& v : s.id_map) {
    if (u(rng) < flip) v = pick(rng);  // 0 = void
  }
  return s;
}

}  // namespace oracle
