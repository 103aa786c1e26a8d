#include "survmil/roi_mask.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "survmil/error.hpp"

namespace survmil {

std::size_t RoiMaskGrid::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1));
}

void ValidateHeatmap(const HeatmapGrid& h) {
  if (h.width < 0 || h.height < 0 ||
      static_cast<std::size_t>(h.width) * h.height != h.values.size()) {
    throw ValidationError("heatmap: width*height does not match value count");
  }
  for (float v : h.values) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw ValidationError("heatmap: value outside [0, 1]");
    }
  }
}

RoiMaskGrid Binarize(const HeatmapGrid& h, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ValidationError("threshold must lie in (0, 1)");
  }
  RoiMaskGrid out(h.width, h.height);
  for (std::size_t i = 0; i < h.values.size(); ++i) {
    out.bits[i] = static_cast<double>(h.values[i]) >= threshold ? 1 : 0;
  }
  return out;
}

RoiMaskGrid Denoise(const RoiMaskGrid& m, int min_component,
                    Connectivity connectivity) {
  if (min_component < 1) throw ValidationError("min_component must be >= 1");
  RoiMaskGrid out = m;
  std::vector<std::uint8_t> visited(m.bits.size(), 0);
  std::vector<std::size_t> stack;
  std::vector<std::size_t> component;
  const bool eight = connectivity == Connectivity::kEight;
  for (std::size_t start = 0; start < m.bits.size(); ++start) {
    if (!m.bits[start] || visited[start]) continue;
    component.clear();
    stack.assign(1, start);
    visited[start] = 1;
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      component.push_back(cur);
      const int cx = static_cast<int>(cur % m.width);
      const int cy = static_cast<int>(cur / m.width);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          if (!eight && dx != 0 && dy != 0) continue;
          const int nx = cx + dx;
          const int ny = cy + dy;
          if (nx < 0 || ny < 0 || nx >= m.width || ny >= m.height) continue;
          const std::size_t ni = static_cast<std::size_t>(ny) * m.width + nx;
          if (m.bits[ni] && !visited[ni]) {
            visited[ni] = 1;
            stack.push_back(ni);
          }
        }
      }
    }
    if (component.size() < static_cast<std::size_t>(min_component)) {
      for (std::size_t c : component) out.bits[c] = 0;
    }
  }
  return out;
}

RoiMaskGrid Dilate(const RoiMaskGrid& m, int radius) {
  if (radius < 0) throw ValidationError("dilation radius must be >= 0");
  if (radius == 0) return m;
  // Half-width of the disk at each row offset.
  std::vector<int> span(static_cast<std::size_t>(radius) + 1);
  for (int dy = 0; dy <= radius; ++dy) {
    int w = 0;
    while ((w + 1) * (w + 1) + dy * dy <= radius * radius) ++w;
    span[static_cast<std::size_t>(dy)] = w;
  }
  RoiMaskGrid out(m.width, m.height);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(x, y)) continue;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int ny = y + dy;
        if (ny < 0 || ny >= m.height) continue;
        const int w = span[static_cast<std::size_t>(std::abs(dy))];
        const int x0 = std::max(0, x - w);
        const int x1 = std::min(m.width - 1, x + w);
        auto row = out.bits.begin() + static_cast<std::ptrdiff_t>(ny) * m.width;
        std::fill(row + x0, row + x1 + 1, 1);
      }
    }
  }
  return out;
}

RoiMaskGrid BuildMask(const HeatmapGrid& h, const MaskParams& params) {
  return Dilate(Denoise(Binarize(h, params.threshold), params.min_component,
                        params.connectivity),
                params.dilation_radius);
}

std::vector<PatchCoord> PatchInclusion(const RoiMaskGrid& m,
                                       int patch_side_superpixels) {
  const int s = patch_side_superpixels;
  if (s < 1) throw ValidationError("patch side must be >= 1");
  const int need = (s * s + 1) / 2;
  std::vector<PatchCoord> out;
  for (int by = 0; by + s <= m.height; by += s) {
    for (int bx = 0; bx + s <= m.width; bx += s) {
      int set = 0;
      for (int y = by; y < by + s; ++y) {
        for (int x = bx; x < bx + s; ++x) set += m.at(x, y) ? 1 : 0;
      }
      if (set >= need) out.push_back({bx / s, by / s});
    }
  }
  return out;
}

namespace {

SegMetrics FromCounts(std::size_t tp, std::size_t fp, std::size_t fn) {
  if (tp + fn == 0) throw ValidationError("recall undefined: truth mask empty");
  if (tp + fp == 0) throw ValidationError("precision undefined: prediction empty");
  SegMetrics out;
  out.true_positive = tp;
  out.false_positive = fp;
  out.false_negative = fn;
  out.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  out.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  out.iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
  return out;
}

void Accumulate(const RoiMaskGrid& pred, const RoiMaskGrid& truth,
                std::size_t& tp, std::size_t& fp, std::size_t& fn) {
  if (pred.width != truth.width || pred.height != truth.height) {
    throw ValidationError("segmentation metrics: mask dimensions differ");
  }
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    const bool p = pred.bits[i] != 0;
    const bool t = truth.bits[i] != 0;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
}

}  // namespace

SegMetrics SegmentationMetrics(const RoiMaskGrid& pred, const RoiMaskGrid& truth) {
  std::size_t tp = 0, fp = 0, fn = 0;
  Accumulate(pred, truth, tp, fp, fn);
  return FromCounts(tp, fp, fn);
}

SegMetrics PooledSegmentationMetrics(std::span<const RoiMaskGrid> preds,
                                     std::span<const RoiMaskGrid> truths) {
  if (preds.size() != truths.size()) {
    throw ValidationError("segmentation metrics: slide count mismatch");
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) Accumulate(preds[i], truths[i], tp, fp, fn);
  return FromCounts(tp, fp, fn);
}

}  // namespace survmil
