#pragma once

// Heatmap -> binary ROI mask morphology on a superpixel grid, patch gating
// and segmentation metrics.

#include <cstdint>
#include <span>
#include <vector>

namespace survmil {

struct HeatmapGrid {
  int width = 0;
  int height = 0;
  std::vector<float> values;  // row-major, in [0, 1]
  double superpixel_um = 32.0;

  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct RoiMaskGrid {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  RoiMaskGrid() = default;
  RoiMaskGrid(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v = true) {
    bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
  }
  std::size_t count() const;

  bool operator==(const RoiMaskGrid&) const = default;
};

enum class Connectivity { kFour = 4, kEight = 8 };

struct MaskParams {
  double threshold = 0.5;
  int dilation_radius = 0;
  int min_component = 8;
  Connectivity connectivity = Connectivity::kEight;
};

// Throws ValidationError if dimensions and value count disagree or a value
// lies outside [0, 1].
void ValidateHeatmap(const HeatmapGrid& h);

// bit = value >= t, t in (0, 1).
RoiMaskGrid Binarize(const HeatmapGrid& h, double threshold);

// Clears connected components with fewer than min_component cells.
RoiMaskGrid Denoise(const RoiMaskGrid& m, int min_component,
                    Connectivity connectivity = Connectivity::kEight);

// Discrete Euclidean disk: a cell is set iff some input cell lies within
// center distance <= radius.
RoiMaskGrid Dilate(const RoiMaskGrid& m, int radius);

// binarize -> denoise -> dilate.
RoiMaskGrid BuildMask(const HeatmapGrid& h, const MaskParams& params);

struct PatchCoord {
  int x = 0;  // block column
  int y = 0;  // block row

  auto operator<=>(const PatchCoord&) const = default;
};

// Non-overlapping side x side blocks anchored at the origin; partial edge
// blocks are skipped. A block is kept when at least half its cells are set.
std::vector<PatchCoord> PatchInclusion(const RoiMaskGrid& m,
                                       int patch_side_superpixels = 16);

struct SegMetrics {
  double recall = 0.0;
  double precision = 0.0;
  double iou = 0.0;
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
};

SegMetrics SegmentationMetrics(const RoiMaskGrid& pred, const RoiMaskGrid& truth);

// Pooled counts over several slides.
SegMetrics PooledSegmentationMetrics(std::span<const RoiMaskGrid> preds,
                                     std::span<const RoiMaskGrid> truths);

}  // namespace survmil
