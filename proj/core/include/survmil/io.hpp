#pragma once

// On-disk formats: cohort JSON manifests, little-endian f32 / u8 grids and
// matrices with JSON sidecars, versioned model snapshots, and CSV tables.

#include <nlohmann/json.hpp>

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "survmil/cohort.hpp"
#include "survmil/explainer.hpp"
#include "survmil/mil.hpp"
#include "survmil/roi_mask.hpp"
#include "survmil/synth.hpp"

namespace survmil::io {

namespace fs = std::filesystem;
using nlohmann::json;

// --- cohort manifest -------------------------------------------------------
// [{case_id, time_months, event, covariates: {name: number}, split}, ...]

json CohortToJson(const std::vector<CohortEntry>& cohort);
std::vector<CohortEntry> CohortFromJson(const json& j);
void WriteCohort(const fs::path& path, const std::vector<CohortEntry>& cohort);
std::vector<CohortEntry> ReadCohort(const fs::path& path);

// --- raw little-endian arrays ---------------------------------------------

void WriteF32(const fs::path& path, const std::vector<float>& values);
std::vector<float> ReadF32(const fs::path& path);
void WriteU8(const fs::path& path, const std::vector<std::uint8_t>& values);
std::vector<std::uint8_t> ReadU8(const fs::path& path);

void WriteJson(const fs::path& path, const json& j);
json ReadJson(const fs::path& path);

// --- heatmaps and masks: <stem>.f32 / <stem>.u8 + <stem>.json -------------
// sidecar {width, height, superpixel_um, dtype}

void WriteHeatmap(const fs::path& stem, const HeatmapGrid& h);
HeatmapGrid ReadHeatmap(const fs::path& stem);
void WriteMask(const fs::path& stem, const RoiMaskGrid& m, double superpixel_um = 32.0);
RoiMaskGrid ReadMask(const fs::path& stem);

// --- patch features: <dir>/<slide_id>.f32 + <slide_id>.json ----------------
// sidecar {case_id, slide_id, rows, feature_dim, coords: [[x, y], ...]}
// plus <dir>/index.json {case_id: [slide_id, ...]} fixing slide order.

void WriteBags(const fs::path& dir, const std::vector<CaseBag>& bags);
// Bags for the given case ids, in that order.
std::vector<CaseBag> ReadBags(const fs::path& dir, const std::vector<std::string>& case_ids);
std::map<std::string, std::vector<std::string>> ReadSlideIndex(const fs::path& dir);

// --- f32 matrix + sidecar {rows, feature_dim, ...} --------------------------

void WriteMatrix(const fs::path& stem, const Eigen::MatrixXd& m, json sidecar = json::object());
Eigen::MatrixXd ReadMatrix(const fs::path& stem, json* sidecar = nullptr);

void WriteClusterModel(const fs::path& stem, const ClusterModel& model);
ClusterModel ReadClusterModel(const fs::path& stem);

// --- configs ---------------------------------------------------------------
// Missing keys keep the defaults of `base`.

json ToJson(const GeneratorConfig& c);
GeneratorConfig GeneratorConfigFromJson(const json& j, GeneratorConfig base = {});
json ToJson(const TrainConfig& c);
TrainConfig TrainConfigFromJson(const json& j, TrainConfig base = {});
json ToJson(const SearchSpace& s);
SearchSpace SearchSpaceFromJson(const json& j, SearchSpace base = {});
json ToJson(const MaskParams& p);
MaskParams MaskParamsFromJson(const json& j, MaskParams base = {});

json GroundTruthToJson(const GroundTruth& truth);
GroundTruth GroundTruthFromJson(const json& j);

// --- model snapshots -------------------------------------------------------
// "SMIL" magic, u32 version, u64 header length, JSON header
// {config, step, tune_metric, layers, has_optimizer_state, metric_history},
// then f64 parameters (and Adam m, v when present).

inline constexpr std::uint32_t kSnapshotVersion = 1;

struct Snapshot {
  TrainState state;
  TrainConfig config;
  double tune_metric = 0.0;
  bool has_optimizer_state = false;
};

void WriteSnapshot(const fs::path& path, const Snapshot& snapshot);
Snapshot ReadSnapshot(const fs::path& path);

// Ensemble JSON: {members: [{snapshot, tune_mean, tune_std, tune_cindex}]}
// with snapshot paths relative to the ensemble file.
void WriteEnsemble(const fs::path& path, const Ensemble& ensemble);
Ensemble ReadEnsemble(const fs::path& path);

// --- CSV -------------------------------------------------------------------

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header);

  CsvWriter& Add(const std::string& v);
  CsvWriter& Add(const char* v) { return Add(std::string(v)); }
  CsvWriter& Add(double v);
  CsvWriter& Add(std::int64_t v);
  CsvWriter& Add(int v) { return Add(static_cast<std::int64_t>(v)); }
  CsvWriter& Add(std::size_t v) { return Add(static_cast<std::int64_t>(v)); }
  CsvWriter& AddOptional(const std::optional<double>& v);
  void EndRow();

 private:
  std::ofstream out_;
  bool row_open_ = false;
};

// Rows of string cells; the first row is the header.
std::vector<std::vector<std::string>> ReadCsv(const fs::path& path);

// Shortest round-trip representation.
std::string FormatDouble(double v);

// --- hashing ---------------------------------------------------------------

// FNV-1a 64 of the file bytes, as 16 hex digits.
std::string HashFile(const fs::path& path);

}  // namespace survmil::io
