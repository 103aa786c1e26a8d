#include "survmil/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <sstream>

#include "survmil/error.hpp"

namespace survmil::io {
namespace {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

std::ifstream OpenIn(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  return in;
}

std::ofstream OpenOut(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  return out;
}

template <typename T>
std::vector<T> ReadRaw(const fs::path& path) {
  auto in = OpenIn(path);
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(T) != 0) throw ValidationError(path.string() + ": truncated array");
  in.seekg(0);
  std::vector<T> out(bytes / sizeof(T));
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
  return out;
}

template <typename T>
void WriteRaw(const fs::path& path, const T* data, std::size_t n) {
  auto out = OpenOut(path);
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(T)));
}

fs::path WithSuffix(const fs::path& stem, const char* suffix) {
  return fs::path(stem.string() + suffix);
}

template <typename T>
void Get(const json& j, const char* key, T& target) {
  if (j.contains(key)) target = j.at(key).get<T>();
}

const char* SamplingName(BagSampling s) {
  return s == BagSampling::kPerCase ? "per_case" : "per_slide";
}

BagSampling SamplingFromName(const std::string& s) {
  if (s == "per_case") return BagSampling::kPerCase;
  if (s == "per_slide") return BagSampling::kPerSlide;
  throw ValidationError("unknown bag sampling '" + s + "'");
}

}  // namespace

// ---------------------------------------------------------------------------

json CohortToJson(const std::vector<CohortEntry>& cohort) {
  json arr = json::array();
  for (const auto& e : cohort) {
    json cov = json::object();
    for (const auto& [k, v] : e.covariates) cov[k] = v;
    arr.push_back({{"case_id", e.record.case_id},
                   {"time_months", e.record.time_months},
                   {"event", e.record.event},
                   {"covariates", cov},
                   {"split", e.split}});
  }
  return arr;
}

std::vector<CohortEntry> CohortFromJson(const json& j) {
  if (!j.is_array()) throw ValidationError("cohort manifest must be a JSON array");
  std::vector<CohortEntry> out;
  try {
    for (const auto& item : j) {
      CohortEntry e;
      e.record.case_id = item.at("case_id").get<std::string>();
      e.record.time_months = item.at("time_months").get<int>();
      e.record.event = item.at("event").get<bool>();
      e.split = item.at("split").get<std::string>();
      if (item.contains("covariates")) {
        for (const auto& [k, v] : item.at("covariates").items()) e.covariates[k] = v.get<double>();
      }
      out.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("cohort manifest: ") + ex.what());
  }
  ValidateCohort(out);
  return out;
}

void WriteCohort(const fs::path& path, const std::vector<CohortEntry>& cohort) {
  WriteJson(path, CohortToJson(cohort));
}

std::vector<CohortEntry> ReadCohort(const fs::path& path) { return CohortFromJson(ReadJson(path)); }

// ---------------------------------------------------------------------------

void WriteF32(const fs::path& path, const std::vector<float>& values) {
  WriteRaw(path, values.data(), values.size());
}
std::vector<float> ReadF32(const fs::path& path) { return ReadRaw<float>(path); }
void WriteU8(const fs::path& path, const std::vector<std::uint8_t>& values) {
  WriteRaw(path, values.data(), values.size());
}
std::vector<std::uint8_t> ReadU8(const fs::path& path) { return ReadRaw<std::uint8_t>(path); }

void WriteJson(const fs::path& path, const json& j) {
  auto out = OpenOut(path);
  out << j.dump(2) << '\n';
}

json ReadJson(const fs::path& path) {
  auto in = OpenIn(path);
  try {
    return json::parse(in);
  } catch (const json::exception& ex) {
    throw ValidationError(path.string() + ": " + ex.what());
  }
}

// ---------------------------------------------------------------------------

void WriteHeatmap(const fs::path& stem, const HeatmapGrid& h) {
  WriteF32(WithSuffix(stem, ".f32"), h.values);
  WriteJson(WithSuffix(stem, ".json"), {{"width", h.width},
                                        {"height", h.height},
                                        {"superpixel_um", h.superpixel_um},
                                        {"dtype", "float32"}});
}

HeatmapGrid ReadHeatmap(const fs::path& stem) {
  const json side = ReadJson(WithSuffix(stem, ".json"));
  if (side.value("dtype", "") != "float32") throw ValidationError(stem.string() + ": expected float32 heatmap");
  HeatmapGrid h;
  h.width = side.at("width").get<int>();
  h.height = side.at("height").get<int>();
  h.superpixel_um = side.value("superpixel_um", 32.0);
  h.values = ReadF32(WithSuffix(stem, ".f32"));
  ValidateHeatmap(h);
  return h;
}

void WriteMask(const fs::path& stem, const RoiMaskGrid& m, double superpixel_um) {
  WriteU8(WithSuffix(stem, ".u8"), m.bits);
  WriteJson(WithSuffix(stem, ".json"), {{"width", m.width},
                                        {"height", m.height},
                                        {"superpixel_um", superpixel_um},
                                        {"dtype", "uint8"}});
}

RoiMaskGrid ReadMask(const fs::path& stem) {
  const json side = ReadJson(WithSuffix(stem, ".json"));
  if (side.value("dtype", "") != "uint8") throw ValidationError(stem.string() + ": expected uint8 mask");
  RoiMaskGrid m;
  m.width = side.at("width").get<int>();
  m.height = side.at("height").get<int>();
  m.bits = ReadU8(WithSuffix(stem, ".u8"));
  if (m.bits.size() != static_cast<std::size_t>(m.width) * m.height) {
    throw ValidationError(stem.string() + ": mask size does not match sidecar");
  }
  for (auto& b : m.bits) b = b != 0 ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------

void WriteBags(const fs::path& dir, const std::vector<CaseBag>& bags) {
  json index = json::object();
  for (const auto& bag : bags) {
    json slides = json::array();
    for (const auto& s : bag.slides) {
      std::vector<float> data(static_cast<std::size_t>(s.patches.size()));
      for (Eigen::Index r = 0; r < s.patches.rows(); ++r) {
        for (Eigen::Index c = 0; c < s.patches.cols(); ++c) {
          data[static_cast<std::size_t>(r * s.patches.cols() + c)] = static_cast<float>(s.patches(r, c));
        }
      }
      WriteF32(dir / (s.slide_id + ".f32"), data);
      json coords = json::array();
      for (const auto& c : s.coords) coords.push_back({c.x, c.y});
      WriteJson(dir / (s.slide_id + ".json"), {{"case_id", bag.case_id},
                                                {"slide_id", s.slide_id},
                                                {"rows", s.patches.rows()},
                                                {"feature_dim", bag.feature_dim},
                                                {"coords", coords}});
      slides.push_back(s.slide_id);
    }
    index[bag.case_id] = slides;
  }
  WriteJson(dir / "index.json", index);
}

std::map<std::string, std::vector<std::string>> ReadSlideIndex(const fs::path& dir) {
  const json index = ReadJson(dir / "index.json");
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& [case_id, slides] : index.items()) {
    out[case_id] = slides.get<std::vector<std::string>>();
  }
  return out;
}

std::vector<CaseBag> ReadBags(const fs::path& dir, const std::vector<std::string>& case_ids) {
  const auto index = ReadSlideIndex(dir);
  std::vector<CaseBag> out;
  out.reserve(case_ids.size());
  for (const auto& id : case_ids) {
    auto it = index.find(id);
    if (it == index.end()) throw ValidationError("no patch features for case " + id);
    CaseBag bag;
    bag.case_id = id;
    for (const auto& slide_id : it->second) {
      const json side = ReadJson(dir / (slide_id + ".json"));
      const auto rows = side.at("rows").get<Eigen::Index>();
      const auto dim = side.at("feature_dim").get<int>();
      if (bag.feature_dim != 0 && bag.feature_dim != dim) {
        throw ValidationError("case " + id + ": inconsistent feature_dim");
      }
      bag.feature_dim = dim;
      const auto data = ReadF32(dir / (slide_id + ".f32"));
      if (data.size() != static_cast<std::size_t>(rows * dim)) {
        throw ValidationError(slide_id + ": feature file does not match sidecar");
      }
      Slide s;
      s.slide_id = slide_id;
      s.patches.resize(rows, dim);
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (int c = 0; c < dim; ++c) s.patches(r, c) = data[static_cast<std::size_t>(r * dim + c)];
      }
      for (const auto& c : side.at("coords")) s.coords.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
      if (s.coords.size() != static_cast<std::size_t>(rows)) {
        throw ValidationError(slide_id + ": coords count does not match rows");
      }
      bag.slides.push_back(std::move(s));
    }
    out.push_back(std::move(bag));
  }
  return out;
}

// ---------------------------------------------------------------------------

void WriteMatrix(const fs::path& stem, const Eigen::MatrixXd& m, json sidecar) {
  std::vector<float> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      data[static_cast<std::size_t>(r * m.cols() + c)] = static_cast<float>(m(r, c));
    }
  }
  WriteF32(WithSuffix(stem, ".f32"), data);
  sidecar["rows"] = m.rows();
  sidecar["feature_dim"] = m.cols();
  WriteJson(WithSuffix(stem, ".json"), sidecar);
}

Eigen::MatrixXd ReadMatrix(const fs::path& stem, json* sidecar) {
  const json side = ReadJson(WithSuffix(stem, ".json"));
  const auto rows = side.at("rows").get<Eigen::Index>();
  const auto cols = side.at("feature_dim").get<Eigen::Index>();
  const auto data = ReadF32(WithSuffix(stem, ".f32"));
  if (data.size() != static_cast<std::size_t>(rows * cols)) {
    throw ValidationError(stem.string() + ": matrix file does not match sidecar");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  }
  if (sidecar != nullptr) *sidecar = side;
  return m;
}

void WriteClusterModel(const fs::path& stem, const ClusterModel& model) {
  WriteMatrix(stem, model.centroids,
              {{"kind", "cluster_centroids"},
               {"k", model.k()},
               {"fit_sample_size", model.fit_sample_size},
               {"iterations", model.iterations}});
}

ClusterModel ReadClusterModel(const fs::path& stem) {
  json side;
  ClusterModel model;
  model.centroids = ReadMatrix(stem, &side);
  model.fit_sample_size = side.value("fit_sample_size", std::size_t{0});
  model.iterations = side.value("iterations", 0);
  return model;
}

// ---------------------------------------------------------------------------

json ToJson(const GeneratorConfig& c) {
  return {{"n_cases", c.n_cases},
          {"slides_min", c.slides_min},
          {"slides_max", c.slides_max},
          {"patches_min", c.patches_min},
          {"patches_max", c.patches_max},
          {"feature_dim", c.feature_dim},
          {"n_prototypes", c.n_prototypes},
          {"prototype_risk_betas", c.prototype_risk_betas},
          {"prototype_spread", c.prototype_spread},
          {"centroid_scale", c.centroid_scale},
          {"mixture_concentration", c.mixture_concentration},
          {"zero_inflation", c.zero_inflation},
          {"baseline_hazard", c.baseline_hazard},
          {"admin_censor_months", c.admin_censor_months},
          {"censor_rate", c.censor_rate},
          {"covariate_betas",
           {{"age_per_decade", c.covariate_betas.age_per_decade},
            {"sex", c.covariate_betas.sex},
            {"stage", c.covariate_betas.stage}}},
          {"background_fraction", c.background_fraction},
          {"patch_side", c.patch_side},
          {"speckles_per_slide", c.speckles_per_slide},
          {"heatmaps", c.heatmaps},
          {"splits",
           {{"train", c.splits.train},
            {"tune", c.splits.tune},
            {"val1", c.splits.val1},
            {"val2", c.splits.val2}}},
          {"seed", c.seed}};
}

GeneratorConfig GeneratorConfigFromJson(const json& j, GeneratorConfig c) {
  try {
    Get(j, "n_cases", c.n_cases);
    Get(j, "slides_min", c.slides_min);
    Get(j, "slides_max", c.slides_max);
    Get(j, "patches_min", c.patches_min);
    Get(j, "patches_max", c.patches_max);
    Get(j, "feature_dim", c.feature_dim);
    Get(j, "n_prototypes", c.n_prototypes);
    Get(j, "prototype_risk_betas", c.prototype_risk_betas);
    Get(j, "prototype_spread", c.prototype_spread);
    Get(j, "centroid_scale", c.centroid_scale);
    Get(j, "mixture_concentration", c.mixture_concentration);
    Get(j, "zero_inflation", c.zero_inflation);
    Get(j, "baseline_hazard", c.baseline_hazard);
    Get(j, "admin_censor_months", c.admin_censor_months);
    Get(j, "censor_rate", c.censor_rate);
    if (j.contains("covariate_betas")) {
      const auto& b = j.at("covariate_betas");
      Get(b, "age_per_decade", c.covariate_betas.age_per_decade);
      Get(b, "sex", c.covariate_betas.sex);
      Get(b, "stage", c.covariate_betas.stage);
    }
    Get(j, "background_fraction", c.background_fraction);
    Get(j, "patch_side", c.patch_side);
    Get(j, "speckles_per_slide", c.speckles_per_slide);
    Get(j, "heatmaps", c.heatmaps);
    if (j.contains("splits")) {
      const auto& s = j.at("splits");
      Get(s, "train", c.splits.train);
      Get(s, "tune", c.splits.tune);
      Get(s, "val1", c.splits.val1);
      Get(s, "val2", c.splits.val2);
    }
    Get(j, "seed", c.seed);
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("generator config: ") + ex.what());
  }
  return c;
}

json ToJson(const TrainConfig& c) {
  return {{"bag_size", c.bag_size},
          {"batch_size", c.batch_size},
          {"learning_rate", c.schedule.initial},
          {"decay_steps", c.schedule.decay_steps},
          {"decay_rate", c.schedule.decay_rate},
          {"l2_weight", c.l2_weight},
          {"adam_beta1", c.adam.beta1},
          {"adam_beta2", c.adam.beta2},
          {"adam_epsilon", c.adam.epsilon},
          {"layers", c.encoder.layers},
          {"base_width", c.encoder.base_width},
          {"growth", c.encoder.growth},
          {"max_width", c.encoder.max_width},
          {"total_steps", c.total_steps},
          {"eval_every", c.eval_every},
          {"eval_patches_per_case", c.eval_patches_per_case},
          {"rolling_window", c.rolling_window},
          {"sampling", SamplingName(c.sampling)},
          {"loss", c.loss},
          {"seed", c.seed},
          {"eval_seed", c.eval_seed}};
}

TrainConfig TrainConfigFromJson(const json& j, TrainConfig c) {
  try {
    Get(j, "bag_size", c.bag_size);
    Get(j, "batch_size", c.batch_size);
    Get(j, "learning_rate", c.schedule.initial);
    Get(j, "decay_steps", c.schedule.decay_steps);
    Get(j, "decay_rate", c.schedule.decay_rate);
    Get(j, "l2_weight", c.l2_weight);
    Get(j, "adam_beta1", c.adam.beta1);
    Get(j, "adam_beta2", c.adam.beta2);
    Get(j, "adam_epsilon", c.adam.epsilon);
    Get(j, "layers", c.encoder.layers);
    Get(j, "base_width", c.encoder.base_width);
    Get(j, "growth", c.encoder.growth);
    Get(j, "max_width", c.encoder.max_width);
    Get(j, "total_steps", c.total_steps);
    Get(j, "eval_every", c.eval_every);
    Get(j, "eval_patches_per_case", c.eval_patches_per_case);
    Get(j, "rolling_window", c.rolling_window);
    if (j.contains("sampling")) c.sampling = SamplingFromName(j.at("sampling").get<std::string>());
    Get(j, "loss", c.loss);
    Get(j, "seed", c.seed);
    Get(j, "eval_seed", c.eval_seed);
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("train config: ") + ex.what());
  }
  return c;
}

json ToJson(const SearchSpace& s) {
  return {{"layers", s.layers},           {"base_width", s.base_width},
          {"growth", s.growth},           {"max_width", s.max_width},
          {"l2_weight", s.l2_weight},     {"learning_rate", s.learning_rate},
          {"decay_steps", s.decay_steps}, {"decay_rate", s.decay_rate}};
}

SearchSpace SearchSpaceFromJson(const json& j, SearchSpace s) {
  try {
    Get(j, "layers", s.layers);
    Get(j, "base_width", s.base_width);
    Get(j, "growth", s.growth);
    Get(j, "max_width", s.max_width);
    Get(j, "l2_weight", s.l2_weight);
    Get(j, "learning_rate", s.learning_rate);
    Get(j, "decay_steps", s.decay_steps);
    Get(j, "decay_rate", s.decay_rate);
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("search space: ") + ex.what());
  }
  return s;
}

json ToJson(const MaskParams& p) {
  return {{"threshold", p.threshold},
          {"dilation_radius", p.dilation_radius},
          {"min_component", p.min_component},
          {"connectivity", static_cast<int>(p.connectivity)}};
}

MaskParams MaskParamsFromJson(const json& j, MaskParams p) {
  try {
    Get(j, "threshold", p.threshold);
    Get(j, "dilation_radius", p.dilation_radius);
    Get(j, "min_component", p.min_component);
    if (j.contains("connectivity")) {
      const int c = j.at("connectivity").get<int>();
      if (c != 4 && c != 8) throw ValidationError("connectivity must be 4 or 8");
      p.connectivity = c == 4 ? Connectivity::kFour : Connectivity::kEight;
    }
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("mask params: ") + ex.what());
  }
  return p;
}

json GroundTruthToJson(const GroundTruth& t) {
  json centroids = json::array();
  for (Eigen::Index r = 0; r < t.prototype_centroids.rows(); ++r) {
    std::vector<double> row;
    for (Eigen::Index c = 0; c < t.prototype_centroids.cols(); ++c) row.push_back(t.prototype_centroids(r, c));
    centroids.push_back(row);
  }
  std::vector<double> background(t.background_centroid.data(),
                                 t.background_centroid.data() + t.background_centroid.size());
  return {{"eta", t.eta},
          {"betas", t.betas},
          {"fraction_mean", t.fraction_mean},
          {"fraction_sd", t.fraction_sd},
          {"covariate_term", t.covariate_term},
          {"patch_prototype", t.patch_prototype},
          {"prototype_centroids", centroids},
          {"background_centroid", background},
          {"censor_hazard", t.censor_hazard}};
}

GroundTruth GroundTruthFromJson(const json& j) {
  GroundTruth t;
  try {
    t.eta = j.at("eta").get<std::vector<double>>();
    t.betas = j.at("betas").get<std::vector<double>>();
    t.fraction_mean = j.at("fraction_mean").get<std::vector<double>>();
    t.fraction_sd = j.at("fraction_sd").get<std::vector<double>>();
    t.covariate_term = j.at("covariate_term").get<std::vector<double>>();
    t.patch_prototype = j.at("patch_prototype").get<std::vector<std::vector<std::vector<int>>>>();
    const auto rows = j.at("prototype_centroids").get<std::vector<std::vector<double>>>();
    if (!rows.empty()) {
      t.prototype_centroids.resize(static_cast<Eigen::Index>(rows.size()),
                                   static_cast<Eigen::Index>(rows.front().size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
          t.prototype_centroids(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
      }
    }
    const auto bg = j.at("background_centroid").get<std::vector<double>>();
    t.background_centroid = Eigen::Map<const Eigen::VectorXd>(bg.data(), static_cast<Eigen::Index>(bg.size()));
    t.censor_hazard = j.at("censor_hazard").get<double>();
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("ground truth: ") + ex.what());
  }
  return t;
}

// ---------------------------------------------------------------------------

void WriteSnapshot(const fs::path& path, const Snapshot& snap) {
  const MilModel& model = snap.state.model;
  json layers = json::array();
  for (const auto& l : model.encoder()) layers.push_back({l.weights.cols(), l.weights.rows()});
  const bool with_opt = snap.has_optimizer_state && snap.state.adam.m.size() > 0;
  const json header = {{"config", ToJson(snap.config)},
                       {"step", snap.state.step},
                       {"tune_metric", snap.tune_metric},
                       {"layers", layers},
                       {"has_optimizer_state", with_opt},
                       {"adam_step", snap.state.adam.step},
                       {"metric_history", snap.state.metric_history}};
  const std::string text = header.dump();
  auto out = OpenOut(path);
  out.write("SMIL", 4);
  const std::uint32_t version = kSnapshotVersion;
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  auto write_vec = [&](const Eigen::VectorXd& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  };
  write_vec(model.Flatten());
  if (with_opt) {
    write_vec(snap.state.adam.m);
    write_vec(snap.state.adam.v);
  }
}

Snapshot ReadSnapshot(const fs::path& path) {
  auto in = OpenIn(path);
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, "SMIL", 4) != 0) throw ValidationError(path.string() + ": not a model snapshot");
  if (version != kSnapshotVersion) {
    throw ValidationError(path.string() + ": unsupported snapshot version " + std::to_string(version));
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const json header = json::parse(text);

  Snapshot snap;
  snap.config = TrainConfigFromJson(header.at("config"));
  snap.state.step = header.at("step").get<std::int64_t>();
  snap.tune_metric = header.at("tune_metric").get<double>();
  snap.has_optimizer_state = header.at("has_optimizer_state").get<bool>();
  snap.state.metric_history = header.value("metric_history", std::vector<double>{});

  std::vector<DenseLayer> layers;
  int embed = 0;
  for (const auto& l : header.at("layers")) {
    DenseLayer layer;
    layer.weights.resize(l.at(1).get<int>(), l.at(0).get<int>());
    layer.bias.resize(l.at(1).get<int>());
    embed = l.at(1).get<int>();
    layers.push_back(std::move(layer));
  }
  MilModel model(std::move(layers), Eigen::VectorXd::Zero(embed), 0.0);
  auto read_vec = [&](Eigen::Index n) {
    Eigen::VectorXd v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw ValidationError(path.string() + ": truncated snapshot");
    return v;
  };
  const auto n = static_cast<Eigen::Index>(model.ParameterCount());
  model.Unflatten(read_vec(n));
  snap.state.model = std::move(model);
  if (snap.has_optimizer_state) {
    snap.state.adam.m = read_vec(n);
    snap.state.adam.v = read_vec(n);
    snap.state.adam.step = header.at("adam_step").get<std::int64_t>();
  }
  return snap;
}

void WriteEnsemble(const fs::path& path, const Ensemble& ensemble) {
  json members = json::array();
  for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
    const auto& m = ensemble.members[i];
    const std::string file = path.stem().string() + "_member" + std::to_string(i) + ".smil";
    Snapshot snap;
    snap.state.model = m.model;
    snap.tune_metric = m.tune_cindex;
    WriteSnapshot(path.parent_path() / file, snap);
    members.push_back({{"snapshot", file},
                       {"tune_mean", m.tune_mean},
                       {"tune_std", m.tune_std},
                       {"tune_cindex", m.tune_cindex}});
  }
  WriteJson(path, {{"members", members}});
}

Ensemble ReadEnsemble(const fs::path& path) {
  const json j = ReadJson(path);
  Ensemble e;
  for (const auto& m : j.at("members")) {
    EnsembleMember member;
    member.model = ReadSnapshot(path.parent_path() / m.at("snapshot").get<std::string>()).state.model;
    member.tune_mean = m.at("tune_mean").get<double>();
    member.tune_std = m.at("tune_std").get<double>();
    member.tune_cindex = m.at("tune_cindex").get<double>();
    e.members.push_back(std::move(member));
  }
  if (e.members.empty()) throw ValidationError(path.string() + ": ensemble has no members");
  return e;
}

// ---------------------------------------------------------------------------

std::string FormatDouble(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const fs::path& path, const std::vector<std::string>& header)
    : out_(OpenOut(path)) {
  for (const auto& h : header) Add(h);
  EndRow();
}

CsvWriter& CsvWriter::Add(const std::string& v) {
  if (row_open_) out_ << ',';
  row_open_ = true;
  if (v.find_first_of(",\"\n") != std::string::npos) {
    out_ << '"';
    for (char c : v) {
      if (c == '"') out_ << '"';
      out_ << c;
    }
    out_ << '"';
  } else {
    out_ << v;
  }
  return *this;
}

CsvWriter& CsvWriter::Add(double v) { return Add(FormatDouble(v)); }
CsvWriter& CsvWriter::Add(std::int64_t v) { return Add(std::to_string(v)); }
CsvWriter& CsvWriter::AddOptional(const std::optional<double>& v) {
  return v ? Add(*v) : Add(std::string());
}

void CsvWriter::EndRow() {
  out_ << '\n';
  row_open_ = false;
}

std::vector<std::vector<std::string>> ReadCsv(const fs::path& path) {
  auto in = OpenIn(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cell += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        cells.push_back(std::move(cell));
        cell.clear();
      } else {
        cell += c;
      }
    }
    cells.push_back(std::move(cell));
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string HashFile(const fs::path& path) {
  auto in = OpenIn(path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace survmil::io
