#include "survmil/cohort.hpp"

#include <algorithm>

#include "survmil/error.hpp"

namespace survmil {

std::vector<std::size_t> SplitIndices(std::span<const CohortEntry> cohort,
                                      const std::string& split) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (cohort[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<SurvivalRecord> RecordsOf(std::span<const CohortEntry> cohort,
                                      std::span<const std::size_t> indices) {
  std::vector<SurvivalRecord> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(cohort[i].record);
  return out;
}

std::vector<RawCovariates> CovariatesOf(std::span<const CohortEntry> cohort,
                                        std::span<const std::size_t> indices) {
  std::vector<RawCovariates> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(cohort[i].covariates);
  return out;
}

void ValidateCohort(std::span<const CohortEntry> cohort) {
  std::vector<SurvivalRecord> records;
  records.reserve(cohort.size());
  for (const auto& e : cohort) {
    if (std::find(std::begin(kSplits), std::end(kSplits), e.split) == std::end(kSplits)) {
      throw ValidationError("case " + e.record.case_id + ": unknown split '" + e.split + "'");
    }
    records.push_back(e.record);
  }
  ValidateRecords(records);
}

}  // namespace survmil
