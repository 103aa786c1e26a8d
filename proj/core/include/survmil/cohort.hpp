#pragma once

#include <span>
#include <string>
#include <vector>

#include "survmil/survival.hpp"

namespace survmil {

inline constexpr const char* kSplits[] = {"train", "tune", "val1", "val2"};

struct CohortEntry {
  SurvivalRecord record;
  RawCovariates covariates;
  std::string split;  // train | tune | val1 | val2
};

// Indices of entries in `split`, in cohort order.
std::vector<std::size_t> SplitIndices(std::span<const CohortEntry> cohort,
                                      const std::string& split);

std::vector<SurvivalRecord> RecordsOf(std::span<const CohortEntry> cohort,
                                      std::span<const std::size_t> indices);

std::vector<RawCovariates> CovariatesOf(std::span<const CohortEntry> cohort,
                                        std::span<const std::size_t> indices);

// Checks split names, record invariants and case-id uniqueness.
void ValidateCohort(std::span<const CohortEntry> cohort);

}  // namespace survmil
