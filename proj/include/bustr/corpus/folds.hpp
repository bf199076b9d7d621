#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace bustr::corpus {

struct FoldSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

struct FoldPlan {
  int k = 5;
  std::uint64_t seed = 0;
  std::map<std::string, int> assignments;
  std::vector<FoldSplit> folds;
};

/// Stratified k-fold plan: ids are shuffled within each label, the label
/// groups are concatenated and position i goes to fold i mod k. Within a
/// fold, 20% of the remaining ids (evenly spaced over the label-grouped
/// order) form the validation split. TooFewSamples when |ids| < k.
FoldPlan make_folds(const std::vector<std::string>& ids, const std::vector<std::string>& labels, int k,
                    std::uint64_t seed);

nlohmann::json to_json(const FoldPlan& plan);
FoldPlan fold_plan_from_json(const nlohmann::json& j);

}  // namespace bustr::corpus
