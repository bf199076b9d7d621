#include "bustr/corpus/folds.hpp"

#include "bustr/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace bustr::corpus {

namespace {

// Label-grouped order with a seeded shuffle inside each group.
std::vector<std::size_t> grouped_order(const std::vector<std::string>& labels, const std::vector<std::size_t>& subset,
                                       std::mt19937_64& rng) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i : subset) groups[labels[i]].push_back(i);
  std::vector<std::size_t> order;
  for (auto& [label, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    order.insert(order.end(), members.begin(), members.end());
  }
  return order;
}

}  // namespace

FoldPlan make_folds(const std::vector<std::string>& ids, const std::vector<std::string>& labels, int k,
                    std::uint64_t seed) {
  if (ids.size() != labels.size()) fail(ErrorCode::length_mismatch, "ids and labels differ in length");
  if (k < 2) fail(ErrorCode::usage, "fold count must be at least 2");
  if (ids.size() < static_cast<std::size_t>(k)) fail(ErrorCode::too_few_samples, "fewer samples than folds");
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> all(ids.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto order = grouped_order(labels, all, rng);
  std::vector<int> fold_of(ids.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    fold_of[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
    plan.assignments[ids[order[pos]]] = fold_of[order[pos]];
  }
  plan.folds.resize(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    FoldSplit& split = plan.folds[static_cast<std::size_t>(f)];
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (fold_of[i] == f) {
        split.test.push_back(ids[i]);
      } else {
        rest.push_back(i);
      }
    }
    const auto rest_order = grouped_order(labels, rest, rng);
    const std::size_t m = rest_order.size();
    const auto n_val = static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(m)));
    std::vector<bool> is_val(m, false);
    for (std::size_t j = 0; j < n_val; ++j) {
      is_val[static_cast<std::size_t>((static_cast<double>(j) + 0.5) * static_cast<double>(m) /
                                      static_cast<double>(n_val))] = true;
    }
    for (std::size_t p = 0; p < m; ++p) (is_val[p] ? split.val : split.train).push_back(ids[rest_order[p]]);
  }
  return plan;
}

nlohmann::json to_json(const FoldPlan& plan) {
  nlohmann::json j;
  j["k"] = plan.k;
  j["seed"] = plan.seed;
  j["assignments"] = plan.assignments;
  j["folds"] = nlohmann::json::array();
  for (const auto& f : plan.folds) j["folds"].push_back({{"train", f.train}, {"val", f.val}, {"test", f.test}});
  return j;
}

FoldPlan fold_plan_from_json(const nlohmann::json& j) {
  FoldPlan plan;
  try {
    plan.k = j.at("k").get<int>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.assignments = j.at("assignments").get<std::map<std::string, int>>();
    for (const auto& f : j.at("folds")) {
      plan.folds.push_back({f.at("train").get<std::vector<std::string>>(), f.at("val").get<std::vector<std::string>>(),
                            f.at("test").get<std::vector<std::string>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::schema_mismatch, std::string("malformed fold plan: ") + e.what());
  }
  if (static_cast<int>(plan.folds.size()) != plan.k) fail(ErrorCode::schema_mismatch, "fold count mismatch");
  return plan;
}

}  // namespace bustr::corpus
