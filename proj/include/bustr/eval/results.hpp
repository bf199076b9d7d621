#pragma once

#include "bustr/eval/metrics.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace bustr::eval {

struct MetricsRecord {
  int fold = 0;
  NlgScores nlg;
  std::map<std::string, CeScore> ce;                    // keyed by descriptor kind name
  std::map<std::string, std::vector<double>> curves;   // per-epoch series, e.g. "stage1_val_loss"
};

nlohmann::json to_json(const MetricsRecord& r);
MetricsRecord record_from_json(const nlohmann::json& j);

/// Writes nlg.csv, ce.csv, summary.md and plots/*.svg (fold means in the
/// last row of each table). IoFailure on an empty record list.
void emit_results(const std::vector<MetricsRecord>& records, const std::filesystem::path& out_dir);

/// Paired t-tests per NLG metric between two runs with matching folds;
/// writes significance.csv.
void emit_significance(const std::vector<MetricsRecord>& a, const std::vector<MetricsRecord>& b,
                       const std::string& name_a, const std::string& name_b, const std::filesystem::path& out_dir);

/// Polyline chart of one or more series against the epoch index.
std::string svg_line_chart(const std::string& title, const std::map<std::string, std::vector<double>>& series);

}  // namespace bustr::eval
