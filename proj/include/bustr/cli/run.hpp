#pragma once

// Pipeline orchestration behind the `bustr` subcommands.
//
// Run directory layout:
//   run.json                 resolved configuration
//   lm/                      lm.ckpt, tokenizer.json, log.json
//   fold<i>/                 stage1.ckpt, lm.ckpt, tokenizer.json, stage2.ckpt, log.json
//   results/                 nlg.csv, ce.csv, summary.md, records.json, plots/, generated/
//   ablation/                ablation.csv, ablation.md, ablation_check.csv, <row>/...

#include "bustr/corpus/folds.hpp"
#include "bustr/corpus/sample.hpp"
#include "bustr/error.hpp"
#include "bustr/eval/results.hpp"
#include "bustr/lm/train.hpp"
#include "bustr/report/report.hpp"
#include "bustr/vision/train.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace bustr::cli {

namespace fs = std::filesystem;

struct RunConfig {
  fs::path dataset;
  fs::path corpus_dir;
  fs::path output_dir;
  std::uint64_t seed = 0;
  int folds = 5;
  vision::EncoderConfig encoder;
  vision::Stage1Hyper stage1;
  lm::LmHyper lm;
  /// Reports drawn for LM pretraining, separate from the corpus.
  int lm_reports = 200;
  int lm_heldout = 20;
  lm::Stage2Hyper stage2;
  lm::LossWeights loss{0.5, 0.5, lm::LossMode::weighted_sum};
  fs::path terms;
  std::optional<fs::path> templates;
};

/// Applies "a.b.c=value" overrides to a JSON object. Values that parse as
/// JSON keep their type; anything else is stored as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Builds a RunConfig from JSON. Relative paths resolve against `base`.
/// The seed comes from `seed_override`, then the "seed" key, then the
/// BUSTR_SEED environment variable; none of them is a usage error.
RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base,
                               std::optional<std::uint64_t> seed_override);
RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed_override);
nlohmann::json to_json(const RunConfig& rc);

/// Seed from BUSTR_SEED, if set and numeric.
std::optional<std::uint64_t> env_seed();

/// Usage error when `dir` exists and is non-empty unless `force`, in which
/// case it is cleared.
void prepare_output_dir(const fs::path& dir, bool force);

/// Realizes a supervisory report for every sample.
void attach_reports(std::vector<corpus::BusSample>& samples, const schema::DatasetConfig& cfg,
                    const report::ReportRealizer& realizer);

/// Synthesizes n samples with reports and a k-fold plan into `out`. Returns
/// the corpus digest.
std::string synth(const schema::DatasetConfig& cfg, int n, std::uint64_t seed, int folds, const fs::path& out,
                  const report::ReportRealizer& realizer, bool force);

/// Encoder and objective of one stage-2 training.
struct Variant {
  std::string name;
  bool descriptor_encoder = true;  // stage-1 weights, else a fresh encoder
  lm::LossWeights weights;
};

/// Rows of the ablation grid in output order.
std::vector<Variant> ablation_variants(const lm::LossWeights& full);

struct FoldData {
  int fold = 0;
  std::vector<const corpus::BusSample*> train, val, test;
};

/// Loads the corpus (SchemaMismatch when its config differs from the run's)
/// and its fold plan, making one when the corpus has none.
struct LoadedRun {
  schema::DatasetConfig config;
  corpus::Corpus corpus;
  corpus::FoldPlan plan;
  std::vector<FoldData> folds() const;
};
LoadedRun load_run_data(const RunConfig& rc);

/// Pretrains the shared LM on freshly drawn reports and writes `dir`.
lm::PretrainResult pretrain_run_lm(const RunConfig& rc, const schema::DatasetConfig& cfg, const fs::path& dir);

struct FoldModels {
  std::unique_ptr<lm::ReportModel> model;
  std::vector<vision::EpochLog> stage1_log;
  std::vector<lm::TrainLog> stage2_log;
};

/// Stage 2 for one variant on top of a trained stage-1 model.
FoldModels train_variant(const RunConfig& rc, const FoldData& fold, const vision::VisionModel& stage1,
                         const std::vector<vision::EpochLog>& stage1_log, std::shared_ptr<lm::FrozenLM> lm,
                         const lm::Tokenizer& tok, const Variant& variant);

/// Generates a report for every test sample and scores it.
eval::MetricsRecord evaluate_fold(const lm::ReportModel& model, const FoldData& fold,
                                  const schema::DatasetConfig& cfg, std::vector<std::string>* generated = nullptr);

/// Training curves of a fold as stored in log.json.
nlohmann::json fold_log_json(const FoldModels& m);
std::map<std::string, std::vector<double>> curves_from_log(const nlohmann::json& log);

void cmd_train(const RunConfig& rc, bool force);
void cmd_eval(const RunConfig& rc, bool force);
void cmd_compare(const fs::path& run_a, const fs::path& run_b, const fs::path& out, bool force);
void cmd_ablate(const RunConfig& rc, bool force);
std::string cmd_generate(const fs::path& model_dir, const fs::path& image);

std::vector<eval::MetricsRecord> load_records(const fs::path& path);
void save_records(const std::vector<eval::MetricsRecord>& records, const fs::path& path);

/// Process exit code for a library error: 2 usage, 4 divergence, 3 otherwise.
int exit_code_for(ErrorCode code);

}  // namespace bustr::cli
