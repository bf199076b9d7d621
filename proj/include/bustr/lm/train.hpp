#pragma once

#include "bustr/corpus/sample.hpp"
#include "bustr/lm/model.hpp"
#include "bustr/report/report.hpp"
#include "bustr/vision/model.hpp"

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bustr::lm {

/// Fixed instruction placed between the vision tokens and the report.
inline constexpr const char* kInstruction = "Write the breast ultrasound report for this image.";

/// One pretraining example: descriptor values (size excluded), the template
/// variant of its report, and the report text.
struct LmExample {
  std::vector<std::string> facts;
  std::size_t variant = 0;
  std::string report;
};

/// Requires a report on the sample (MissingLabel otherwise).
LmExample make_lm_example(const corpus::BusSample& sample, const report::TemplateRealizer& realizer);

/// Prefix slot ids: one id per fact plus the variant marker, shuffled with
/// `rng`, padded with <pad> to `slots`. ContextOverflow when they do not fit.
std::vector<int> prefix_ids(const LmExample& ex, const Tokenizer& tok, int slots, Rng& rng);

struct LmHyper {
  LmConfig arch;
  int epochs = 40;
  int batch_size = 8;
  double lr = 3e-3;
  std::uint64_t seed = 1;
  std::string schedule = "cosine";
  /// A light alignment term keeps H close to Z without crowding out the
  /// next-token signal.
  LossWeights weights{1.0, 0.05, LossMode::weighted_sum};
  int min_word_count = 2;
};

nlohmann::json to_json(const LmHyper& hp);
LmHyper lm_hyper_from_json(const nlohmann::json& j);

struct TrainLog {
  int epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double align = 0.0;
  double token_accuracy = 0.0;
  double val_loss = 0.0;
};

struct PretrainResult {
  std::unique_ptr<FrozenLM> lm;
  Tokenizer tokenizer;
  std::vector<TrainLog> log;
  /// Mean per-token report cross-entropy on the held-out examples.
  double heldout_ce = 0.0;
};

/// Learns word tokens from the reports and the instruction, builds an LM on
/// that vocabulary, adds the clinical terms (resizing the embeddings), then
/// trains on [descriptor prefix ; instruction ; report <eos>] with the
/// combined objective and freezes. TooFewSamples below 50 training reports.
PretrainResult pretrain_lm(std::span<const LmExample> train, std::span<const LmExample> heldout,
                           std::span<const std::string> terms, const LmHyper& hp);

/// Report cross-entropy per token of a frozen LM with descriptor prefixes.
double heldout_cross_entropy(const FrozenLM& lm, const Tokenizer& tok, std::span<const LmExample> examples,
                             std::uint64_t seed);

// ---------------------------------------------------------------------------

struct Stage2Hyper {
  int epochs = 25;
  int batch_size = 8;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  std::string schedule = "constant";
  /// As in stage 1: negative disables flip-and-shift augmentation.
  int augment_shift = -1;
};

/// 35 epochs for the BUS-BRA configuration, 25 otherwise.
int default_stage2_epochs(const schema::DatasetConfig& cfg);

nlohmann::json to_json(const Stage2Hyper& hp);
Stage2Hyper stage2_hyper_from_json(const nlohmann::json& j);

struct ReportModel {
  std::unique_ptr<vision::VisionModel> vision;      // fine-tuned encoder (heads unused)
  std::unique_ptr<vision::VisionModel> descriptor;  // stage-1 model, supplies size
  nn::Linear projection;                            // E -> D
  std::shared_ptr<FrozenLM> lm;
  Tokenizer tokenizer;
  std::vector<int> prompt_ids;
  LossWeights weights;

  ParamList trainable();
};

struct Stage2Result {
  std::unique_ptr<ReportModel> model;
  std::vector<TrainLog> log;
};

/// Per-sample objective pieces on one tape.
struct Stage2Terms {
  LMSequence seq;
  Var ce;
  Var align;
  Var loss;
};

Stage2Terms stage2_terms(Tape& tape, const ReportModel& model, const corpus::BusImage& image,
                         std::span<const int> report_ids);

/// Fine-tunes a copy of `init`'s encoder and a fresh projection on the
/// combined objective; the LM is untouched (FrozenViolation if its hash
/// changes). SchemaMismatch when configs or widths disagree; DivergedLoss
/// as in stage 1.
Stage2Result train_stage2(std::span<const corpus::BusSample* const> train,
                          std::span<const corpus::BusSample* const> val, const vision::VisionModel& init,
                          const vision::VisionModel& descriptor, std::shared_ptr<FrozenLM> lm,
                          const Tokenizer& tokenizer, const Stage2Hyper& hp, const LossWeights& w);

/// Next-token accuracy over report positions under teacher forcing.
double report_token_accuracy(const ReportModel& model, std::span<const corpus::BusSample* const> samples);
/// Mean alignment loss under teacher forcing.
double mean_align_loss(const ReportModel& model, std::span<const corpus::BusSample* const> samples);

inline constexpr int kMaxGeneratedTokens = 128;

/// Greedy decoding (ties to the lowest id) from [vision ; instruction] until
/// <eos>, 128 tokens or the context limit. When the configuration has size,
/// the stage-1 size prediction is spliced in with insert_size.
report::ReportText generate_report(const corpus::BusImage& image, const ReportModel& model);

/// Writes stage1.ckpt, lm.ckpt, tokenizer.json and stage2.ckpt into `dir`.
void save_report_model(ReportModel& model, const std::filesystem::path& dir);
/// MissingFile when a file is absent; SchemaMismatch when the stored LM hash
/// differs from the loaded LM.
std::unique_ptr<ReportModel> load_report_model(const std::filesystem::path& dir);

}  // namespace bustr::lm
