#pragma once

#include "bustr/corpus/sample.hpp"
#include "bustr/vision/model.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bustr::vision {

/// Supervision targets for one sample.
struct TaskLabels {
  std::map<schema::DescriptorKind, int> classes;
  std::vector<int> subtype_bits;  // vocabulary order; all zero when absent
  std::optional<double> size_norm;
};

/// MissingLabel when an active task has no ground truth. Size is divided by
/// `size_max`.
TaskLabels make_labels(const schema::DescriptorSet& ds, const schema::DatasetConfig& cfg, double size_max);

struct TaskLossVars {
  std::map<schema::Task, Var> per_task;  // margin holds the combined margin loss
  Var margin_main;
  std::vector<Var> subtypes;
};

/// Cross-entropy for categorical heads, binary cross-entropy per margin
/// subtype, L1 on the normalized size.
TaskLossVars task_losses(const HeadVars& pred, const TaskLabels& y, const schema::DatasetConfig& cfg);

/// 0.5 * main + (0.5 / n) * sum(subs).
double combined_margin_loss(double main, std::span<const double> subs);
Var combined_margin_loss(const Var& main, std::span<const Var> subs);

/// Mean over exactly the active tasks of cfg. TaskMismatch otherwise.
double vision_loss(const std::map<schema::Task, double>& per_task, const schema::DatasetConfig& cfg);
Var vision_loss(const std::map<schema::Task, Var>& per_task, const schema::DatasetConfig& cfg);

struct Stage1Hyper {
  int epochs = 100;
  int batch_size = 8;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  /// "constant" or "cosine" (decays to zero over all steps).
  std::string schedule = "constant";
  /// Training images are flipped at random and shifted by up to this many
  /// pixels; negative disables augmentation, 0 flips only.
  int augment_shift = -1;
};

/// Mirrors the image left-right with probability 1/2 and translates it by
/// up to `max_shift` pixels per axis, replicating edge pixels. Identity
/// when max_shift < 0.
corpus::BusImage augment_image(const corpus::BusImage& image, int max_shift, Rng& rng);

/// Learning rate at optimizer step `step` (0-based) of `total`.
double scheduled_lr(double base, const std::string& schedule, long step, long total);

nlohmann::json to_json(const Stage1Hyper& hp);
Stage1Hyper stage1_hyper_from_json(const nlohmann::json& j);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct Stage1Result {
  std::unique_ptr<VisionModel> model;
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

/// Mean multitask loss over samples on an inference tape.
double evaluate_loss(const VisionModel& model, std::span<const corpus::BusSample* const> samples);

/// Adam on the mean multitask loss over each batch. The parameters with the
/// best validation loss (train loss when `val` is empty) are kept and rounded
/// to float32. DivergedLoss when a batch loss is non-finite or exceeds 100x
/// the first batch loss; TooFewSamples when an active task has fewer than two
/// labelled training samples.
Stage1Result train_stage1(std::span<const corpus::BusSample* const> train,
                          std::span<const corpus::BusSample* const> val, const schema::DatasetConfig& cfg,
                          const Stage1Hyper& hp, const EncoderConfig& enc = {});

/// Fraction of samples whose argmax matches the label, per categorical head
/// ("margin_subtype.<name>" keys for subtype heads).
std::map<std::string, double> train_accuracy(const VisionModel& model,
                                             std::span<const corpus::BusSample* const> samples);

std::uint64_t config_hash(const schema::DatasetConfig& cfg);

void save_vision(const VisionModel& model, const std::filesystem::path& path);
/// SchemaMismatch when the file was not written by save_vision.
std::unique_ptr<VisionModel> load_vision(const std::filesystem::path& path);

}  // namespace bustr::vision
