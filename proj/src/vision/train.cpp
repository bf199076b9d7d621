#include "bustr/vision/train.hpp"

#include "bustr/error.hpp"
#include "bustr/nn/checkpoint.hpp"
#include "bustr/util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bustr::vision {

using schema::DescriptorKind;
using schema::Task;

namespace {

DescriptorKind kind_of(Task t) {
  switch (t) {
    case Task::size: return DescriptorKind::size;
    case Task::birads: return DescriptorKind::birads;
    case Task::shape: return DescriptorKind::shape;
    case Task::margin: return DescriptorKind::margin_main;
    case Task::posterior: return DescriptorKind::posterior;
    case Task::echogenicity: return DescriptorKind::echogenicity;
    case Task::pathology: return DescriptorKind::pathology;
    case Task::histology: return DescriptorKind::histology;
  }
  return DescriptorKind::shape;
}

template <typename V>
void check_task_keys(const std::map<Task, V>& per_task, const schema::DatasetConfig& cfg) {
  const auto tasks = schema::active_tasks(cfg);
  bool ok = tasks.size() == per_task.size();
  for (Task t : tasks) ok = ok && per_task.count(t) != 0;
  if (!ok) fail(ErrorCode::task_mismatch, "loss keys do not match the active tasks of '" + cfg.name + "'");
}

}  // namespace

TaskLabels make_labels(const schema::DescriptorSet& ds, const schema::DatasetConfig& cfg, double size_max) {
  TaskLabels y;
  for (Task t : schema::active_tasks(cfg)) {
    const DescriptorKind k = kind_of(t);
    if (t == Task::size) {
      const auto mm = ds.size_mm();
      if (!mm) fail(ErrorCode::missing_label, "sample has no size label");
      y.size_norm = size_max > 0 ? *mm / size_max : 0.0;
      continue;
    }
    const auto v = ds.get(k);
    if (!v) fail(ErrorCode::missing_label, "sample has no " + std::string(schema::to_string(k)) + " label");
    const auto idx = cfg.vocabulary(k).index_of(*v);
    if (!idx) fail(ErrorCode::out_of_vocabulary, "label '" + *v + "' not in vocabulary");
    y.classes[k] = *idx;
  }
  if (cfg.is_active(DescriptorKind::margin_main) && cfg.is_active(DescriptorKind::margin_subtypes)) {
    const auto subs = ds.subtypes();
    for (const auto& name : cfg.vocabulary(DescriptorKind::margin_subtypes).values()) {
      y.subtype_bits.push_back(subs.count(name) ? 1 : 0);
    }
  }
  return y;
}

TaskLossVars task_losses(const HeadVars& pred, const TaskLabels& y, const schema::DatasetConfig& cfg) {
  TaskLossVars out;
  for (Task t : schema::active_tasks(cfg)) {
    if (t == Task::size) {
      if (!pred.size_norm || !y.size_norm) fail(ErrorCode::missing_label, "size prediction or label missing");
      out.per_task[t] = nn::l1(*pred.size_norm, *y.size_norm);
      continue;
    }
    const DescriptorKind k = kind_of(t);
    auto it = y.classes.find(k);
    if (it == y.classes.end()) fail(ErrorCode::missing_label, "no label for " + std::string(schema::to_string(k)));
    const int target[1] = {it->second};
    const Var ce = nn::cross_entropy(pred.logits.at(k), target);
    if (t != Task::margin) {
      out.per_task[t] = ce;
      continue;
    }
    out.margin_main = ce;
    if (pred.subtype_logits.size() != y.subtype_bits.size()) {
      fail(ErrorCode::missing_label, "margin subtype labels do not match the subtype heads");
    }
    for (std::size_t i = 0; i < pred.subtype_logits.size(); ++i) {
      const int bit[1] = {y.subtype_bits[i]};
      out.subtypes.push_back(nn::cross_entropy(pred.subtype_logits[i], bit));
    }
    out.per_task[t] = out.subtypes.empty() ? ce : combined_margin_loss(ce, out.subtypes);
  }
  return out;
}

double combined_margin_loss(double main, std::span<const double> subs) {
  double s = 0.0;
  for (double v : subs) s += v;
  return 0.5 * main + (0.5 / static_cast<double>(subs.size())) * s;
}

Var combined_margin_loss(const Var& main, std::span<const Var> subs) {
  return add(scale(main, 0.5), scale(nn::sum(subs), 0.5 / static_cast<double>(subs.size())));
}

double vision_loss(const std::map<Task, double>& per_task, const schema::DatasetConfig& cfg) {
  check_task_keys(per_task, cfg);
  double s = 0.0;
  for (const auto& [t, v] : per_task) s += v;
  return s / static_cast<double>(per_task.size());
}

Var vision_loss(const std::map<Task, Var>& per_task, const schema::DatasetConfig& cfg) {
  check_task_keys(per_task, cfg);
  std::vector<Var> parts;
  for (const auto& [t, v] : per_task) parts.push_back(v);
  return scale(nn::sum(parts), 1.0 / static_cast<double>(parts.size()));
}

nlohmann::json to_json(const Stage1Hyper& hp) {
  return {{"epochs", hp.epochs}, {"batch_size", hp.batch_size}, {"lr", hp.lr},
          {"seed", hp.seed},     {"schedule", hp.schedule},     {"augment_shift", hp.augment_shift}};
}

Stage1Hyper stage1_hyper_from_json(const nlohmann::json& j) {
  Stage1Hyper hp;
  hp.epochs = j.value("epochs", hp.epochs);
  hp.batch_size = j.value("batch_size", hp.batch_size);
  hp.lr = j.value("lr", hp.lr);
  hp.seed = j.value("seed", hp.seed);
  hp.schedule = j.value("schedule", hp.schedule);
  hp.augment_shift = j.value("augment_shift", hp.augment_shift);
  if (hp.schedule != "constant" && hp.schedule != "cosine") fail(ErrorCode::invalid_config, "unknown lr schedule");
  if (hp.epochs < 1 || hp.batch_size < 1 || !(hp.lr > 0)) fail(ErrorCode::invalid_config, "bad stage-1 hyperparameters");
  return hp;
}

double scheduled_lr(double base, const std::string& schedule, long step, long total) {
  if (schedule != "cosine" || total <= 0) return base;
  return 0.5 * base * (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total)));
}

corpus::BusImage augment_image(const corpus::BusImage& image, int max_shift, Rng& rng) {
  if (max_shift < 0) return image;
  const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  std::uniform_int_distribution<int> shift(-max_shift, max_shift);
  const int dy = shift(rng), dx = shift(rng);
  const int rows = image.rows(), cols = image.cols();
  corpus::BusImage out = image;
  for (int r = 0; r < rows; ++r) {
    const int sr = std::clamp(r - dy, 0, rows - 1);
    for (int c = 0; c < cols; ++c) {
      int sc = std::clamp(c - dx, 0, cols - 1);
      if (flip) sc = cols - 1 - sc;
      out.pixels(r, c) = image.pixels(sr, sc);
    }
  }
  return out;
}

namespace {

Var sample_loss(Tape& tape, const VisionModel& model, const corpus::BusSample& s,
                const corpus::BusImage* image = nullptr) {
  const TaskLabels y = make_labels(s.descriptors, model.config(), model.size_max);
  const HeadVars hv = model.forward(tape, image ? *image : s.image);
  return vision_loss(task_losses(hv, y, model.config()).per_task, model.config());
}

}  // namespace

double evaluate_loss(const VisionModel& model, std::span<const corpus::BusSample* const> samples) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto* s : samples) {
    Tape tape(false);
    total += sample_loss(tape, model, *s).scalar();
  }
  return total / static_cast<double>(samples.size());
}

Stage1Result train_stage1(std::span<const corpus::BusSample* const> train,
                          std::span<const corpus::BusSample* const> val, const schema::DatasetConfig& cfg,
                          const Stage1Hyper& hp, const EncoderConfig& enc) {
  const auto tasks = schema::active_tasks(cfg);
  for (Task t : tasks) {
    const DescriptorKind k = kind_of(t);
    const auto labelled = std::count_if(train.begin(), train.end(), [&](const corpus::BusSample* s) {
      return k == DescriptorKind::size ? s->descriptors.size_mm().has_value() : s->descriptors.has(k);
    });
    if (labelled < 2) {
      fail(ErrorCode::too_few_samples, "task " + std::string(schema::to_string(t)) + " has fewer than 2 training labels");
    }
  }

  Stage1Result result;
  result.model = std::make_unique<VisionModel>(cfg, enc, hp.seed);
  VisionModel& model = *result.model;
  if (cfg.is_active(DescriptorKind::size)) {
    for (const auto* s : train) model.size_max = std::max(model.size_max, s->descriptors.size_mm().value_or(0.0));
  }
  const ParamList params = model.parameters();
  nn::Adam opt(hp.lr);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const long batches = static_cast<long>((train.size() + static_cast<std::size_t>(hp.batch_size) - 1) /
                                         static_cast<std::size_t>(hp.batch_size));
  const long total_steps = batches * hp.epochs;
  double first_loss = -1.0;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_values = nn::snapshot(params);

  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    Rng rng(mix_seed(hp.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hp.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hp.batch_size));
      const double inv = 1.0 / static_cast<double>(end - start);
      nn::zero_grads(params);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        Tape tape;
        Rng aug(mix_seed(hp.seed, (static_cast<std::uint64_t>(epoch) << 32) + i));
        const corpus::BusImage image = augment_image(train[order[i]]->image, hp.augment_shift, aug);
        const Var loss = sample_loss(tape, model, *train[order[i]], &image);
        tape.backward(loss, inv);
        batch_loss += loss.scalar() * inv;
      }
      if (first_loss < 0) first_loss = batch_loss;
      if (!std::isfinite(batch_loss) || batch_loss > 100.0 * first_loss) {
        fail(ErrorCode::diverged_loss, "stage-1 loss diverged at epoch " + std::to_string(epoch) + " (" +
                                           std::to_string(batch_loss) + ")");
      }
      opt.set_lr(scheduled_lr(hp.lr, hp.schedule, opt.steps(), total_steps));
      opt.step(params);
      epoch_loss += batch_loss * static_cast<double>(end - start);
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss / static_cast<double>(train.size());
    log.val_loss = val.empty() ? log.train_loss : evaluate_loss(model, val);
    result.log.push_back(log);
    if (log.val_loss < best) {
      best = log.val_loss;
      best_values = nn::snapshot(params);
      result.best_epoch = epoch;
    }
  }
  nn::restore(params, best_values);
  nn::quantize_to_float(params);
  model.epoch = result.best_epoch;
  return result;
}

std::map<std::string, double> train_accuracy(const VisionModel& model,
                                             std::span<const corpus::BusSample* const> samples) {
  std::map<std::string, double> hits;
  const auto& cfg = model.config();
  for (const auto* s : samples) {
    const DescriptorPredictions p = model.predict(s->image);
    const TaskLabels y = make_labels(s->descriptors, cfg, model.size_max);
    for (const auto& [k, logits] : p.logits) hits[std::string(schema::to_string(k))] += argmax(logits) == y.classes.at(k);
    const auto& names = cfg.has_vocabulary(DescriptorKind::margin_subtypes)
                            ? cfg.vocabulary(DescriptorKind::margin_subtypes).values()
                            : std::vector<std::string>{};
    for (std::size_t i = 0; i < p.subtype_logits.size(); ++i) {
      hits["margin_subtype." + names[i]] += argmax(p.subtype_logits[i]) == y.subtype_bits[i];
    }
  }
  for (auto& [k, v] : hits) v /= static_cast<double>(samples.size());
  return hits;
}

std::uint64_t config_hash(const schema::DatasetConfig& cfg) { return fnv1a(schema::to_json(cfg).dump()); }

void save_vision(const VisionModel& model, const std::filesystem::path& path) {
  nlohmann::json header = {{"kind", "vision"},
                           {"dataset", schema::to_json(model.config())},
                           {"config_hash", config_hash(model.config())},
                           {"encoder", to_json(model.encoder_config())},
                           {"seed", model.seed},
                           {"size_max", model.size_max},
                           {"epoch", model.epoch},
                           {"pretrained", nullptr}};
  nn::write_checkpoint(path, header, const_cast<VisionModel&>(model).parameters());
}

std::unique_ptr<VisionModel> load_vision(const std::filesystem::path& path) {
  const nn::CheckpointFile file = nn::read_checkpoint(path);
  const auto& h = file.header;
  if (h.value("kind", "") != "vision") fail(ErrorCode::schema_mismatch, path.string() + " is not a vision checkpoint");
  auto model = std::make_unique<VisionModel>(schema::config_from_json(h.at("dataset")),
                                             encoder_config_from_json(h.at("encoder")), h.at("seed").get<std::uint64_t>());
  if (h.at("config_hash").get<std::uint64_t>() != config_hash(model->config())) {
    fail(ErrorCode::schema_mismatch, "config hash mismatch in " + path.string());
  }
  model->size_max = h.at("size_max").get<double>();
  model->epoch = h.value("epoch", 0);
  nn::load_parameters(file, model->parameters());
  return model;
}

}  // namespace bustr::vision
