#include "bustr/lm/train.hpp"

#include "bustr/error.hpp"
#include "bustr/nn/checkpoint.hpp"
#include "bustr/util.hpp"
#include "bustr/vision/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bustr::lm {

using schema::DescriptorKind;

LmExample make_lm_example(const corpus::BusSample& sample, const report::TemplateRealizer& realizer) {
  if (!sample.report) fail(ErrorCode::missing_label, "sample " + sample.id + " has no report");
  LmExample ex;
  for (const auto& [kind, value] : sample.descriptors.entries()) {
    if (kind == DescriptorKind::size) continue;
    if (const auto* s = std::get_if<std::string>(&value)) ex.facts.push_back(*s);
    if (const auto* set = std::get_if<schema::SubtypeSet>(&value)) ex.facts.insert(ex.facts.end(), set->begin(), set->end());
  }
  ex.variant = realizer.variant_for(sample.id);
  ex.report = *sample.report;
  return ex;
}

std::vector<int> prefix_ids(const LmExample& ex, const Tokenizer& tok, int slots, Rng& rng) {
  std::vector<int> ids;
  for (const auto& f : ex.facts) {
    const auto enc = tok.encode(f);
    ids.insert(ids.end(), enc.begin(), enc.end());
  }
  ids.push_back(variant_marker(ex.variant));
  if (static_cast<int>(ids.size()) > slots) {
    fail(ErrorCode::context_overflow, "descriptor prefix needs " + std::to_string(ids.size()) + " slots");
  }
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(static_cast<std::size_t>(slots), kPad);
  return ids;
}

nlohmann::json to_json(const LmHyper& hp) {
  return {{"arch", to_json(hp.arch)},
          {"epochs", hp.epochs},
          {"batch_size", hp.batch_size},
          {"lr", hp.lr},
          {"seed", hp.seed},
          {"schedule", hp.schedule},
          {"mode", std::string(to_string(hp.weights.mode))},
          {"lambda_ce", hp.weights.ce},
          {"lambda_align", hp.weights.align},
          {"min_word_count", hp.min_word_count}};
}

LmHyper lm_hyper_from_json(const nlohmann::json& j) {
  LmHyper hp;
  if (j.contains("arch")) hp.arch = lm_config_from_json(j.at("arch"));
  hp.epochs = j.value("epochs", hp.epochs);
  hp.batch_size = j.value("batch_size", hp.batch_size);
  hp.lr = j.value("lr", hp.lr);
  hp.seed = j.value("seed", hp.seed);
  hp.schedule = j.value("schedule", hp.schedule);
  hp.weights.mode = loss_mode_from_string(j.value("mode", std::string(to_string(hp.weights.mode))));
  hp.weights.ce = j.value("lambda_ce", hp.weights.ce);
  hp.weights.align = j.value("lambda_align", hp.weights.align);
  hp.min_word_count = j.value("min_word_count", hp.min_word_count);
  if (hp.epochs < 1 || hp.batch_size < 1 || !(hp.lr > 0)) fail(ErrorCode::invalid_config, "bad LM hyperparameters");
  return hp;
}

namespace {

std::vector<int> with_eos(std::vector<int> ids) {
  ids.push_back(kEos);
  return ids;
}

void check_divergence(double loss, double& first, const char* stage, int epoch) {
  if (first < 0) first = loss;
  if (!std::isfinite(loss) || loss > 100.0 * first) {
    fail(ErrorCode::diverged_loss, std::string(stage) + " loss diverged at epoch " + std::to_string(epoch) + " (" +
                                       std::to_string(loss) + ")");
  }
}

int count_hits(const LMSequence& seq) {
  const Matrix& logits = seq.logits.value();
  int hits = 0;
  for (std::size_t i = 0; i < seq.targets.size(); ++i) {
    hits += vision::argmax(logits.row(seq.ce_start + static_cast<Eigen::Index>(i))) == seq.targets[i];
  }
  return hits;
}

long total_steps(std::size_t n, int batch, int epochs) {
  return static_cast<long>((n + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch)) * epochs;
}

}  // namespace

double heldout_cross_entropy(const FrozenLM& lm, const Tokenizer& tok, std::span<const LmExample> examples,
                             std::uint64_t seed) {
  const auto prompt = tok.encode(kInstruction);
  double total = 0.0;
  long count = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    Rng rng(mix_seed(seed, i));
    Tape tape(false);
    const auto report = with_eos(tok.encode(examples[i].report));
    const auto seq = assemble_input(tape, lm.embed(tape, prefix_ids(examples[i], tok, lm.config().prefix, rng)), prompt,
                                    report, lm);
    total += token_ce_loss(seq.logits, seq.targets, seq.ce_start, nn::Reduction::sum).scalar();
    count += static_cast<long>(seq.targets.size());
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

PretrainResult pretrain_lm(std::span<const LmExample> train, std::span<const LmExample> heldout,
                           std::span<const std::string> terms, const LmHyper& hp) {
  if (train.size() < 50) fail(ErrorCode::too_few_samples, "LM pretraining needs at least 50 reports");
  std::vector<std::string> texts = {kInstruction};
  for (const auto& ex : train) texts.push_back(ex.report);
  const Tokenizer base = Tokenizer::train(texts, hp.min_word_count);

  PretrainResult result;
  result.lm = std::make_unique<FrozenLM>(base.vocab_size(), hp.arch, hp.seed);
  result.tokenizer = augment_tokenizer(base, terms);
  result.lm->resize_vocab(base, result.tokenizer);
  FrozenLM& lm = *result.lm;
  const Tokenizer& tok = result.tokenizer;

  const auto prompt = tok.encode(kInstruction);
  std::vector<std::vector<int>> reports;
  for (const auto& ex : train) reports.push_back(with_eos(tok.encode(ex.report)));

  const ParamList params = lm.parameters();
  nn::Adam opt(hp.lr);
  const long steps = total_steps(train.size(), hp.batch_size, hp.epochs);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  double first = -1.0;
  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(hp.seed, 0x1000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    TrainLog log;
    log.epoch = epoch;
    long tokens = 0, hits = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hp.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hp.batch_size));
      const double inv = 1.0 / static_cast<double>(end - start);
      nn::zero_grads(params);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t k = order[i];
        Rng rng(mix_seed(hp.seed, (static_cast<std::uint64_t>(epoch) << 32) + k));
        Tape tape;
        const auto seq =
            assemble_input(tape, lm.embed(tape, prefix_ids(train[k], tok, hp.arch.prefix, rng)), prompt, reports[k], lm);
        const Var ce = token_ce_loss(seq.logits, seq.targets, seq.ce_start);
        const Var al = align_loss(seq.hidden, seq.z);
        const Var loss = combine_losses(ce, al, hp.weights);
        tape.backward(loss, inv);
        batch_loss += loss.scalar() * inv;
        log.ce += ce.scalar();
        log.align += al.scalar();
        hits += count_hits(seq);
        tokens += static_cast<long>(seq.targets.size());
      }
      check_divergence(batch_loss, first, "LM", epoch);
      opt.set_lr(vision::scheduled_lr(hp.lr, hp.schedule, opt.steps(), steps));
      opt.step(params);
      log.loss += batch_loss * static_cast<double>(end - start);
    }
    const double n = static_cast<double>(train.size());
    log.loss /= n;
    log.ce /= n;
    log.align /= n;
    log.token_accuracy = tokens ? static_cast<double>(hits) / static_cast<double>(tokens) : 0.0;
    log.val_loss = log.loss;
    result.log.push_back(log);
  }
  nn::quantize_to_float(params);
  lm.freeze();
  result.heldout_ce = heldout_cross_entropy(lm, tok, heldout, hp.seed);
  return result;
}

// ---------------------------------------------------------------------------

int default_stage2_epochs(const schema::DatasetConfig& cfg) { return cfg.name == "busbra" ? 35 : 25; }

nlohmann::json to_json(const Stage2Hyper& hp) {
  return {{"epochs", hp.epochs}, {"batch_size", hp.batch_size}, {"lr", hp.lr}, {"seed", hp.seed},
          {"schedule", hp.schedule}, {"augment_shift", hp.augment_shift}};
}

Stage2Hyper stage2_hyper_from_json(const nlohmann::json& j) {
  Stage2Hyper hp;
  hp.epochs = j.value("epochs", hp.epochs);
  hp.batch_size = j.value("batch_size", hp.batch_size);
  hp.lr = j.value("lr", hp.lr);
  hp.seed = j.value("seed", hp.seed);
  hp.schedule = j.value("schedule", hp.schedule);
  hp.augment_shift = j.value("augment_shift", hp.augment_shift);
  if (hp.epochs < 1 || hp.batch_size < 1 || !(hp.lr > 0)) fail(ErrorCode::invalid_config, "bad stage-2 hyperparameters");
  return hp;
}

ParamList ReportModel::trainable() {
  ParamList out = vision->encoder_parameters();
  projection.collect(out);
  return out;
}

Stage2Terms stage2_terms(Tape& tape, const ReportModel& model, const corpus::BusImage& image,
                         std::span<const int> report_ids) {
  Stage2Terms t;
  const Var prefix = model.projection(tape, model.vision->encoder()(tape, image));
  t.seq = assemble_input(tape, prefix, model.prompt_ids, report_ids, *model.lm);
  t.ce = token_ce_loss(t.seq.logits, t.seq.targets, t.seq.ce_start);
  t.align = align_loss(t.seq.hidden, t.seq.z);
  t.loss = combine_losses(t.ce, t.align, model.weights);
  return t;
}

namespace {

std::vector<int> report_ids_of(const ReportModel& m, const corpus::BusSample& s) {
  if (!s.report) fail(ErrorCode::missing_label, "sample " + s.id + " has no report");
  return with_eos(m.tokenizer.encode(*s.report));
}

}  // namespace

Stage2Result train_stage2(std::span<const corpus::BusSample* const> train,
                          std::span<const corpus::BusSample* const> val, const vision::VisionModel& init,
                          const vision::VisionModel& descriptor, std::shared_ptr<FrozenLM> lm,
                          const Tokenizer& tokenizer, const Stage2Hyper& hp, const LossWeights& w) {
  if (train.empty()) fail(ErrorCode::too_few_samples, "stage 2 needs training samples");
  if (vision::config_hash(init.config()) != vision::config_hash(descriptor.config())) {
    fail(ErrorCode::schema_mismatch, "vision checkpoints disagree on the dataset config");
  }
  if (init.encoder_config().token_count() != lm->config().prefix) {
    fail(ErrorCode::schema_mismatch, "vision token count differs from the LM prefix length");
  }
  if (tokenizer.vocab_size() != lm->vocab_size()) fail(ErrorCode::schema_mismatch, "tokenizer does not match the LM");
  if (!lm->frozen()) lm->freeze();

  Stage2Result result;
  result.model = std::make_unique<ReportModel>();
  ReportModel& m = *result.model;
  m.vision = init.clone();
  m.descriptor = descriptor.clone();
  Rng rng(mix_seed(hp.seed, 0x7072));
  m.projection = nn::Linear("proj", init.encoder_config().token_dim(), lm->config().d_model, rng);
  m.lm = std::move(lm);
  m.tokenizer = tokenizer;
  m.prompt_ids = tokenizer.encode(kInstruction);
  m.weights = w;

  std::vector<std::vector<int>> reports;
  for (const auto* s : train) reports.push_back(report_ids_of(m, *s));

  const std::uint64_t lm_hash = m.lm->hash();
  const ParamList params = m.trainable();
  nn::Adam opt(hp.lr);
  const long steps = total_steps(train.size(), hp.batch_size, hp.epochs);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  double first = -1.0;
  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(hp.seed, 0x2000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    TrainLog log;
    log.epoch = epoch;
    long tokens = 0, hits = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hp.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hp.batch_size));
      const double inv = 1.0 / static_cast<double>(end - start);
      nn::zero_grads(params);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        Tape tape;
        Rng aug(mix_seed(hp.seed, (static_cast<std::uint64_t>(epoch) << 32) + i));
        const auto image = vision::augment_image(train[order[i]]->image, hp.augment_shift, aug);
        const auto t = stage2_terms(tape, m, image, reports[order[i]]);
        tape.backward(t.loss, inv);
        batch_loss += t.loss.scalar() * inv;
        log.ce += t.ce.scalar();
        log.align += t.align.scalar();
        hits += count_hits(t.seq);
        tokens += static_cast<long>(t.seq.targets.size());
      }
      check_divergence(batch_loss, first, "stage-2", epoch);
      opt.set_lr(vision::scheduled_lr(hp.lr, hp.schedule, opt.steps(), steps));
      opt.step(params);
      log.loss += batch_loss * static_cast<double>(end - start);
    }
    const double n = static_cast<double>(train.size());
    log.loss /= n;
    log.ce /= n;
    log.align /= n;
    log.token_accuracy = tokens ? static_cast<double>(hits) / static_cast<double>(tokens) : 0.0;
    if (val.empty()) {
      log.val_loss = log.loss;
    } else {
      double v = 0.0;
      for (const auto* s : val) {
        Tape tape(false);
        v += stage2_terms(tape, m, s->image, report_ids_of(m, *s)).loss.scalar();
      }
      log.val_loss = v / static_cast<double>(val.size());
    }
    result.log.push_back(log);
  }
  nn::quantize_to_float(params);
  if (m.lm->hash() != lm_hash) fail(ErrorCode::frozen_violation, "LM parameters changed during stage 2");
  return result;
}

double report_token_accuracy(const ReportModel& model, std::span<const corpus::BusSample* const> samples) {
  long hits = 0, tokens = 0;
  for (const auto* s : samples) {
    Tape tape(false);
    const auto t = stage2_terms(tape, model, s->image, report_ids_of(model, *s));
    hits += count_hits(t.seq);
    tokens += static_cast<long>(t.seq.targets.size());
  }
  return tokens ? static_cast<double>(hits) / static_cast<double>(tokens) : 0.0;
}

double mean_align_loss(const ReportModel& model, std::span<const corpus::BusSample* const> samples) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto* s : samples) {
    Tape tape(false);
    total += stage2_terms(tape, model, s->image, report_ids_of(model, *s)).align.scalar();
  }
  return total / static_cast<double>(samples.size());
}

report::ReportText generate_report(const corpus::BusImage& image, const ReportModel& model) {
  Matrix prefix;
  {
    Tape tape(false);
    prefix = model.projection(tape, model.vision->encoder()(tape, image)).value();
  }
  const int context = model.lm->config().context;
  std::vector<int> ids = model.prompt_ids;
  if (static_cast<int>(prefix.rows() + static_cast<Eigen::Index>(ids.size())) >= context) {
    fail(ErrorCode::context_overflow, "prompt does not fit the context");
  }
  std::vector<int> generated;
  while (static_cast<int>(generated.size()) < kMaxGeneratedTokens &&
         static_cast<int>(prefix.rows()) + static_cast<int>(ids.size()) < context) {
    Tape tape(false);
    const Var parts[2] = {tape.constant(prefix), model.lm->embed(tape, ids)};
    const auto out = model.lm->forward(tape, concat_rows(parts));
    const Matrix& logits = out.logits.value();
    const int next = vision::argmax(logits.row(logits.rows() - 1));
    if (next == kEos) break;
    generated.push_back(next);
    ids.push_back(next);
  }
  report::ReportText text = report::ReportText::from_text(model.tokenizer.decode(generated));
  const auto& cfg = model.descriptor->config();
  if (cfg.is_active(DescriptorKind::size) && model.descriptor->size_max > 0) {
    const auto pred = model.descriptor->predict(image);
    const double mm = std::max(0.1, std::round(pred.size_norm.value_or(0.0) * model.descriptor->size_max * 10.0) / 10.0);
    text = report::insert_size(text, mm);
  }
  return text;
}

void save_report_model(ReportModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  vision::save_vision(*model.descriptor, dir / "stage1.ckpt");
  save_lm(*model.lm, model.tokenizer, dir / "lm.ckpt");
  model.tokenizer.save(dir / "tokenizer.json");
  nlohmann::json header = {{"kind", "report"},
                           {"dataset", schema::to_json(model.vision->config())},
                           {"encoder", vision::to_json(model.vision->encoder_config())},
                           {"seed", model.vision->seed},
                           {"lm_hash", model.lm->hash()},
                           {"mode", std::string(to_string(model.weights.mode))},
                           {"lambda_ce", model.weights.ce},
                           {"lambda_align", model.weights.align},
                           {"prompt", kInstruction}};
  nn::write_checkpoint(dir / "stage2.ckpt", header, model.trainable());
}

std::unique_ptr<ReportModel> load_report_model(const std::filesystem::path& dir) {
  for (const char* f : {"stage1.ckpt", "lm.ckpt", "stage2.ckpt"}) {
    if (!std::filesystem::exists(dir / f)) fail(ErrorCode::missing_file, (dir / f).string() + " not found");
  }
  auto m = std::make_unique<ReportModel>();
  m->descriptor = vision::load_vision(dir / "stage1.ckpt");
  auto loaded = load_lm(dir / "lm.ckpt");
  m->lm = std::shared_ptr<FrozenLM>(std::move(loaded.lm));
  m->tokenizer = std::move(loaded.tokenizer);
  const nn::CheckpointFile file = nn::read_checkpoint(dir / "stage2.ckpt");
  const auto& h = file.header;
  if (h.value("kind", "") != "report") fail(ErrorCode::schema_mismatch, "stage2.ckpt is not a report checkpoint");
  if (h.at("lm_hash").get<std::uint64_t>() != m->lm->hash()) {
    fail(ErrorCode::schema_mismatch, "LM checkpoint differs from the one used in stage 2");
  }
  m->vision = std::make_unique<vision::VisionModel>(schema::config_from_json(h.at("dataset")),
                                                    vision::encoder_config_from_json(h.at("encoder")),
                                                    h.at("seed").get<std::uint64_t>());
  Rng rng(0);
  m->projection = nn::Linear("proj", m->vision->encoder_config().token_dim(), m->lm->config().d_model, rng);
  m->weights.mode = loss_mode_from_string(h.at("mode").get<std::string>());
  m->weights.ce = h.at("lambda_ce").get<double>();
  m->weights.align = h.at("lambda_align").get<double>();
  m->prompt_ids = m->tokenizer.encode(h.at("prompt").get<std::string>());
  nn::load_parameters(file, m->trainable());
  return m;
}

}  // namespace bustr::lm
