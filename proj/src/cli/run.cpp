#include "bustr/cli/run.hpp"

#include "bustr/corpus/folds.hpp"
#include "bustr/corpus/image.hpp"
#include "bustr/corpus/io.hpp"
#include "bustr/error.hpp"
#include "bustr/eval/metrics.hpp"
#include "bustr/util.hpp"

#include <cstdlib>
#include <iostream>
#include <sstream>

namespace bustr::cli {

using schema::DescriptorKind;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string part;
  std::istringstream in(s);
  while (std::getline(in, part, sep)) out.push_back(part);
  return out;
}

void log_line(const std::string& msg) { std::cerr << "[bustr] " << msg << std::endl; }

nlohmann::json read_json(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::missing_file, path.string() + " not found");
  try {
    return nlohmann::json::parse(read_text_file(path.string()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_config, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text_file(path.string(), j.dump(2) + "\n"); }

std::unique_ptr<report::ReportRealizer> make_realizer(const RunConfig& rc) {
  if (rc.templates) return std::make_unique<report::TemplateRealizer>(report::TemplateBank::load(rc.templates->string()));
  return std::make_unique<report::TemplateRealizer>();
}

fs::path fold_dir(const RunConfig& rc, int fold) { return rc.output_dir / ("fold" + std::to_string(fold)); }

}  // namespace

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) fail(ErrorCode::usage, "override '" + assignment + "' is not key=value");
  const auto keys = split(assignment.substr(0, eq), '.');
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json* node = &j;
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    if (!node->contains(keys[i]) || !(*node)[keys[i]].is_object()) (*node)[keys[i]] = nlohmann::json::object();
    node = &(*node)[keys[i]];
  }
  (*node)[keys.back()] = value;
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("BUSTR_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') fail(ErrorCode::usage, "BUSTR_SEED is not a number");
  return v;
}

RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base,
                               std::optional<std::uint64_t> seed_override) {
  RunConfig rc;
  try {
    if (seed_override) {
      rc.seed = *seed_override;
    } else if (j.contains("seed")) {
      rc.seed = j.at("seed").get<std::uint64_t>();
    } else if (auto s = env_seed()) {
      rc.seed = *s;
    } else {
      fail(ErrorCode::usage, "no seed: set \"seed\", pass --seed or export BUSTR_SEED");
    }
    if (!j.contains("dataset")) fail(ErrorCode::usage, "run config needs \"dataset\"");
    rc.dataset = resolve(base, j.at("dataset").get<std::string>());
    if (j.contains("corpus_dir")) rc.corpus_dir = resolve(base, j.at("corpus_dir").get<std::string>());
    if (j.contains("output_dir")) rc.output_dir = resolve(base, j.at("output_dir").get<std::string>());
    rc.folds = j.value("folds", rc.folds);
    if (j.contains("encoder")) rc.encoder = vision::encoder_config_from_json(j.at("encoder"));
    if (j.contains("stage1")) rc.stage1 = vision::stage1_hyper_from_json(j.at("stage1"));
    rc.stage1.seed = rc.seed;
    if (j.contains("lm")) rc.lm = lm::lm_hyper_from_json(j.at("lm"));
    rc.lm.seed = rc.seed;
    rc.lm_reports = j.value("lm_reports", rc.lm_reports);
    rc.lm_heldout = j.value("lm_heldout", rc.lm_heldout);
    const auto cfg = schema::load_config(rc.dataset);
    rc.stage2.epochs = lm::default_stage2_epochs(cfg);
    if (j.contains("stage2")) {
      nlohmann::json s2 = lm::to_json(rc.stage2);
      s2.update(j.at("stage2"));
      rc.stage2 = lm::stage2_hyper_from_json(s2);
    }
    rc.stage2.seed = rc.seed;
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      rc.loss.mode = lm::loss_mode_from_string(l.value("mode", std::string(lm::to_string(rc.loss.mode))));
      rc.loss.ce = l.value("lambda_ce", rc.loss.ce);
      rc.loss.align = l.value("lambda_align", rc.loss.align);
    }
    if (rc.loss.ce < 0 || rc.loss.align < 0) fail(ErrorCode::invalid_config, "loss weights must be non-negative");
    rc.terms = j.contains("terms") ? resolve(base, j.at("terms").get<std::string>())
                                   : fs::path(BUSTR_DATA_DIR) / "clinical_terms.txt";
    if (j.contains("templates")) rc.templates = resolve(base, j.at("templates").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_config, std::string("run config: ") + e.what());
  }
  if (rc.folds < 2) fail(ErrorCode::invalid_config, "folds must be at least 2");
  if (rc.lm_reports < 50 || rc.lm_heldout < 1) fail(ErrorCode::invalid_config, "lm_reports >= 50 and lm_heldout >= 1");
  return rc;
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed_override) {
  nlohmann::json j = read_json(path);
  for (const auto& o : overrides) apply_override(j, o);
  return run_config_from_json(j, path.parent_path(), seed_override);
}

nlohmann::json to_json(const RunConfig& rc) {
  nlohmann::json j = {{"dataset", rc.dataset.string()},
                      {"corpus_dir", rc.corpus_dir.string()},
                      {"output_dir", rc.output_dir.string()},
                      {"seed", rc.seed},
                      {"folds", rc.folds},
                      {"encoder", vision::to_json(rc.encoder)},
                      {"stage1", vision::to_json(rc.stage1)},
                      {"lm", lm::to_json(rc.lm)},
                      {"lm_reports", rc.lm_reports},
                      {"lm_heldout", rc.lm_heldout},
                      {"stage2", lm::to_json(rc.stage2)},
                      {"loss",
                       {{"mode", std::string(lm::to_string(rc.loss.mode))},
                        {"lambda_ce", rc.loss.ce},
                        {"lambda_align", rc.loss.align}}},
                      {"terms", rc.terms.string()}};
  if (rc.templates) j["templates"] = rc.templates->string();
  return j;
}

void prepare_output_dir(const fs::path& dir, bool force) {
  if (dir.empty()) fail(ErrorCode::usage, "no output directory given");
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) fail(ErrorCode::usage, dir.string() + " is not empty; pass --force to overwrite");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void attach_reports(std::vector<corpus::BusSample>& samples, const schema::DatasetConfig& cfg,
                    const report::ReportRealizer& realizer) {
  for (auto& s : samples) {
    const auto prompt = report::format_prompt(schema::validate_descriptors(s.descriptors, cfg), s.radiomics, s.id);
    s.report = report::realize_report(prompt, realizer).full_text();
  }
}

std::string synth(const schema::DatasetConfig& cfg, int n, std::uint64_t seed, int folds, const fs::path& out,
                  const report::ReportRealizer& realizer, bool force) {
  if (n < 1) fail(ErrorCode::usage, "--n must be positive");
  if (folds < 2 || folds > n) fail(ErrorCode::usage, "--folds must lie in [2, n]");
  prepare_output_dir(out, force);
  corpus::Corpus c{cfg, corpus::sample_corpus(cfg, n, seed)};
  attach_reports(c.samples, cfg, realizer);
  corpus::save_corpus(c, out);
  std::vector<std::string> ids, labels;
  for (const auto& s : c.samples) {
    ids.push_back(s.id);
    labels.push_back(s.descriptors.get(DescriptorKind::birads).value_or(""));
  }
  corpus::save_folds(corpus::make_folds(ids, labels, folds, seed), out);
  return corpus::corpus_digest(out);
}

std::vector<Variant> ablation_variants(const lm::LossWeights& full) {
  const lm::LossWeights ce_only{1.0, 0.0, lm::LossMode::weighted_sum};
  return {{"Base", false, ce_only},
          {"VisionOnly", true, ce_only},
          {"LossOnly", false, full},
          {"CE+Cos", true, {full.ce, full.align, lm::LossMode::sum}},
          {"CE*Cos", true, {full.ce, full.align, lm::LossMode::product}},
          {"mean", true, {full.ce, full.align, lm::LossMode::mean}},
          {"max", true, {full.ce, full.align, lm::LossMode::max}}};
}

std::vector<FoldData> LoadedRun::folds() const {
  std::map<std::string, const corpus::BusSample*> by_id;
  for (const auto& s : corpus.samples) by_id[s.id] = &s;
  const auto lookup = [&](const std::vector<std::string>& ids) {
    std::vector<const corpus::BusSample*> out;
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) fail(ErrorCode::schema_mismatch, "fold plan names unknown sample " + id);
      out.push_back(it->second);
    }
    return out;
  };
  std::vector<FoldData> out;
  for (std::size_t i = 0; i < plan.folds.size(); ++i) {
    out.push_back({static_cast<int>(i), lookup(plan.folds[i].train), lookup(plan.folds[i].val),
                   lookup(plan.folds[i].test)});
  }
  return out;
}

LoadedRun load_run_data(const RunConfig& rc) {
  LoadedRun run;
  run.config = schema::load_config(rc.dataset);
  if (rc.corpus_dir.empty()) fail(ErrorCode::usage, "no corpus directory given");
  run.corpus = corpus::load_corpus(rc.corpus_dir);
  if (vision::config_hash(run.corpus.config) != vision::config_hash(run.config)) {
    fail(ErrorCode::schema_mismatch, "corpus config differs from " + rc.dataset.string());
  }
  for (const auto& s : run.corpus.samples) {
    if (!s.report) fail(ErrorCode::missing_label, "sample " + s.id + " has no report");
  }
  bool have_plan = fs::exists(rc.corpus_dir / "folds.json");
  if (have_plan) {
    run.plan = corpus::load_folds(rc.corpus_dir);
    have_plan = run.plan.k == rc.folds;
  }
  if (!have_plan) {
    std::vector<std::string> ids, labels;
    for (const auto& s : run.corpus.samples) {
      ids.push_back(s.id);
      labels.push_back(s.descriptors.get(DescriptorKind::birads).value_or(""));
    }
    run.plan = corpus::make_folds(ids, labels, rc.folds, rc.seed);
  }
  return run;
}

lm::PretrainResult pretrain_run_lm(const RunConfig& rc, const schema::DatasetConfig& cfg, const fs::path& dir) {
  auto samples = corpus::sample_corpus(cfg, rc.lm_reports + rc.lm_heldout, mix_seed(rc.seed, 0x6c6d));
  const auto realizer = make_realizer(rc);
  attach_reports(samples, cfg, *realizer);
  const auto* tpl = dynamic_cast<const report::TemplateRealizer*>(realizer.get());
  std::vector<lm::LmExample> examples;
  for (const auto& s : samples) examples.push_back(lm::make_lm_example(s, *tpl));
  const std::span<const lm::LmExample> all(examples);
  const auto terms = lm::load_terms(rc.terms);
  log_line("pretraining LM on " + std::to_string(rc.lm_reports) + " reports");
  auto result = lm::pretrain_lm(all.first(static_cast<std::size_t>(rc.lm_reports)),
                                all.subspan(static_cast<std::size_t>(rc.lm_reports)), terms, rc.lm);
  log_line("LM held-out cross-entropy " + format_fixed(result.heldout_ce, 4));
  fs::create_directories(dir);
  lm::save_lm(*result.lm, result.tokenizer, dir / "lm.ckpt");
  result.tokenizer.save(dir / "tokenizer.json");
  nlohmann::json log = nlohmann::json::array();
  for (const auto& l : result.log) {
    log.push_back({{"epoch", l.epoch}, {"loss", l.loss}, {"ce", l.ce}, {"align", l.align},
                   {"token_accuracy", l.token_accuracy}});
  }
  write_json(dir / "log.json", {{"heldout_ce", result.heldout_ce}, {"epochs", log}});
  return result;
}

FoldModels train_variant(const RunConfig& rc, const FoldData& fold, const vision::VisionModel& stage1,
                         const std::vector<vision::EpochLog>& stage1_log, std::shared_ptr<lm::FrozenLM> lm,
                         const lm::Tokenizer& tok, const Variant& variant) {
  std::unique_ptr<vision::VisionModel> plain;
  if (!variant.descriptor_encoder) {
    plain = std::make_unique<vision::VisionModel>(stage1.config(), stage1.encoder_config(),
                                                  mix_seed(rc.seed, 0x706c + static_cast<std::uint64_t>(fold.fold)));
  }
  lm::Stage2Hyper hp = rc.stage2;
  hp.seed = mix_seed(rc.seed, 0x5332 + static_cast<std::uint64_t>(fold.fold));
  auto r = lm::train_stage2(fold.train, fold.val, plain ? *plain : stage1, stage1, std::move(lm), tok, hp,
                            variant.weights);
  FoldModels out;
  out.model = std::move(r.model);
  out.stage1_log = stage1_log;
  out.stage2_log = std::move(r.log);
  return out;
}

eval::MetricsRecord evaluate_fold(const lm::ReportModel& model, const FoldData& fold,
                                  const schema::DatasetConfig& cfg, std::vector<std::string>* generated) {
  std::vector<std::string> hyps, refs;
  std::vector<schema::DescriptorSet> parsed, truth;
  for (const auto* s : fold.test) {
    hyps.push_back(lm::generate_report(s->image, model).full_text());
    refs.push_back(*s->report);
    parsed.push_back(eval::parse_report(hyps.back(), cfg));
    truth.push_back(s->descriptors);
  }
  eval::MetricsRecord rec;
  rec.fold = fold.fold;
  rec.nlg = eval::nlg_scores(hyps, refs);
  for (const auto& [kind, score] : eval::ce_metrics(parsed, truth, cfg)) rec.ce[std::string(schema::to_string(kind))] = score;
  if (generated) *generated = hyps;
  return rec;
}

nlohmann::json fold_log_json(const FoldModels& m) {
  nlohmann::json s1 = nlohmann::json::array(), s2 = nlohmann::json::array();
  for (const auto& l : m.stage1_log) s1.push_back({{"epoch", l.epoch}, {"train_loss", l.train_loss}, {"val_loss", l.val_loss}});
  for (const auto& l : m.stage2_log) {
    s2.push_back({{"epoch", l.epoch},
                  {"train_loss", l.loss},
                  {"ce", l.ce},
                  {"align", l.align},
                  {"token_accuracy", l.token_accuracy},
                  {"val_loss", l.val_loss}});
  }
  return {{"stage1", s1}, {"stage2", s2}};
}

std::map<std::string, std::vector<double>> curves_from_log(const nlohmann::json& log) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& e : log.at("stage1")) {
    out["stage1_train_loss"].push_back(e.at("train_loss").get<double>());
    out["stage1_val_loss"].push_back(e.at("val_loss").get<double>());
  }
  for (const auto& e : log.at("stage2")) {
    out["stage2_train_loss"].push_back(e.at("train_loss").get<double>());
    out["stage2_val_loss"].push_back(e.at("val_loss").get<double>());
    out["stage2_token_accuracy"].push_back(e.at("token_accuracy").get<double>());
  }
  return out;
}

void save_records(const std::vector<eval::MetricsRecord>& records, const fs::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : records) j.push_back(eval::to_json(r));
  write_json(path, j);
}

std::vector<eval::MetricsRecord> load_records(const fs::path& path) {
  std::vector<eval::MetricsRecord> out;
  for (const auto& r : read_json(path)) out.push_back(eval::record_from_json(r));
  return out;
}

namespace {

struct TrainedFold {
  std::unique_ptr<vision::VisionModel> stage1;
  std::vector<vision::EpochLog> log;
};

TrainedFold train_fold_stage1(const RunConfig& rc, const LoadedRun& run, const FoldData& fold) {
  vision::Stage1Hyper hp = rc.stage1;
  hp.seed = mix_seed(rc.seed, 0x5331 + static_cast<std::uint64_t>(fold.fold));
  auto r = vision::train_stage1(fold.train, fold.val, run.config, hp, rc.encoder);
  log_line("fold " + std::to_string(fold.fold) + " stage 1 best epoch " + std::to_string(r.best_epoch));
  return {std::move(r.model), std::move(r.log)};
}

}  // namespace

void cmd_train(const RunConfig& rc, bool force) {
  const LoadedRun run = load_run_data(rc);
  prepare_output_dir(rc.output_dir, force);
  write_json(rc.output_dir / "run.json", to_json(rc));
  auto pre = pretrain_run_lm(rc, run.config, rc.output_dir / "lm");
  std::shared_ptr<lm::FrozenLM> lm(std::move(pre.lm));
  const Variant full{"BUSTR", true, rc.loss};
  for (const auto& fold : run.folds()) {
    auto s1 = train_fold_stage1(rc, run, fold);
    auto m = train_variant(rc, fold, *s1.stage1, s1.log, lm, pre.tokenizer, full);
    const fs::path dir = fold_dir(rc, fold.fold);
    lm::save_report_model(*m.model, dir);
    write_json(dir / "log.json", fold_log_json(m));
    log_line("fold " + std::to_string(fold.fold) + " stage 2 final loss " +
             format_fixed(m.stage2_log.back().loss, 4));
  }
}

void cmd_eval(const RunConfig& rc, bool force) {
  const LoadedRun run = load_run_data(rc);
  const auto folds = run.folds();
  for (const auto& fold : folds) {
    if (!fs::exists(fold_dir(rc, fold.fold) / "stage2.ckpt")) {
      fail(ErrorCode::missing_file, "no checkpoint for fold " + std::to_string(fold.fold) + " in " +
                                        rc.output_dir.string() + "; run `bustr train` first");
    }
  }
  const fs::path out = rc.output_dir / "results";
  prepare_output_dir(out, force);
  fs::create_directories(out / "generated");
  std::vector<eval::MetricsRecord> records;
  for (const auto& fold : folds) {
    const fs::path dir = fold_dir(rc, fold.fold);
    const auto model = lm::load_report_model(dir);
    std::vector<std::string> generated;
    auto rec = evaluate_fold(*model, fold, run.config, &generated);
    if (fs::exists(dir / "log.json")) rec.curves = curves_from_log(read_json(dir / "log.json"));
    std::string lines;
    for (std::size_t i = 0; i < generated.size(); ++i) {
      lines += nlohmann::json({{"id", fold.test[i]->id}, {"generated", generated[i]}, {"reference", *fold.test[i]->report}})
                   .dump() +
               "\n";
    }
    write_text_file((out / "generated" / ("fold" + std::to_string(fold.fold) + ".jsonl")).string(), lines);
    log_line("fold " + std::to_string(fold.fold) + " BLEU-4 " + format_fixed(rec.nlg.bleu4, 4));
    records.push_back(std::move(rec));
  }
  eval::emit_results(records, out);
  save_records(records, out / "records.json");
}

void cmd_compare(const fs::path& run_a, const fs::path& run_b, const fs::path& out, bool force) {
  const auto records_of = [](const fs::path& p) {
    return load_records(fs::exists(p / "records.json") ? p / "records.json" : p / "results" / "records.json");
  };
  const auto a = records_of(run_a), b = records_of(run_b);
  if (out.empty()) fail(ErrorCode::usage, "--compare needs --out");
  if (fs::exists(out / "significance.csv") && !force) {
    fail(ErrorCode::usage, (out / "significance.csv").string() + " exists; pass --force to overwrite");
  }
  fs::create_directories(out);
  eval::emit_significance(a, b, run_a.filename().string(), run_b.filename().string(), out);
}

void cmd_ablate(const RunConfig& rc, bool force) {
  const LoadedRun run = load_run_data(rc);
  const fs::path out = rc.output_dir / "ablation";
  prepare_output_dir(out, force);
  write_json(out / "run.json", to_json(rc));
  auto pre = pretrain_run_lm(rc, run.config, out / "lm");
  std::shared_ptr<lm::FrozenLM> lm(std::move(pre.lm));

  auto variants = ablation_variants(rc.loss);
  // The mean row must coincide with weighted_sum at 0.5/0.5 on the same seeds.
  const Variant check{"weighted_sum@0.5", true, {0.5, 0.5, lm::LossMode::weighted_sum}};
  std::map<std::string, std::vector<eval::MetricsRecord>> records;
  std::map<std::string, std::vector<double>> final_losses;
  for (const auto& fold : run.folds()) {
    auto s1 = train_fold_stage1(rc, run, fold);
    for (const auto& v : variants) {
      auto m = train_variant(rc, fold, *s1.stage1, s1.log, lm, pre.tokenizer, v);
      auto rec = evaluate_fold(*m.model, fold, run.config);
      rec.curves = curves_from_log(fold_log_json(m));
      records[v.name].push_back(std::move(rec));
      final_losses[v.name].push_back(m.stage2_log.back().loss);
      log_line("fold " + std::to_string(fold.fold) + " " + v.name + " BLEU-4 " +
               format_fixed(records[v.name].back().nlg.bleu4, 4));
    }
    auto m = train_variant(rc, fold, *s1.stage1, s1.log, lm, pre.tokenizer, check);
    records[check.name].push_back(evaluate_fold(*m.model, fold, run.config));
    final_losses[check.name].push_back(m.stage2_log.back().loss);
  }

  std::ostringstream csv, md;
  csv << "row,encoder,loss_mode,lambda_ce,lambda_align";
  md << "| row | encoder | loss |";
  for (const auto& c : eval::kNlgColumns) {
    csv << "," << c;
    md << " " << c << " |";
  }
  csv << "\n";
  md << "\n|---|---|---|";
  for (std::size_t i = 0; i < eval::kNlgColumns.size(); ++i) md << "---|";
  md << "\n";
  const auto mean_of = [&](const std::string& name, const std::string& col) {
    double m = 0.0;
    for (const auto& r : records.at(name)) m += eval::nlg_value(r.nlg, col);
    return m / static_cast<double>(records.at(name).size());
  };
  for (const auto& v : variants) {
    const std::string enc = v.descriptor_encoder ? "multi-head" : "plain";
    const std::string mode(lm::to_string(v.weights.mode));
    csv << v.name << "," << enc << "," << mode << "," << format_fixed(v.weights.ce, 4) << ","
        << format_fixed(v.weights.align, 4);
    md << "| " << v.name << " | " << enc << " | " << mode << " |";
    for (const auto& c : eval::kNlgColumns) {
      csv << "," << format_fixed(mean_of(v.name, c), 6);
      md << " " << format_fixed(mean_of(v.name, c), 3) << " |";
    }
    csv << "\n";
    md << "\n";
    eval::emit_results(records.at(v.name), out / v.name);
    save_records(records.at(v.name), out / v.name / "records.json");
  }
  write_text_file((out / "ablation.csv").string(), csv.str());
  write_text_file((out / "ablation.md").string(), "# Ablation grid (fold means)\n\n" + md.str());

  std::ostringstream chk;
  chk << "quantity,mean,weighted_sum@0.5,identical\n";
  bool all_same = true;
  for (std::size_t f = 0; f < final_losses.at("mean").size(); ++f) {
    const double a = final_losses.at("mean")[f], b = final_losses.at(check.name)[f];
    all_same = all_same && a == b;
    chk << "fold" << f << "_final_loss," << format_fixed(a, 12) << "," << format_fixed(b, 12) << "," << (a == b) << "\n";
  }
  for (const auto& c : eval::kNlgColumns) {
    const double a = mean_of("mean", c), b = mean_of(check.name, c);
    all_same = all_same && a == b;
    chk << c << "," << format_fixed(a, 12) << "," << format_fixed(b, 12) << "," << (a == b) << "\n";
  }
  write_text_file((out / "ablation_check.csv").string(), chk.str());
  log_line(std::string("mean row ") + (all_same ? "matches" : "DIFFERS FROM") + " weighted_sum at 0.5");
}

std::string cmd_generate(const fs::path& model_dir, const fs::path& image) {
  const auto model = lm::load_report_model(model_dir);
  if (!fs::exists(image)) fail(ErrorCode::missing_file, image.string() + " not found");
  corpus::BusImage img;
  img.pixels = corpus::read_png(image);
  const int side = model->vision->encoder_config().side;
  if (img.rows() != side || img.cols() != side) img = corpus::pad_and_resize(img, side);
  return lm::generate_report(img, *model).full_text();
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::usage:
    case ErrorCode::invalid_config: return 2;
    case ErrorCode::diverged_loss: return 4;
    default: return 3;
  }
}

}  // namespace bustr::cli
