#include "doctest.h"

#include "bustr/cli/run.hpp"
#include "bustr/corpus/io.hpp"
#include "bustr/error.hpp"
#include "bustr/util.hpp"

#include <cstdlib>
#include <fstream>

using namespace bustr;
using namespace bustr::cli;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::usage;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("bustr_cli_" + name);
  fs::remove_all(p);
  return p;
}

nlohmann::json tiny_run(const fs::path& corpus, const fs::path& out) {
  return {{"dataset", (fs::path(BUSTR_DATA_DIR) / "breast.json").string()},
          {"corpus_dir", corpus.string()},
          {"output_dir", out.string()},
          {"seed", 5},
          {"folds", 2},
          {"stage1", {{"epochs", 2}, {"lr", 1e-3}}},
          {"lm", {{"epochs", 1}}},
          {"lm_reports", 50},
          {"lm_heldout", 2},
          {"stage2", {{"epochs", 1}, {"lr", 1e-3}}}};
}

}  // namespace

TEST_CASE("apply_override_nests_and_types") {
  nlohmann::json j = {{"stage2", {{"lr", 1e-4}}}};
  apply_override(j, "stage2.lr=0.001");
  apply_override(j, "loss.mode=max");
  apply_override(j, "folds=3");
  CHECK(j["stage2"]["lr"].get<double>() == 0.001);
  CHECK(j["loss"]["mode"] == "max");
  CHECK(j["folds"].is_number_integer());
  CHECK(code_of([&] { apply_override(j, "no_equals"); }) == ErrorCode::usage);
  CHECK(code_of([&] { apply_override(j, "=3"); }) == ErrorCode::usage);
}

TEST_CASE("run_config_seed_precedence_and_paths") {
  nlohmann::json j = {{"dataset", "breast.json"}, {"corpus_dir", "c"}, {"seed", 9}};
  const fs::path base = BUSTR_DATA_DIR;
  ::setenv("BUSTR_SEED", "4", 1);
  CHECK(run_config_from_json(j, base, 11).seed == 11);
  CHECK(run_config_from_json(j, base, std::nullopt).seed == 9);
  j.erase("seed");
  CHECK(run_config_from_json(j, base, std::nullopt).seed == 4);
  ::unsetenv("BUSTR_SEED");
  CHECK(code_of([&] { run_config_from_json(j, base, std::nullopt); }) == ErrorCode::usage);

  const auto rc = run_config_from_json(j, base, 1);
  CHECK(rc.corpus_dir == base / "c");
  CHECK(rc.stage1.seed == 1);
  CHECK(rc.stage2.epochs == 25);
  CHECK(rc.terms == base / "clinical_terms.txt");

  j["dataset"] = "busbra.json";
  CHECK(run_config_from_json(j, base, 1).stage2.epochs == 35);
  j["stage2"] = {{"epochs", 7}};
  CHECK(run_config_from_json(j, base, 1).stage2.epochs == 7);

  j["loss"] = {{"mode", "min"}};
  CHECK(code_of([&] { run_config_from_json(j, base, 1); }) == ErrorCode::invalid_config);
  j.erase("loss");
  j["folds"] = 1;
  CHECK(code_of([&] { run_config_from_json(j, base, 1); }) == ErrorCode::invalid_config);
  j.erase("folds");
  j.erase("dataset");
  CHECK(code_of([&] { run_config_from_json(j, base, 1); }) == ErrorCode::usage);
}

TEST_CASE("run_config_json_round_trip") {
  const auto rc = run_config_from_json(tiny_run("c", "o"), ".", std::nullopt);
  const auto back = run_config_from_json(to_json(rc), ".", std::nullopt);
  CHECK(to_json(back) == to_json(rc));
}

TEST_CASE("output_dir_needs_force") {
  const auto dir = scratch("out");
  prepare_output_dir(dir, false);
  write_text_file((dir / "x").string(), "x");
  CHECK(code_of([&] { prepare_output_dir(dir, false); }) == ErrorCode::usage);
  prepare_output_dir(dir, true);
  CHECK(fs::is_empty(dir));
  fs::remove_all(dir);
}

TEST_CASE("ablation_rows_and_modes") {
  const auto v = ablation_variants({0.5, 0.5, lm::LossMode::weighted_sum});
  std::vector<std::string> names;
  for (const auto& x : v) names.push_back(x.name);
  CHECK(names == std::vector<std::string>{"Base", "VisionOnly", "LossOnly", "CE+Cos", "CE*Cos", "mean", "max"});
  CHECK_FALSE(v[0].descriptor_encoder);
  CHECK(v[0].weights.align == 0.0);
  CHECK(v[1].descriptor_encoder);
  CHECK(v[1].weights.align == 0.0);
  CHECK_FALSE(v[2].descriptor_encoder);
  CHECK(v[2].weights.align > 0.0);
  CHECK(v[3].weights.mode == lm::LossMode::sum);
  CHECK(v[4].weights.mode == lm::LossMode::product);
  CHECK(v[5].weights.mode == lm::LossMode::mean);
  CHECK(v[6].weights.mode == lm::LossMode::max);
}

TEST_CASE("exit_codes") {
  CHECK(exit_code_for(ErrorCode::usage) == 2);
  CHECK(exit_code_for(ErrorCode::invalid_config) == 2);
  CHECK(exit_code_for(ErrorCode::missing_file) == 3);
  CHECK(exit_code_for(ErrorCode::schema_mismatch) == 3);
  CHECK(exit_code_for(ErrorCode::diverged_loss) == 4);
}

TEST_CASE("synth_is_reproducible") {
  const auto cfg = schema::breast_config();
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  report::TemplateRealizer r;
  const auto da = synth(cfg, 12, 3, 2, a, r, false);
  CHECK(synth(cfg, 12, 3, 2, b, r, false) == da);
  CHECK(code_of([&] { synth(cfg, 12, 3, 2, a, r, false); }) == ErrorCode::usage);
  CHECK(synth(cfg, 12, 3, 2, a, r, true) == da);
  CHECK(code_of([&] { synth(cfg, 0, 3, 2, scratch("synth_c"), r, false); }) == ErrorCode::usage);
  const auto c = corpus::load_corpus(a);
  CHECK(c.samples.size() == 12);
  for (const auto& s : c.samples) CHECK(s.report.has_value());
  CHECK(corpus::load_folds(a).k == 2);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("train_eval_generate_pipeline") {
  const auto cfg = schema::breast_config();
  const auto corpus_dir = scratch("corpus"), out_a = scratch("run_a"), out_b = scratch("run_b");
  synth(cfg, 12, 8, 2, corpus_dir, report::TemplateRealizer(), false);

  auto rc = run_config_from_json(tiny_run(corpus_dir, out_a), ".", std::nullopt);
  CHECK(code_of([&] { cmd_eval(rc, false); }) == ErrorCode::missing_file);
  cmd_train(rc, false);
  for (int f = 0; f < 2; ++f) {
    const auto dir = out_a / ("fold" + std::to_string(f));
    CHECK(fs::exists(dir / "stage1.ckpt"));
    CHECK(fs::exists(dir / "stage2.ckpt"));
  }
  CHECK_FALSE(fs::exists(out_a / "fold2"));
  CHECK(code_of([&] { cmd_train(rc, false); }) == ErrorCode::usage);

  auto rc_b = rc;
  rc_b.output_dir = out_b;
  cmd_train(rc_b, false);
  for (int f = 0; f < 2; ++f) {
    const auto log = "fold" + std::to_string(f) + "/log.json";
    CHECK(read_text_file((out_a / log).string()) == read_text_file((out_b / log).string()));
  }

  cmd_eval(rc, false);
  const auto results = out_a / "results";
  for (const char* f : {"nlg.csv", "ce.csv", "summary.md", "records.json"}) CHECK(fs::exists(results / f));
  CHECK(load_records(results / "records.json").size() == 2);
  cmd_eval(rc_b, false);
  CHECK(read_text_file((results / "nlg.csv").string()) == read_text_file((out_b / "results" / "nlg.csv").string()));

  const auto loaded = corpus::load_corpus(corpus_dir);
  const auto image = corpus_dir / "images" / (loaded.samples[0].id + ".png");
  const auto text = cmd_generate(out_a / "fold0", image);
  CHECK(text == cmd_generate(out_a / "fold0", image));
  CHECK(code_of([&] { cmd_generate(out_a / "fold0", corpus_dir / "none.png"); }) == ErrorCode::missing_file);

  rc.corpus_dir = scratch("missing");
  CHECK(code_of([&] { cmd_train(rc, true); }) == ErrorCode::missing_file);
  for (const auto& d : {corpus_dir, out_a, out_b}) fs::remove_all(d);
}
