// bustr: corpus synthesis, training, generation, evaluation and ablation.

#include "bustr/cli/run.hpp"
#include "bustr/error.hpp"
#include "bustr/schema/descriptors.hpp"
#include "bustr/util.hpp"

#include <iostream>
#include <memory>

#include "CLI11.hpp"

namespace fs = std::filesystem;
using namespace bustr;

namespace {

struct RunFlags {
  std::string run;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  std::string corpus, out;
  bool force = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool need_run = true) {
  auto* opt = cmd->add_option("--run", f.run, "run configuration JSON")->check(CLI::ExistingFile);
  if (need_run) opt->required();
  cmd->add_option("--seed", f.seed, "seed (overrides the config and BUSTR_SEED)");
  cmd->add_option("--set", f.sets, "override a config key, e.g. --set stage2.lr=1e-4");
  cmd->add_option("--corpus", f.corpus, "corpus directory");
  cmd->add_option("--out", f.out, "run output directory");
  cmd->add_flag("--force", f.force, "overwrite a non-empty output directory");
}

cli::RunConfig resolve_run(const RunFlags& f) {
  auto rc = cli::load_run_config(f.run, f.sets, f.seed);
  if (!f.corpus.empty()) rc.corpus_dir = f.corpus;
  if (!f.out.empty()) rc.output_dir = f.out;
  if (rc.output_dir.empty()) fail(ErrorCode::usage, "no output directory: set \"output_dir\" or pass --out");
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Breast ultrasound report generation"};
  app.require_subcommand(1);

  std::string config, templates, realizer_cmd, out;
  int n = 0, folds = 5;
  std::optional<std::uint64_t> synth_seed;
  bool force = false;
  auto* synth = app.add_subcommand("synth", "synthesize a corpus with reports and a fold plan");
  synth->add_option("--config", config, "dataset configuration JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("--n", n, "number of samples")->required();
  synth->add_option("--seed", synth_seed, "seed (falls back to BUSTR_SEED)");
  synth->add_option("--out", out, "corpus directory")->required();
  synth->add_option("--folds", folds, "fold count")->capture_default_str();
  synth->add_option("--templates", templates, "template bank JSON")->check(CLI::ExistingFile);
  synth->add_option("--realizer-cmd", realizer_cmd, "external realizer command (prompt on stdin, report on stdout)");
  synth->add_flag("--force", force, "overwrite a non-empty output directory");

  RunFlags train_flags, eval_flags, ablate_flags;
  auto* train = app.add_subcommand("train", "stage 1 and stage 2 on every fold");
  add_run_flags(train, train_flags);

  auto* eval = app.add_subcommand("eval", "generate on test folds and score, or compare two runs");
  add_run_flags(eval, eval_flags, false);
  std::vector<std::string> compare;
  eval->add_option("--compare", compare, "paired t-tests between two run or results directories")->expected(2);

  auto* ablate = app.add_subcommand("ablate", "encoder and loss-mode ablation grid");
  add_run_flags(ablate, ablate_flags);

  std::string model_dir, image, gen_out;
  auto* generate = app.add_subcommand("generate", "write a report for one image");
  generate->add_option("--model", model_dir, "fold checkpoint directory")->required();
  generate->add_option("--image", image, "8-bit grayscale PNG")->required();
  generate->add_option("--out", gen_out, "write the report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      if (!synth_seed) synth_seed = cli::env_seed();
      if (!synth_seed) fail(ErrorCode::usage, "no seed: pass --seed or export BUSTR_SEED");
      const auto cfg = schema::load_config(config);
      std::unique_ptr<report::ReportRealizer> realizer;
      if (!realizer_cmd.empty()) {
        realizer = std::make_unique<report::ExternalRealizer>(realizer_cmd);
      } else if (!templates.empty()) {
        realizer = std::make_unique<report::TemplateRealizer>(report::TemplateBank::load(templates));
      } else {
        realizer = std::make_unique<report::TemplateRealizer>();
      }
      std::cout << cli::synth(cfg, n, *synth_seed, folds, out, *realizer, force) << "\n";
    } else if (*train) {
      cli::cmd_train(resolve_run(train_flags), train_flags.force);
    } else if (*eval) {
      if (!compare.empty()) {
        cli::cmd_compare(compare[0], compare[1], eval_flags.out, eval_flags.force);
      } else {
        if (eval_flags.run.empty()) fail(ErrorCode::usage, "eval needs --run or --compare");
        cli::cmd_eval(resolve_run(eval_flags), eval_flags.force);
      }
    } else if (*ablate) {
      cli::cmd_ablate(resolve_run(ablate_flags), ablate_flags.force);
    } else if (*generate) {
      const std::string text = cli::cmd_generate(model_dir, image);
      if (gen_out.empty()) {
        std::cout << text << "\n";
      } else {
        write_text_file(gen_out, text + "\n");
      }
    }
  } catch (const Error& e) {
    std::cerr << "bustr: " << e.what() << "\n";
    return cli::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "bustr: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
