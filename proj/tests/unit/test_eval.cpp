#include "doctest.h"

#include "bustr/error.hpp"
#include "bustr/eval/metrics.hpp"
#include "bustr/eval/results.hpp"
#include "bustr/util.hpp"
#include "oracles.hpp"

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>
#include <unordered_map>

using namespace bustr;
using namespace bustr::eval;
using schema::DescriptorKind;
using testing::cider_oracle;
using testing::t_pvalue_oracle;

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

}  // namespace

TEST_CASE("tokenizer_rules") {
  CHECK(tokenize("The lesion measures 4.5 mm.") == Tokens{"the", "lesion", "measures", "4.5", "mm", "."});
  CHECK(tokenize("Non-circumscribed, BI-RADS 4A") == Tokens{"non-circumscribed", ",", "bi-rads", "4a"});
  CHECK(tokenize("complex cystic/solid") == Tokens{"complex", "cystic/solid"});
}

TEST_CASE("bleu_hand_cases") {
  const auto same = make_pair("a b c d", "a b c d");
  for (int k = 1; k <= 4; ++k) CHECK(bleu(same, k) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(bleu(make_pair("the the the", "the cat"), 1) - 1.0 / 3.0) < 1e-9);
  CHECK(bleu(make_pair("", "the cat"), 1) == 0.0);
  // brevity penalty: c = 2, r = 4 -> exp(1 - 2)
  CHECK(std::abs(bleu(make_pair("a b", "a b c d"), 1) - std::exp(-1.0)) < 1e-12);
}

TEST_CASE("bleu_is_monotone_in_order") {
  std::mt19937_64 rng(4);
  const char* words[] = {"a", "b", "c", "d", "e"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TokenizedPair> corpus;
    for (int i = 0; i < 3; ++i) {
      TokenizedPair p;
      for (int j = 0; j < 6 + static_cast<int>(rng() % 4); ++j) p.hypothesis.push_back(words[rng() % 5]);
      for (int j = 0; j < 6 + static_cast<int>(rng() % 4); ++j) p.reference.push_back(words[rng() % 5]);
      corpus.push_back(p);
    }
    for (int n = 1; n < 4; ++n) CHECK(bleu(corpus, n) >= bleu(corpus, n + 1) - 1e-15);
  }
}

TEST_CASE("rouge_l_hand_cases") {
  // LCS 3, P = R = 0.75 -> F = 0.75 for any beta
  CHECK(std::abs(rouge_l(make_pair("a b c d", "a c b d")) - 0.75) < 1e-9);
  CHECK(rouge_l(make_pair("a b", "a b")) == doctest::Approx(1.0));
  CHECK(rouge_l(make_pair("a b", "c d")) == 0.0);
  CHECK(rouge_l(make_pair("", "")) == 0.0);
  // P = 1, R = 0.5, beta^2 = 1.44: 2.44 * 0.5 / (0.5 + 1.44)
  CHECK(std::abs(rouge_l(make_pair("a b", "a b c d")) - 2.44 * 0.5 / 1.94) < 1e-12);
}

TEST_CASE("meteor_hand_cases") {
  CHECK(std::abs(meteor(make_pair("a b c d", "a b c d")) - (1.0 - 0.5 / 64.0)) < 1e-9);
  CHECK(meteor(make_pair("a b", "c d")) == 0.0);
  CHECK(std::abs(meteor(make_pair("a b", "b a")) - 0.5) < 1e-9);
}

TEST_CASE("cider_matches_oracle_and_guards") {
  const std::vector<std::pair<std::string, std::string>> pairs = {
      {"the mass is oval with circumscribed margins .", "the mass is oval with circumscribed margins ."},
      {"the lesion is hypoechoic .", "the lesion is anechoic ."},
      {"bi-rads 4a assessment here", "this corresponds to bi-rads 4a ."},
      {"posterior features : none .", "posterior acoustic features are none ."},
      {"a round mass", "the mass is round with indistinct margins ."},
      {"histology shows fibroadenoma .", "histology shows cyst ."},
      {"pathology is benign .", "the lesion is benign on pathology ."},
      {"the lesion measures 4.5 mm .", "the lesion measures 4.6 mm ."},
      {"irregular irregular irregular", "the mass is irregular ."},
      {"echogenicity is heterogeneous .", "echogenicity is heterogeneous ."},
  };
  std::vector<TokenizedPair> corpus;
  for (const auto& [h, r] : pairs) corpus.push_back(make_pair(h, r));
  CHECK(std::abs(cider(corpus) - cider_oracle(pairs)) < 1e-6);

  std::vector<TokenizedPair> self;
  for (const auto& s : {"alpha beta gamma delta", "epsilon zeta eta theta", "iota kappa lambda mu"}) {
    self.push_back(make_pair(s, s));
  }
  CHECK(cider(self) == doctest::Approx(10.0).epsilon(1e-12));
  std::vector<TokenizedPair> disjoint = {make_pair("x y z w", "a b c d"), make_pair("p q r s", "e f g h")};
  CHECK(cider(disjoint) == 0.0);
  CHECK(code_of([&] { cider({make_pair("a", "a")}); }) == ErrorCode::undefined_idf);
}

TEST_CASE("self_referenced_corpus_scores_one") {
  const std::vector<std::string> refs = {"the mass is oval with circumscribed margins .",
                                         "the lesion measures 4.5 mm in greatest diameter .",
                                         "this corresponds to bi-rads 4c and shadowing ."};
  const auto s = nlg_scores(refs, refs);
  for (const auto& c : kNlgColumns) {
    if (c == "cider") {
      CHECK(s.cider == doctest::Approx(10.0));
    } else if (c == "meteor") {
      CHECK(s.meteor > 0.99);
    } else {
      CHECK(nlg_value(s, c) == doctest::Approx(1.0));
    }
  }
  const auto z = nlg_scores({"x y z w", "p q r s"}, {"a b c d", "e f g h"});
  for (const auto& c : kNlgColumns) CHECK(nlg_value(z, c) == 0.0);
}

TEST_CASE("parse_report_rules") {
  const auto cfg = schema::breast_config();
  auto ds = parse_report("The mass is oval. Later it looks irregular.", cfg);
  CHECK(ds.get(DescriptorKind::shape) == "oval");
  CHECK_FALSE(ds.has(DescriptorKind::echogenicity));
  CHECK(ds.source == schema::DescriptorSource::parsed);
  ds = parse_report("Margins are non-circumscribed. BI-RADS 4c. It measures 7.5 mm.", cfg);
  CHECK(ds.get(DescriptorKind::margin_main) == "non-circumscribed");
  CHECK(ds.get(DescriptorKind::birads) == "4C");
  CHECK(ds.size_mm() == 7.5);
  ds = parse_report("Around the surrounding tissue.", cfg);
  CHECK_FALSE(ds.has(DescriptorKind::shape));
}

TEST_CASE("ce_metrics_trivial_cases") {
  const auto cfg = schema::busbra_config();
  std::vector<schema::DescriptorSet> truth(3), absent(3);
  const char* b[] = {"2", "4", "5"};
  for (int i = 0; i < 3; ++i) {
    truth[i].set(DescriptorKind::birads, b[i]);
    truth[i].set(DescriptorKind::pathology, i ? "malignant" : "benign");
  }
  for (const auto& [k, s] : ce_metrics(truth, truth, cfg)) {
    CHECK(s.precision == 1.0);
    CHECK(s.sensitivity == 1.0);
    CHECK(s.f1 == 1.0);
  }
  for (const auto& [k, s] : ce_metrics(absent, truth, cfg)) CHECK(s.sensitivity == 0.0);
  CHECK(code_of([&] { ce_metrics(absent, {truth[0]}, cfg); }) == ErrorCode::length_mismatch);
}

TEST_CASE("ce_metrics_swapped_class_toy") {
  const auto cfg = schema::busbra_config();
  std::vector<schema::DescriptorSet> truth(3), pred(3);
  truth[0].set(DescriptorKind::birads, "2");
  truth[1].set(DescriptorKind::birads, "2");
  truth[2].set(DescriptorKind::birads, "3");
  pred[0].set(DescriptorKind::birads, "2");
  pred[1].set(DescriptorKind::birads, "3");
  pred[2].set(DescriptorKind::birads, "3");
  // class 2: TP1 FN1 FP0 -> P1 S.5 F.6667 ; class 3: TP1 FP1 -> P.5 S1 F.6667
  const auto s = ce_metrics(pred, truth, cfg).at(DescriptorKind::birads);
  CHECK(s.precision == doctest::Approx(0.75));
  CHECK(s.sensitivity == doctest::Approx(0.75));
  CHECK(s.f1 == doctest::Approx(2.0 / 3.0));
  CHECK(s.accuracy == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("ce_metrics_equals_brute_force_tally") {
  const auto cfg = schema::busbra_config();
  const auto& vocab = cfg.vocabulary(DescriptorKind::birads).values();
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 20);
    std::vector<schema::DescriptorSet> truth(n), pred(n);
    for (int i = 0; i < n; ++i) {
      truth[i].set(DescriptorKind::birads, vocab[rng() % vocab.size()]);
      if (rng() % 5) pred[i].set(DescriptorKind::birads, vocab[rng() % vocab.size()]);
    }
    // confusion matrix with an extra "absent" column
    const int C = static_cast<int>(vocab.size());
    std::vector<std::vector<int>> cm(C, std::vector<int>(C + 1, 0));
    auto idx = [&](const std::string& v) {
      return static_cast<int>(std::find(vocab.begin(), vocab.end(), v) - vocab.begin());
    };
    for (int i = 0; i < n; ++i) {
      const int t = idx(*truth[i].get(DescriptorKind::birads));
      const auto p = pred[i].get(DescriptorKind::birads);
      cm[t][p ? idx(*p) : C]++;
    }
    double P = 0, S = 0, F = 0;
    int present = 0;
    for (int c = 0; c < C; ++c) {
      int row = 0, col = 0;
      for (int j = 0; j <= C; ++j) row += cm[c][j];
      for (int i = 0; i < C; ++i) col += cm[i][c];
      if (row == 0) continue;
      ++present;
      const double p = col ? static_cast<double>(cm[c][c]) / col : 0.0;
      const double s = static_cast<double>(cm[c][c]) / row;
      P += p;
      S += s;
      F += p + s > 0 ? 2 * p * s / (p + s) : 0.0;
    }
    const auto got = ce_metrics(pred, truth, cfg).at(DescriptorKind::birads);
    CHECK(got.precision == doctest::Approx(P / present).epsilon(1e-12));
    CHECK(got.sensitivity == doctest::Approx(S / present).epsilon(1e-12));
    CHECK(got.f1 == doctest::Approx(F / present).epsilon(1e-12));
  }
}

TEST_CASE("paired_ttest_cases") {
  const auto same = paired_ttest({1, 2, 3, 4, 5}, {1, 2, 3, 4, 5});
  CHECK(same.t == 0.0);
  CHECK(same.p == 1.0);
  const auto r = paired_ttest({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0});
  CHECK(std::abs(r.t - 3.0 / (std::sqrt(2.5) / std::sqrt(5.0))) < 1e-12);
  CHECK(std::abs(r.t - 4.2426) < 1e-4);
  CHECK(r.df == 4);
  CHECK(std::abs(r.p - t_pvalue_oracle(r.t, 4)) < 1e-8);
  CHECK(std::abs(r.p - 0.0132) < 1e-4);
  CHECK(code_of([] { paired_ttest({2, 3, 4}, {1, 2, 3}); }) == ErrorCode::zero_variance);
}

TEST_CASE("paired_ttest_antisymmetry") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(5), b(5);
    for (int i = 0; i < 5; ++i) {
      a[i] = g(rng);
      b[i] = g(rng);
    }
    const auto ab = paired_ttest(a, b), ba = paired_ttest(b, a);
    CHECK(ab.t == doctest::Approx(-ba.t).epsilon(1e-12));
    CHECK(ab.p == doctest::Approx(ba.p).epsilon(1e-12));
    CHECK(std::abs(ab.p - t_pvalue_oracle(ab.t, 4)) < 1e-7);
  }
}

TEST_CASE("emit_results_files_and_determinism") {
  const auto dir = std::filesystem::temp_directory_path() / "bustr_emit";
  std::filesystem::remove_all(dir);
  std::vector<MetricsRecord> recs;
  for (int f = 0; f < 5; ++f) {
    MetricsRecord r;
    r.fold = f;
    r.nlg = {0.5 + f * 0.01, 0.4, 0.3, 0.2 + f * 0.01, 0.6, 0.5, 3.0};
    r.ce["birads"] = {0.5, 0.6, 0.55, 0.7, 40};
    r.curves["stage1_train_loss"] = {2.0, 1.5, 1.0};
    recs.push_back(r);
  }
  emit_results(recs, dir);
  const auto nlg = read_text_file((dir / "nlg.csv").string());
  std::istringstream in(nlg);
  std::string header, line, last;
  std::getline(in, header);
  CHECK(header == "fold,bleu1,bleu2,bleu3,bleu4,rouge_l,meteor,cider");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    last = line;
  }
  CHECK(rows == 6);
  CHECK(last.rfind("mean,0.520000,0.400000,0.300000,0.220000", 0) == 0);
  CHECK(std::filesystem::exists(dir / "summary.md"));
  CHECK(std::filesystem::exists(dir / "ce.csv"));
  CHECK(std::filesystem::exists(dir / "plots" / "stage1_train_loss.svg"));
  emit_results(recs, dir / "again");
  for (const char* f : {"nlg.csv", "ce.csv", "summary.md", "plots/stage1_train_loss.svg"}) {
    CHECK(read_text_file((dir / f).string()) == read_text_file((dir / "again" / f).string()));
  }
  CHECK(code_of([&] { emit_results({}, dir); }) == ErrorCode::io_failure);
  auto other = recs;
  for (auto& r : other) r.nlg.bleu4 -= 0.05 + 0.01 * r.fold;
  emit_significance(recs, other, "a", "b", dir);
  CHECK(read_text_file((dir / "significance.csv").string()).find("bleu4,a,b") != std::string::npos);
  CHECK(to_json(record_from_json(to_json(recs[2]))) == to_json(recs[2]));
  std::filesystem::remove_all(dir);
}
