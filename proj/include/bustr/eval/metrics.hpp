#pragma once

#include "bustr/schema/descriptors.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace bustr::eval {

using Tokens = std::vector<std::string>;

/// Lowercases, detaches punctuation (a mark between two alphanumerics, as in
/// "4.5", "non-circumscribed" or "cystic/solid", stays attached) and splits
/// on whitespace.
Tokens tokenize(const std::string& text);

struct TokenizedPair {
  Tokens hypothesis;
  Tokens reference;
};

TokenizedPair make_pair(const std::string& hypothesis, const std::string& reference);

/// Corpus-level BLEU-n: clipped n-gram precisions pooled over the corpus,
/// geometric mean over orders 1..n, brevity penalty exp(1 - r/c) when c < r.
double bleu(const std::vector<TokenizedPair>& corpus, int n);
double bleu(const TokenizedPair& pair, int n);

/// LCS F-measure with beta = 1.2; corpus value is the mean over pairs.
double rouge_l(const TokenizedPair& pair);
double rouge_l(const std::vector<TokenizedPair>& corpus);

/// Exact-match METEOR: Fmean = 10PR/(R+9P), penalty 0.5 (chunks/matches)^3.
double meteor(const TokenizedPair& pair);
double meteor(const std::vector<TokenizedPair>& corpus);

/// TF-IDF n-gram cosine (n = 1..4) with document frequencies from the
/// corpus references, gaussian length penalty (sigma 6), times 10, averaged
/// over pairs. UndefinedIdf for fewer than two pairs.
double cider(const std::vector<TokenizedPair>& corpus);

struct NlgScores {
  double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0, rouge_l = 0, meteor = 0, cider = 0;
};

inline const std::vector<std::string> kNlgColumns = {"bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "meteor", "cider"};
double nlg_value(const NlgScores& s, const std::string& column);

NlgScores nlg_scores(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references);

/// Rule-based descriptor extraction: case-insensitive leftmost-longest
/// vocabulary scan with word boundaries, first mention per kind; every
/// margin subtype mentioned is collected; BI-RADS via "BI-RADS <value>";
/// size via the first "<number> mm".
schema::DescriptorSet parse_report(const std::string& text, const schema::DatasetConfig& cfg);

struct CeScore {
  double precision = 0, sensitivity = 0, f1 = 0, accuracy = 0;
  int support = 0;
};

/// Per descriptor kind, macro-averaged over the classes present in truth. A
/// missing prediction counts as a false negative only. LengthMismatch when
/// the lists differ in length.
std::map<schema::DescriptorKind, CeScore> ce_metrics(const std::vector<schema::DescriptorSet>& parsed,
                                                     const std::vector<schema::DescriptorSet>& truth,
                                                     const schema::DatasetConfig& cfg);

struct TTest {
  double t = 0;
  double p = 1;
  int df = 0;
};

/// Paired two-sided t-test on a - b. Identical inputs give t = 0, p = 1;
/// constant non-zero differences raise ZeroVariance.
TTest paired_ttest(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace bustr::eval
