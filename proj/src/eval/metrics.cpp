#include "bustr/eval/metrics.hpp"

#include "bustr/error.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <regex>
#include <set>

namespace bustr::eval {

using schema::DescriptorKind;

namespace {

bool alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts ngrams(const Tokens& t, int n) {
  NgramCounts out;
  if (static_cast<int>(t.size()) < n) return out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= t.size(); ++i) {
    out[std::vector<std::string>(t.begin() + static_cast<std::ptrdiff_t>(i),
                                 t.begin() + static_cast<std::ptrdiff_t>(i) + n)]++;
  }
  return out;
}

}  // namespace

Tokens tokenize(const std::string& text) {
  std::string spaced;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(text[i])));
    if (std::ispunct(static_cast<unsigned char>(c))) {
      const bool inner = i > 0 && i + 1 < text.size() && alnum(text[i - 1]) && alnum(text[i + 1]);
      if (!inner) {
        spaced += ' ';
        spaced += c;
        spaced += ' ';
        continue;
      }
    }
    spaced += c;
  }
  Tokens out;
  std::string cur;
  for (char c : spaced) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

TokenizedPair make_pair(const std::string& hypothesis, const std::string& reference) {
  return {tokenize(hypothesis), tokenize(reference)};
}

double bleu(const std::vector<TokenizedPair>& corpus, int n) {
  if (n < 1 || n > 4) fail(ErrorCode::usage, "BLEU order must be 1..4");
  double c = 0, r = 0;
  for (const auto& p : corpus) {
    c += static_cast<double>(p.hypothesis.size());
    r += static_cast<double>(p.reference.size());
  }
  if (c == 0) return 0.0;
  double log_sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    double matched = 0, total = 0;
    for (const auto& p : corpus) {
      const auto h = ngrams(p.hypothesis, k);
      const auto ref = ngrams(p.reference, k);
      for (const auto& [g, cnt] : h) {
        total += cnt;
        auto it = ref.find(g);
        if (it != ref.end()) matched += std::min(cnt, it->second);
      }
    }
    if (matched == 0 || total == 0) return 0.0;
    log_sum += std::log(matched / total);
  }
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / n);
}

double bleu(const TokenizedPair& pair, int n) { return bleu(std::vector<TokenizedPair>{pair}, n); }

double rouge_l(const TokenizedPair& pair) {
  const auto& h = pair.hypothesis;
  const auto& r = pair.reference;
  if (h.empty() || r.empty()) return 0.0;
  std::vector<std::vector<int>> dp(h.size() + 1, std::vector<int>(r.size() + 1, 0));
  for (std::size_t i = 1; i <= h.size(); ++i) {
    for (std::size_t j = 1; j <= r.size(); ++j) {
      dp[i][j] = h[i - 1] == r[j - 1] ? dp[i - 1][j - 1] + 1 : std::max(dp[i - 1][j], dp[i][j - 1]);
    }
  }
  const double lcs = dp[h.size()][r.size()];
  if (lcs == 0) return 0.0;
  const double p = lcs / static_cast<double>(h.size());
  const double rec = lcs / static_cast<double>(r.size());
  const double beta2 = 1.2 * 1.2;
  return (1.0 + beta2) * p * rec / (rec + beta2 * p);
}

double rouge_l(const std::vector<TokenizedPair>& corpus) {
  if (corpus.empty()) return 0.0;
  double s = 0;
  for (const auto& p : corpus) s += rouge_l(p);
  return s / static_cast<double>(corpus.size());
}

double meteor(const TokenizedPair& pair) {
  const auto& h = pair.hypothesis;
  const auto& r = pair.reference;
  if (h.empty() || r.empty()) return 0.0;
  std::vector<int> align(h.size(), -1);
  std::vector<bool> used(r.size(), false);
  int prev = -2;
  for (std::size_t i = 0; i < h.size(); ++i) {
    int pick = -1;
    const int next = prev + 1;
    if (prev >= 0 && next < static_cast<int>(r.size()) && !used[next] && r[next] == h[i]) {
      pick = next;
    } else {
      for (std::size_t j = 0; j < r.size(); ++j) {
        if (!used[j] && r[j] == h[i]) {
          pick = static_cast<int>(j);
          break;
        }
      }
    }
    if (pick >= 0) {
      used[pick] = true;
      align[i] = pick;
    }
    prev = pick;
  }
  double matches = 0, chunks = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (align[i] < 0) continue;
    ++matches;
    if (i == 0 || align[i - 1] < 0 || align[i - 1] + 1 != align[i]) ++chunks;
  }
  if (matches == 0) return 0.0;
  const double p = matches / static_cast<double>(h.size());
  const double rec = matches / static_cast<double>(r.size());
  const double fmean = 10.0 * p * rec / (rec + 9.0 * p);
  const double penalty = 0.5 * std::pow(chunks / matches, 3.0);
  return fmean * (1.0 - penalty);
}

double meteor(const std::vector<TokenizedPair>& corpus) {
  if (corpus.empty()) return 0.0;
  double s = 0;
  for (const auto& p : corpus) s += meteor(p);
  return s / static_cast<double>(corpus.size());
}

double cider(const std::vector<TokenizedPair>& corpus) {
  if (corpus.size() < 2) fail(ErrorCode::undefined_idf, "CIDEr needs at least two reference documents");
  const double n_docs = static_cast<double>(corpus.size());
  constexpr double kSigma = 6.0;
  double total = 0.0;
  std::vector<std::map<std::vector<std::string>, int>> df(5);
  for (int n = 1; n <= 4; ++n) {
    for (const auto& p : corpus) {
      for (const auto& [g, c] : ngrams(p.reference, n)) df[static_cast<std::size_t>(n)][g]++;
    }
  }
  for (const auto& p : corpus) {
    double score = 0.0;
    for (int n = 1; n <= 4; ++n) {
      const auto h = ngrams(p.hypothesis, n);
      const auto r = ngrams(p.reference, n);
      auto weight = [&](const std::vector<std::string>& g, int count, double len) {
        auto it = df[static_cast<std::size_t>(n)].find(g);
        const double d = it == df[static_cast<std::size_t>(n)].end() ? 0.0 : it->second;
        return (count / len) * std::log(n_docs / std::max(1.0, d));
      };
      double hl = 0, rl = 0;
      for (const auto& [g, c] : h) hl += c;
      for (const auto& [g, c] : r) rl += c;
      if (hl == 0 || rl == 0) continue;
      double dot = 0, hn = 0, rn = 0;
      for (const auto& [g, c] : h) {
        const double w = weight(g, c, hl);
        hn += w * w;
        auto it = r.find(g);
        if (it != r.end()) dot += w * weight(g, it->second, rl);
      }
      for (const auto& [g, c] : r) {
        const double w = weight(g, c, rl);
        rn += w * w;
      }
      if (hn > 0 && rn > 0) score += dot / (std::sqrt(hn) * std::sqrt(rn));
    }
    const double delta = static_cast<double>(p.hypothesis.size()) - static_cast<double>(p.reference.size());
    total += 10.0 * (score / 4.0) * std::exp(-delta * delta / (2.0 * kSigma * kSigma));
  }
  return total / n_docs;
}

double nlg_value(const NlgScores& s, const std::string& column) {
  if (column == "bleu1") return s.bleu1;
  if (column == "bleu2") return s.bleu2;
  if (column == "bleu3") return s.bleu3;
  if (column == "bleu4") return s.bleu4;
  if (column == "rouge_l") return s.rouge_l;
  if (column == "meteor") return s.meteor;
  if (column == "cider") return s.cider;
  fail(ErrorCode::usage, "unknown metric column " + column);
}

NlgScores nlg_scores(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
  if (hypotheses.size() != references.size()) fail(ErrorCode::length_mismatch, "hypothesis/reference counts differ");
  std::vector<TokenizedPair> corpus;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) corpus.push_back(make_pair(hypotheses[i], references[i]));
  NlgScores s;
  s.bleu1 = bleu(corpus, 1);
  s.bleu2 = bleu(corpus, 2);
  s.bleu3 = bleu(corpus, 3);
  s.bleu4 = bleu(corpus, 4);
  s.rouge_l = rouge_l(corpus);
  s.meteor = meteor(corpus);
  s.cider = cider(corpus);
  return s;
}

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(), [](char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); });
  return out;
}

bool boundary_at(const std::string& text, std::size_t pos, std::size_t len) {
  const bool left = pos == 0 || !alnum(text[pos - 1]);
  const bool right = pos + len >= text.size() || !alnum(text[pos + len]);
  return left && right;
}

// Every non-overlapping leftmost-longest match of any value, in text order.
std::vector<std::string> scan(const std::string& text, const std::vector<std::string>& values) {
  std::vector<std::pair<std::string, std::string>> lowered;
  for (const auto& v : values) lowered.emplace_back(lower(v), v);
  std::vector<std::string> hits;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t best_len = 0;
    const std::string* best = nullptr;
    for (const auto& [lv, v] : lowered) {
      if (lv.size() > best_len && text.compare(pos, lv.size(), lv) == 0 && boundary_at(text, pos, lv.size())) {
        best_len = lv.size();
        best = &v;
      }
    }
    if (best) {
      hits.push_back(*best);
      pos += best_len;
    } else {
      ++pos;
    }
  }
  return hits;
}

}  // namespace

schema::DescriptorSet parse_report(const std::string& text, const schema::DatasetConfig& cfg) {
  schema::DescriptorSet ds;
  ds.source = schema::DescriptorSource::parsed;
  const std::string low = lower(text);
  for (DescriptorKind k : cfg.active_kinds) {
    if (k == DescriptorKind::size) {
      static const std::regex size_re(R"((\d+(?:\.\d+)?) mm)");
      std::smatch m;
      if (std::regex_search(low, m, size_re)) {
        const double v = std::stod(m[1].str());
        if (v > 0) ds.set_size(v);
      }
    } else if (k == DescriptorKind::birads) {
      static const std::regex birads_re(R"(bi-rads\s+([0-9][a-z]?)\b)");
      const auto& vocab = cfg.vocabulary(k);
      for (auto it = std::sregex_iterator(low.begin(), low.end(), birads_re); it != std::sregex_iterator(); ++it) {
        const std::string v = schema::normalize_value(k, (*it)[1].str());
        if (vocab.contains(v)) {
          ds.set(k, v);
          break;
        }
      }
    } else if (k == DescriptorKind::margin_subtypes) {
      const auto hits = scan(low, cfg.vocabulary(k).values());
      ds.set_subtypes(schema::SubtypeSet(hits.begin(), hits.end()));
    } else {
      const auto hits = scan(low, cfg.vocabulary(k).values());
      if (!hits.empty()) ds.set(k, hits.front());
    }
  }
  return ds;
}

std::map<DescriptorKind, CeScore> ce_metrics(const std::vector<schema::DescriptorSet>& parsed,
                                             const std::vector<schema::DescriptorSet>& truth,
                                             const schema::DatasetConfig& cfg) {
  if (parsed.size() != truth.size()) fail(ErrorCode::length_mismatch, "parsed and truth lists differ in length");
  std::map<DescriptorKind, CeScore> out;
  for (DescriptorKind k : cfg.active_kinds) {
    if (k == DescriptorKind::size) continue;
    std::map<std::string, int> tp, fp, fn;
    std::set<std::string> classes;
    int support = 0, correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (k == DescriptorKind::margin_subtypes) {
        if (!truth[i].has(DescriptorKind::margin_main)) continue;
        ++support;
        const auto t = truth[i].subtypes();
        const auto p = parsed[i].subtypes();
        correct += t == p;
        for (const auto& c : t) {
          classes.insert(c);
          (p.count(c) ? tp : fn)[c]++;
        }
        for (const auto& c : p) {
          if (!t.count(c)) fp[c]++;
        }
        continue;
      }
      const auto t = truth[i].get(k);
      if (!t) continue;
      ++support;
      classes.insert(*t);
      const auto p = parsed[i].get(k);
      if (p == t) {
        tp[*t]++;
        ++correct;
      } else {
        fn[*t]++;
        if (p) fp[*p]++;
      }
    }
    if (support == 0) continue;
    CeScore s;
    s.support = support;
    s.accuracy = static_cast<double>(correct) / support;
    for (const auto& c : classes) {
      const double P = tp[c] + fp[c] > 0 ? static_cast<double>(tp[c]) / (tp[c] + fp[c]) : 0.0;
      const double S = tp[c] + fn[c] > 0 ? static_cast<double>(tp[c]) / (tp[c] + fn[c]) : 0.0;
      s.precision += P;
      s.sensitivity += S;
      s.f1 += P + S > 0 ? 2 * P * S / (P + S) : 0.0;
    }
    const double nc = static_cast<double>(classes.size());
    if (nc > 0) {
      s.precision /= nc;
      s.sensitivity /= nc;
      s.f1 /= nc;
    } else {
      s.precision = s.sensitivity = s.f1 = 1.0;
    }
    out[k] = s;
  }
  return out;
}

TTest paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) fail(ErrorCode::length_mismatch, "paired samples differ in length");
  if (a.size() < 2) fail(ErrorCode::too_few_samples, "paired t-test needs at least two pairs");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  TTest out;
  out.df = static_cast<int>(n) - 1;
  if (std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; })) return out;
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0 || std::all_of(d.begin(), d.end(), [&](double x) { return x == d.front(); })) {
    fail(ErrorCode::zero_variance, "all paired differences are equal");
  }
  out.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  boost::math::students_t dist(static_cast<double>(out.df));
  out.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t)));
  return out;
}

}  // namespace bustr::eval
