#include "bustr/eval/results.hpp"

#include "bustr/error.hpp"
#include "bustr/util.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bustr::eval {

namespace fs = std::filesystem;

namespace {

std::string num(double v) { return format_fixed(v, 6); }

const std::vector<std::string>& ce_order() {
  static const std::vector<std::string> order = {"birads",       "shape",     "margin_main", "margin_subtypes",
                                                 "echogenicity", "posterior", "pathology",   "histology"};
  return order;
}

}  // namespace

nlohmann::json to_json(const MetricsRecord& r) {
  nlohmann::json j;
  j["fold"] = r.fold;
  for (const auto& c : kNlgColumns) j["nlg"][c] = nlg_value(r.nlg, c);
  j["ce"] = nlohmann::json::object();
  for (const auto& [k, s] : r.ce) {
    j["ce"][k] = {{"precision", s.precision}, {"sensitivity", s.sensitivity}, {"f1", s.f1},
                  {"accuracy", s.accuracy},   {"support", s.support}};
  }
  j["curves"] = r.curves;
  return j;
}

MetricsRecord record_from_json(const nlohmann::json& j) {
  MetricsRecord r;
  try {
    r.fold = j.at("fold").get<int>();
    const auto& n = j.at("nlg");
    r.nlg = {n.at("bleu1"), n.at("bleu2"), n.at("bleu3"), n.at("bleu4"), n.at("rouge_l"), n.at("meteor"), n.at("cider")};
    for (const auto& [k, v] : j.at("ce").items()) {
      r.ce[k] = {v.at("precision"), v.at("sensitivity"), v.at("f1"), v.at("accuracy"), v.at("support")};
    }
    if (j.contains("curves")) r.curves = j.at("curves").get<std::map<std::string, std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::schema_mismatch, std::string("malformed metrics record: ") + e.what());
  }
  return r;
}

std::string svg_line_chart(const std::string& title, const std::map<std::string, std::vector<double>>& series) {
  constexpr double W = 480, H = 300, L = 50, R = 130, T = 30, B = 40;
  double lo = 0, hi = 1e-12;
  std::size_t len = 1;
  bool first = true;
  for (const auto& [name, ys] : series) {
    len = std::max(len, ys.size());
    for (double y : ys) {
      if (!std::isfinite(y)) continue;
      if (first) {
        lo = hi = y;
        first = false;
      }
      lo = std::min(lo, y);
      hi = std::max(hi, y);
    }
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << L << "\" y=\"18\" font-size=\"13\" font-family=\"sans-serif\">" << title << "</text>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"4\" y=\"" << T + 4 << "\" font-size=\"10\" font-family=\"sans-serif\">" << format_fixed(hi, 3)
      << "</text>\n";
  svg << "<text x=\"4\" y=\"" << H - B << "\" font-size=\"10\" font-family=\"sans-serif\">" << format_fixed(lo, 3)
      << "</text>\n";
  svg << "<text x=\"" << (W - R) / 2 << "\" y=\"" << H - 10 << "\" font-size=\"10\" font-family=\"sans-serif\">epoch</text>\n";
  std::size_t idx = 0;
  for (const auto& [name, ys] : series) {
    const char* color = kColors[idx % 7];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i) {
      if (!std::isfinite(ys[i])) continue;
      const double x = L + (len > 1 ? static_cast<double>(i) / static_cast<double>(len - 1) : 0.5) * (W - L - R);
      const double y = H - B - (ys[i] - lo) / (hi - lo) * (H - T - B);
      svg << format_fixed(x, 1) << "," << format_fixed(y, 1) << " ";
    }
    svg << "\"/>\n";
    svg << "<text x=\"" << W - R + 8 << "\" y=\"" << T + 14 * (idx + 1) << "\" font-size=\"10\" fill=\"" << color
        << "\" font-family=\"sans-serif\">" << name << "</text>\n";
    ++idx;
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_results(const std::vector<MetricsRecord>& records, const fs::path& out_dir) {
  if (records.empty()) fail(ErrorCode::io_failure, "EmptyInput: no metrics records to emit");
  std::error_code ec;
  fs::create_directories(out_dir / "plots", ec);
  if (ec) fail(ErrorCode::io_failure, "cannot create " + out_dir.string());
  const double n = static_cast<double>(records.size());

  std::ostringstream nlg;
  nlg << "fold";
  for (const auto& c : kNlgColumns) nlg << "," << c;
  nlg << "\n";
  NlgScores mean;
  for (const auto& r : records) {
    nlg << r.fold;
    for (const auto& c : kNlgColumns) nlg << "," << num(nlg_value(r.nlg, c));
    nlg << "\n";
    mean.bleu1 += r.nlg.bleu1 / n;
    mean.bleu2 += r.nlg.bleu2 / n;
    mean.bleu3 += r.nlg.bleu3 / n;
    mean.bleu4 += r.nlg.bleu4 / n;
    mean.rouge_l += r.nlg.rouge_l / n;
    mean.meteor += r.nlg.meteor / n;
    mean.cider += r.nlg.cider / n;
  }
  nlg << "mean";
  for (const auto& c : kNlgColumns) nlg << "," << num(nlg_value(mean, c));
  nlg << "\n";
  write_text_file((out_dir / "nlg.csv").string(), nlg.str());

  std::ostringstream ce;
  ce << "fold,descriptor,precision,sensitivity,f1,accuracy,support\n";
  std::map<std::string, CeScore> ce_mean;
  std::map<std::string, int> ce_count;
  for (const auto& r : records) {
    for (const auto& kind : ce_order()) {
      auto it = r.ce.find(kind);
      if (it == r.ce.end()) continue;
      const CeScore& s = it->second;
      ce << r.fold << "," << kind << "," << num(s.precision) << "," << num(s.sensitivity) << "," << num(s.f1) << ","
         << num(s.accuracy) << "," << s.support << "\n";
      CeScore& m = ce_mean[kind];
      m.precision += s.precision;
      m.sensitivity += s.sensitivity;
      m.f1 += s.f1;
      m.accuracy += s.accuracy;
      m.support += s.support;
      ce_count[kind]++;
    }
  }
  for (const auto& kind : ce_order()) {
    auto it = ce_mean.find(kind);
    if (it == ce_mean.end()) continue;
    const double c = ce_count[kind];
    CeScore& m = it->second;
    m.precision /= c;
    m.sensitivity /= c;
    m.f1 /= c;
    m.accuracy /= c;
    ce << "mean," << kind << "," << num(m.precision) << "," << num(m.sensitivity) << "," << num(m.f1) << ","
       << num(m.accuracy) << "," << m.support << "\n";
  }
  write_text_file((out_dir / "ce.csv").string(), ce.str());

  std::ostringstream md;
  md << "# Results (" << records.size() << " folds)\n\n## NLG metrics (fold mean)\n\n|";
  for (const auto& c : kNlgColumns) md << " " << c << " |";
  md << "\n|";
  for (std::size_t i = 0; i < kNlgColumns.size(); ++i) md << "---|";
  md << "\n|";
  for (const auto& c : kNlgColumns) md << " " << format_fixed(nlg_value(mean, c), 3) << " |";
  md << "\n\n## Clinical efficacy (fold mean, macro over classes)\n\n| descriptor | P | S | F1 | accuracy |\n|---|---|---|---|---|\n";
  for (const auto& kind : ce_order()) {
    auto it = ce_mean.find(kind);
    if (it == ce_mean.end()) continue;
    const CeScore& m = it->second;
    md << "| " << kind << " | " << format_fixed(m.precision, 3) << " | " << format_fixed(m.sensitivity, 3) << " | "
       << format_fixed(m.f1, 3) << " | " << format_fixed(m.accuracy, 3) << " |\n";
  }
  write_text_file((out_dir / "summary.md").string(), md.str());

  std::map<std::string, std::map<std::string, std::vector<double>>> charts;
  for (const auto& r : records) {
    for (const auto& [name, ys] : r.curves) charts[name]["fold " + std::to_string(r.fold)] = ys;
  }
  std::map<std::string, std::vector<double>> per_fold;
  for (const auto& c : {"bleu4", "rouge_l", "meteor"}) {
    for (const auto& r : records) per_fold[c].push_back(nlg_value(r.nlg, c));
  }
  write_text_file((out_dir / "plots" / "nlg_per_fold.svg").string(), svg_line_chart("NLG score per fold", per_fold));
  for (const auto& [name, series] : charts) {
    write_text_file((out_dir / "plots" / (name + ".svg")).string(), svg_line_chart(name, series));
  }
}

void emit_significance(const std::vector<MetricsRecord>& a, const std::vector<MetricsRecord>& b,
                       const std::string& name_a, const std::string& name_b, const fs::path& out_dir) {
  if (a.empty() || b.empty()) fail(ErrorCode::io_failure, "EmptyInput: no records to compare");
  if (a.size() != b.size()) fail(ErrorCode::length_mismatch, "runs have different fold counts");
  std::ostringstream csv;
  csv << "metric,run_a,run_b,mean_a,mean_b,t,df,p\n";
  for (const auto& c : kNlgColumns) {
    std::vector<double> xa, xb;
    for (const auto& r : a) xa.push_back(nlg_value(r.nlg, c));
    for (const auto& r : b) xb.push_back(nlg_value(r.nlg, c));
    double ma = 0, mb = 0;
    for (double v : xa) ma += v / static_cast<double>(xa.size());
    for (double v : xb) mb += v / static_cast<double>(xb.size());
    csv << c << "," << name_a << "," << name_b << "," << num(ma) << "," << num(mb) << ",";
    try {
      const TTest t = paired_ttest(xa, xb);
      csv << num(t.t) << "," << t.df << "," << num(t.p) << "\n";
    } catch (const Error& e) {
      if (e.code() != ErrorCode::zero_variance) throw;
      csv << "nan," << xa.size() - 1 << ",nan\n";
    }
  }
  fs::create_directories(out_dir);
  write_text_file((out_dir / "significance.csv").string(), csv.str());
}

}  // namespace bustr::eval
