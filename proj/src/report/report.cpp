#include "bustr/report/report.hpp"

#include "bustr/error.hpp"
#include "bustr/util.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cctype>
#include <cmath>
#include <regex>

namespace bustr::report {

using schema::DescriptorKind;

std::string ReportText::full_text() const {
  std::string out;
  for (const auto& s : sentences) {
    if (!out.empty()) out += ' ';
    out += s;
  }
  return out;
}

ReportText ReportText::from_text(const std::string& text) {
  ReportText r;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (cur.empty() && std::isspace(static_cast<unsigned char>(c))) continue;
    cur += c;
    const bool end = i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]));
    if (c == '.' && end) {
      r.sentences.push_back(cur);
      cur.clear();
    }
  }
  while (!cur.empty() && std::isspace(static_cast<unsigned char>(cur.back()))) cur.pop_back();
  if (!cur.empty()) r.sentences.push_back(cur);
  return r;
}

namespace {

std::string join_subtypes(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += i + 1 == items.size() ? " and " : ", ";
    out += items[i];
  }
  return out;
}

const char* clause_label(DescriptorKind k) {
  switch (k) {
    case DescriptorKind::size: return "size";
    case DescriptorKind::shape: return "shape";
    case DescriptorKind::margin_main: return "margin";
    case DescriptorKind::echogenicity: return "echogenicity";
    case DescriptorKind::posterior: return "posterior features";
    case DescriptorKind::birads: return "BI-RADS";
    case DescriptorKind::pathology: return "pathology";
    case DescriptorKind::histology: return "histology";
    default: return "";
  }
}

}  // namespace

PromptText format_prompt(const schema::ValidatedDescriptors& validated,
                         const std::optional<corpus::RadiomicsFeatures>& r, std::string key) {
  const schema::DescriptorSet& ds = validated.get();
  PromptText p;
  p.key = std::move(key);
  p.text = kPromptHeader;
  auto clause = [&](ProvenanceEntry e, const std::string& shown) {
    p.text += "\n- ";
    p.text += clause_label(e.kind);
    p.text += ": ";
    p.text += shown;
    p.provenance.push_back(std::move(e));
  };
  std::optional<double> size = ds.size_mm();
  if (!size && r) size = r->equiv_diameter_mm;
  if (size) {
    const std::string v = format_fixed(*size, 1);
    clause({DescriptorKind::size, v, {}}, v + " mm");
  }
  for (DescriptorKind k : {DescriptorKind::shape, DescriptorKind::margin_main, DescriptorKind::echogenicity,
                           DescriptorKind::posterior, DescriptorKind::birads, DescriptorKind::pathology,
                           DescriptorKind::histology}) {
    auto v = ds.get(k);
    if (!v) continue;
    ProvenanceEntry e{k, *v, {}};
    std::string shown = *v;
    if (k == DescriptorKind::margin_main) {
      const auto subs = ds.subtypes();
      e.extra.assign(subs.begin(), subs.end());
      if (!e.extra.empty()) {
        shown += " (";
        for (std::size_t i = 0; i < e.extra.size(); ++i) shown += (i ? ", " : "") + e.extra[i];
        shown += ")";
      }
    }
    clause(std::move(e), shown);
  }
  return p;
}

TemplateBank TemplateBank::defaults() {
  TemplateBank b;
  b.slots = {
      {"size", {"The lesion measures {size} mm.", "The lesion measures {size} mm in greatest diameter."}},
      {"shape_margin", {"The mass is {shape} with {margin} margins.", "A mass of {shape} shape with {margin} margins is seen."}},
      {"shape", {"The mass is {shape}.", "The mass shape is {shape}."}},
      {"margin", {"The mass has {margin} margins.", "Its margins are {margin}."}},
      {"subtypes", {"The margins are {subtypes}.", "Margin features include {subtypes}."}},
      {"echogenicity", {"The lesion is {echo}.", "Echogenicity is {echo}."}},
      {"posterior", {"Posterior features: {posterior}.", "Posterior acoustic features are {posterior}."}},
      {"birads", {"The assessment is BI-RADS {birads}.", "This corresponds to BI-RADS {birads}."}},
      {"pathology", {"Pathology is {pathology}.", "The lesion is {pathology} on pathology."}},
      {"histology", {"Histology shows {histology}.", "The histologic diagnosis is {histology}."}},
  };
  return b;
}

TemplateBank TemplateBank::from_json(const nlohmann::json& j) {
  TemplateBank b;
  try {
    b.slots = j.get<std::map<std::string, std::vector<std::string>>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_config, std::string("malformed template bank: ") + e.what());
  }
  const auto ref = defaults();
  for (const auto& [slot, patterns] : ref.slots) {
    auto it = b.slots.find(slot);
    if (it == b.slots.end() || it->second.empty()) fail(ErrorCode::invalid_config, "template slot missing: " + slot);
  }
  return b;
}

TemplateBank TemplateBank::load(const std::string& path) { return from_json(nlohmann::json::parse(read_text_file(path))); }

nlohmann::json TemplateBank::to_json() const { return slots; }

std::size_t TemplateBank::variant_count() const {
  std::size_t n = 0;
  for (const auto& [slot, patterns] : slots) n = std::max(n, patterns.size());
  return n;
}

TemplateRealizer::TemplateRealizer(TemplateBank bank) : bank_(std::move(bank)) {}

std::size_t TemplateRealizer::variant_for(const std::string& key) const {
  return static_cast<std::size_t>(fnv1a(key) % bank_.variant_count());
}

ReportText TemplateRealizer::realize(const PromptText& prompt) const {
  const std::size_t variant = variant_for(prompt.key);
  std::map<DescriptorKind, const ProvenanceEntry*> facts;
  for (const auto& e : prompt.provenance) facts[e.kind] = &e;
  auto fill = [&](const std::string& slot, const std::map<std::string, std::string>& values) {
    const auto& patterns = bank_.slots.at(slot);
    std::string s = patterns[variant % patterns.size()];
    for (const auto& [name, value] : values) {
      const std::string ph = "{" + name + "}";
      for (auto pos = s.find(ph); pos != std::string::npos; pos = s.find(ph, pos + value.size())) {
        s.replace(pos, ph.size(), value);
      }
    }
    return s;
  };
  auto value = [&](DescriptorKind k) -> std::optional<std::string> {
    auto it = facts.find(k);
    if (it == facts.end()) return std::nullopt;
    return it->second->value;
  };
  ReportText out;
  if (auto v = value(DescriptorKind::size)) out.sentences.push_back(fill("size", {{"size", *v}}));
  const auto shape = value(DescriptorKind::shape);
  const auto margin = value(DescriptorKind::margin_main);
  if (shape && margin) {
    out.sentences.push_back(fill("shape_margin", {{"shape", *shape}, {"margin", *margin}}));
  } else if (shape) {
    out.sentences.push_back(fill("shape", {{"shape", *shape}}));
  } else if (margin) {
    out.sentences.push_back(fill("margin", {{"margin", *margin}}));
  }
  if (margin && !facts.at(DescriptorKind::margin_main)->extra.empty()) {
    out.sentences.push_back(fill("subtypes", {{"subtypes", join_subtypes(facts.at(DescriptorKind::margin_main)->extra)}}));
  }
  if (auto v = value(DescriptorKind::echogenicity)) out.sentences.push_back(fill("echogenicity", {{"echo", *v}}));
  if (auto v = value(DescriptorKind::posterior)) out.sentences.push_back(fill("posterior", {{"posterior", *v}}));
  if (auto v = value(DescriptorKind::birads)) out.sentences.push_back(fill("birads", {{"birads", *v}}));
  if (auto v = value(DescriptorKind::pathology)) out.sentences.push_back(fill("pathology", {{"pathology", *v}}));
  if (auto v = value(DescriptorKind::histology)) out.sentences.push_back(fill("histology", {{"histology", *v}}));
  return out;
}

ExternalRealizer::ExternalRealizer(std::string command) : command_(std::move(command)) {}

ExternalRealizer::~ExternalRealizer() { stop(); }

void ExternalRealizer::start() const {
  int in_pipe[2], out_pipe[2];
  if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) fail(ErrorCode::realizer_failure, "pipe() failed");
  const pid_t pid = fork();
  if (pid < 0) fail(ErrorCode::realizer_failure, "fork() failed");
  if (pid == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  buffer_.clear();
}

void ExternalRealizer::stop() const {
  if (pid_ < 0) return;
  close(to_child_);
  close(from_child_);
  kill(pid_, SIGTERM);
  waitpid(pid_, nullptr, 0);
  pid_ = -1;
}

ReportText ExternalRealizer::realize(const PromptText& prompt) const {
  std::lock_guard<std::mutex> lock(mu_);
  if (pid_ < 0) start();
  signal(SIGPIPE, SIG_IGN);
  const std::string request = nlohmann::json{{"prompt", prompt.text}}.dump() + "\n";
  std::size_t sent = 0;
  while (sent < request.size()) {
    const ssize_t n = write(to_child_, request.data() + sent, request.size() - sent);
    if (n <= 0) {
      stop();
      fail(ErrorCode::realizer_failure, "external realizer closed its input");
    }
    sent += static_cast<std::size_t>(n);
  }
  while (buffer_.find('\n') == std::string::npos) {
    pollfd pfd{from_child_, POLLIN, 0};
    if (poll(&pfd, 1, 30000) <= 0) {
      stop();
      fail(ErrorCode::realizer_failure, "external realizer timed out");
    }
    char chunk[4096];
    const ssize_t n = read(from_child_, chunk, sizeof chunk);
    if (n <= 0) {
      stop();
      fail(ErrorCode::realizer_failure, "external realizer exited without a reply");
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
  const auto nl = buffer_.find('\n');
  const std::string line = buffer_.substr(0, nl);
  buffer_.erase(0, nl + 1);
  try {
    const auto reply = nlohmann::json::parse(line);
    return ReportText::from_text(reply.at("report").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::realizer_failure, std::string("bad realizer reply: ") + e.what());
  }
}

ReportText realize_report(const PromptText& prompt, const ReportRealizer& realizer) {
  return realizer.realize(prompt);
}

ReportText insert_size(const ReportText& report, double size_mm) {
  if (!(size_mm > 0.0) || !std::isfinite(size_mm)) fail(ErrorCode::non_positive_size, "size must be positive");
  const std::string value = format_fixed(std::round(size_mm * 10.0) / 10.0, 1);
  static const std::regex number(R"((\d+(?:\.\d+)?) mm)");
  ReportText out = report;
  for (auto& s : out.sentences) {
    if (s.find("measures") == std::string::npos) continue;
    std::smatch m;
    if (std::regex_search(s, m, number)) {
      s.replace(static_cast<std::size_t>(m.position(1)), static_cast<std::size_t>(m.length(1)), value);
      return out;
    }
  }
  const auto bank = TemplateBank::defaults();
  std::string sentence = bank.slots.at("size").front();
  sentence.replace(sentence.find("{size}"), 6, value);
  out.sentences.insert(out.sentences.begin(), sentence);
  return out;
}

}  // namespace bustr::report
