#include "bustr/lm/tokenizer.hpp"

#include "bustr/error.hpp"
#include "bustr/schema/descriptors.hpp"
#include "bustr/util.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

namespace bustr::lm {

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

}  // namespace

int variant_marker(std::size_t variant) {
  return kByteTokens + 2 + static_cast<int>(variant % static_cast<std::size_t>(kVariantMarkers));
}

Tokenizer::Tokenizer() {
  for (int b = 0; b < kByteTokens; ++b) surfaces_.emplace_back(1, static_cast<char>(b));
  surfaces_.emplace_back("<eos>");
  surfaces_.emplace_back("<pad>");
  for (int v = 0; v < kVariantMarkers; ++v) surfaces_.push_back("<v" + std::to_string(v) + ">");
}

void Tokenizer::add_surface(const std::string& s) { surfaces_.push_back(s); }

Tokenizer Tokenizer::train(std::span<const std::string> texts, int min_count, int max_words) {
  static const std::regex word_re(" ?[A-Za-z0-9]+");
  std::map<std::string, int> counts;
  for (const auto& t : texts) {
    for (auto it = std::sregex_iterator(t.begin(), t.end(), word_re); it != std::sregex_iterator(); ++it) {
      ++counts[it->str()];
    }
  }
  std::vector<std::pair<std::string, int>> ranked;
  for (const auto& [w, c] : counts) {
    if (c >= min_count && w.size() > 1) ranked.emplace_back(w, c);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (static_cast<int>(ranked.size()) > max_words) ranked.resize(static_cast<std::size_t>(max_words));
  Tokenizer tok;
  for (const auto& [w, c] : ranked) {
    tok.word_index_.emplace(w, tok.vocab_size());
    tok.words_.push_back(w);
    tok.add_surface(w);
    tok.max_word_len_ = std::max(tok.max_word_len_, w.size());
  }
  return tok;
}

std::optional<int> Tokenizer::id_of(std::string_view surface) const {
  if (surface.size() == 1) return static_cast<unsigned char>(surface[0]);
  const std::string key(surface);
  if (auto it = term_index_.find(key); it != term_index_.end()) return it->second;
  if (auto it = word_index_.find(key); it != word_index_.end()) return it->second;
  for (int s = kByteTokens; s < kFirstWordId; ++s) {
    if (surfaces_[static_cast<std::size_t>(s)] == surface) return s;
  }
  return std::nullopt;
}

void Tokenizer::encode_plain(std::string_view text, std::vector<int>& out) const {
  std::size_t i = 0;
  while (i < text.size()) {
    int best = -1;
    std::size_t best_len = 0;
    const std::size_t limit = std::min(max_word_len_, text.size() - i);
    for (std::size_t len = limit; len >= 2; --len) {
      auto it = word_index_.find(std::string(text.substr(i, len)));
      if (it != word_index_.end()) {
        best = it->second;
        best_len = len;
        break;
      }
    }
    if (best < 0) {
      out.push_back(static_cast<unsigned char>(text[i]));
      ++i;
    } else {
      out.push_back(best);
      i += best_len;
    }
  }
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    const bool boundary_before = i == 0 || !is_alnum(text[i - 1]);
    std::size_t match = 0;
    int id = -1;
    if (boundary_before) {
      for (const auto& term : terms_) {
        if (term.size() <= match || text.compare(i, term.size(), term) != 0) continue;
        const std::size_t end = i + term.size();
        if (end < text.size() && is_alnum(text[end])) continue;
        match = term.size();
        id = term_index_.at(term);
      }
    }
    if (match == 0) {
      ++i;
      continue;
    }
    encode_plain(text.substr(start, i - start), out);
    out.push_back(id);
    i += match;
    start = i;
  }
  encode_plain(text.substr(start), out);
  return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) fail(ErrorCode::out_of_vocabulary, "token id " + std::to_string(id));
    if (is_special(id)) continue;
    out += surfaces_[static_cast<std::size_t>(id)];
  }
  return out;
}

nlohmann::json Tokenizer::to_json() const {
  return {{"format", "bustr-tokenizer-1"},
          {"byte_tokens", kByteTokens},
          {"specials", std::vector<std::string>(surfaces_.begin() + kByteTokens, surfaces_.begin() + kFirstWordId)},
          {"words", words_},
          {"terms", terms_}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  Tokenizer tok;
  try {
    if (j.at("format") != "bustr-tokenizer-1") fail(ErrorCode::schema_mismatch, "unknown tokenizer format");
    for (const auto& w : j.at("words").get<std::vector<std::string>>()) {
      tok.word_index_.emplace(w, tok.vocab_size());
      tok.words_.push_back(w);
      tok.add_surface(w);
      tok.max_word_len_ = std::max(tok.max_word_len_, w.size());
    }
    for (const auto& t : j.at("terms").get<std::vector<std::string>>()) {
      tok.term_index_.emplace(t, tok.vocab_size());
      tok.terms_.push_back(t);
      tok.add_surface(t);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::schema_mismatch, std::string("malformed tokenizer: ") + e.what());
  }
  return tok;
}

void Tokenizer::save(const std::filesystem::path& path) const { write_text_file(path.string(), to_json().dump(2) + "\n"); }

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_text_file(path.string())));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::schema_mismatch, path.string() + ": " + e.what());
  }
}

Tokenizer augment_tokenizer(const Tokenizer& base, std::span<const std::string> terms) {
  Tokenizer tok = base;
  for (const auto& term : terms) {
    if (term.empty()) fail(ErrorCode::invalid_config, "empty clinical term");
    if (tok.encode(term).size() == 1) continue;
    tok.term_index_.emplace(term, tok.vocab_size());
    tok.terms_.push_back(term);
    tok.add_surface(term);
  }
  return tok;
}

std::vector<std::string> default_clinical_terms() {
  using schema::DescriptorKind;
  std::vector<std::string> out;
  std::set<std::string> seen;
  auto add = [&](const std::string& t) {
    if (seen.insert(t).second) out.push_back(t);
  };
  for (const auto& cfg : {schema::breast_config(), schema::busbra_config()}) {
    for (const auto& [kind, vocab] : cfg.vocabularies) {
      for (const auto& v : vocab.values()) add(v);
    }
  }
  add("BI-RADS");
  for (const auto& cfg : {schema::breast_config(), schema::busbra_config()}) {
    for (const auto& v : cfg.vocabulary(DescriptorKind::birads).values()) add(v);
  }
  return out;
}

std::vector<std::string> load_terms(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path.string()));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

}  // namespace bustr::lm
