#pragma once

// Byte-level tokenizer with word tokens learned from a corpus and atomic
// clinical terms.
//
// Id layout: 0..255 raw bytes, then special tokens (<eos>, <pad>, variant
// markers), then word tokens, then added terms. Encoding first splits the
// text at added-term occurrences (leftmost, longest, on word boundaries),
// then covers the remainder greedily with the longest word token, falling
// back to single bytes. Decoding concatenates surfaces, so round trips are
// exact for any input.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace bustr::lm {

inline constexpr int kByteTokens = 256;
inline constexpr int kEos = 256;
inline constexpr int kPad = 257;
/// Number of template-variant marker tokens (<v0> ...).
inline constexpr int kVariantMarkers = 4;
inline constexpr int kFirstWordId = kByteTokens + 2 + kVariantMarkers;

int variant_marker(std::size_t variant);

class Tokenizer {
 public:
  /// Byte and special tokens only.
  Tokenizer();

  /// Adds every word (regex ` ?[A-Za-z0-9]+`) seen at least `min_count`
  /// times and longer than one byte, most frequent first (ties by string),
  /// up to `max_words`.
  static Tokenizer train(std::span<const std::string> texts, int min_count = 2, int max_words = 4000);

  std::vector<int> encode(std::string_view text) const;
  /// Special tokens decode to nothing.
  std::string decode(std::span<const int> ids) const;

  int vocab_size() const { return static_cast<int>(surfaces_.size()); }
  const std::string& surface(int id) const { return surfaces_.at(static_cast<std::size_t>(id)); }
  std::optional<int> id_of(std::string_view surface) const;
  bool is_special(int id) const { return id >= kByteTokens && id < kFirstWordId; }

  const std::vector<std::string>& words() const { return words_; }
  const std::vector<std::string>& terms() const { return terms_; }

  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

  bool operator==(const Tokenizer& other) const { return surfaces_ == other.surfaces_; }

 private:
  friend Tokenizer augment_tokenizer(const Tokenizer& base, std::span<const std::string> terms);
  void add_surface(const std::string& s);
  void encode_plain(std::string_view text, std::vector<int>& out) const;

  std::vector<std::string> surfaces_;
  std::vector<std::string> words_;
  std::vector<std::string> terms_;
  std::unordered_map<std::string, int> word_index_;
  std::unordered_map<std::string, int> term_index_;
  std::size_t max_word_len_ = 0;
};

/// Returns a tokenizer in which each term encodes to a single id. Terms that
/// already encode to one id are skipped, so the vocabulary grows by exactly
/// the number of genuinely new terms. Empty terms raise InvalidConfig.
Tokenizer augment_tokenizer(const Tokenizer& base, std::span<const std::string> terms);

/// Surface forms of every descriptor value of both dataset configs, "BI-RADS",
/// the BI-RADS categories, margin subtypes and histology names, deduplicated
/// in first-seen order.
std::vector<std::string> default_clinical_terms();

/// One term per non-empty line.
std::vector<std::string> load_terms(const std::filesystem::path& path);

}  // namespace bustr::lm
