#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

namespace bustr::schema {

enum class DescriptorKind {
  birads,
  shape,
  margin_main,
  margin_subtypes,
  echogenicity,
  posterior,
  pathology,
  histology,
  size,
};

inline constexpr std::array<DescriptorKind, 9> kAllKinds = {
    DescriptorKind::birads,      DescriptorKind::shape,     DescriptorKind::margin_main,
    DescriptorKind::margin_subtypes, DescriptorKind::echogenicity, DescriptorKind::posterior,
    DescriptorKind::pathology,   DescriptorKind::histology, DescriptorKind::size,
};

std::string_view to_string(DescriptorKind kind);
std::optional<DescriptorKind> kind_from_string(std::string_view name);

/// Single-valued categorical kinds (everything except size and subtypes).
bool is_single_label(DescriptorKind kind);

/// Lowercase, trim, collapse internal whitespace. BI-RADS values keep an
/// uppercase letter suffix ("4a" -> "4A").
std::string normalize_value(DescriptorKind kind, std::string_view raw);

class Vocabulary {
 public:
  Vocabulary() = default;
  /// Values are normalized; duplicates or an empty list raise InvalidConfig.
  Vocabulary(DescriptorKind kind, std::vector<std::string> values);

  DescriptorKind kind() const { return kind_; }
  const std::vector<std::string>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  bool contains(std::string_view normalized) const;
  std::optional<int> index_of(std::string_view normalized) const;
  const std::string& at(int index) const { return values_.at(static_cast<std::size_t>(index)); }

 private:
  DescriptorKind kind_ = DescriptorKind::shape;
  std::vector<std::string> values_;
};

struct DatasetConfig {
  std::string name;
  std::vector<DescriptorKind> active_kinds;
  std::map<DescriptorKind, Vocabulary> vocabularies;
  bool has_masks = false;

  bool is_active(DescriptorKind kind) const;
  bool has_vocabulary(DescriptorKind kind) const { return vocabularies.count(kind) != 0; }
  const Vocabulary& vocabulary(DescriptorKind kind) const;
};

/// Raises InvalidConfig for an empty task list or an active categorical kind
/// without a vocabulary.
void check_config(const DatasetConfig& cfg);

DatasetConfig breast_config();
DatasetConfig busbra_config();

nlohmann::json to_json(const DatasetConfig& cfg);
DatasetConfig config_from_json(const nlohmann::json& j);
DatasetConfig load_config(const std::filesystem::path& path);
void save_config(const DatasetConfig& cfg, const std::filesystem::path& path);

/// Supervised vision tasks; margin folds main class and subtypes together.
enum class Task { size, birads, shape, margin, posterior, echogenicity, pathology, histology };
using TaskSet = std::vector<Task>;

std::string_view to_string(Task task);
/// Ordered task set for a configuration. Raises InvalidConfig when empty.
TaskSet active_tasks(const DatasetConfig& cfg);

enum class DescriptorSource { ground_truth, parsed, predicted };

using SubtypeSet = std::set<std::string>;
using DescriptorValue = std::variant<std::string, SubtypeSet, double>;

class DescriptorSet {
 public:
  DescriptorSource source = DescriptorSource::ground_truth;

  void set(DescriptorKind kind, std::string value);
  void set_subtypes(SubtypeSet values);
  void set_size(double size_mm);
  void erase(DescriptorKind kind) { entries_.erase(kind); }

  bool has(DescriptorKind kind) const { return entries_.count(kind) != 0; }
  bool empty() const { return entries_.empty(); }
  std::optional<std::string> get(DescriptorKind kind) const;
  SubtypeSet subtypes() const;
  std::optional<double> size_mm() const;
  const std::map<DescriptorKind, DescriptorValue>& entries() const { return entries_; }

  /// Entry equality; the source tag is not compared.
  bool operator==(const DescriptorSet& other) const { return entries_ == other.entries_; }

 private:
  std::map<DescriptorKind, DescriptorValue> entries_;
};

/// Descriptor set that passed validate_descriptors against some config.
class ValidatedDescriptors {
 public:
  const DescriptorSet& get() const { return value_; }
  operator const DescriptorSet&() const { return value_; }

 private:
  friend ValidatedDescriptors validate_descriptors(const DescriptorSet&, const DatasetConfig&);
  explicit ValidatedDescriptors(DescriptorSet value) : value_(std::move(value)) {}
  DescriptorSet value_;
};

/// Normalizes every value and checks it against the config.
/// Errors: UnknownDescriptor (kind not active), OutOfVocabulary (bad value),
/// InconsistentDescriptors (subtypes without a non-circumscribed margin, or
/// an empty set).
ValidatedDescriptors validate_descriptors(const DescriptorSet& ds, const DatasetConfig& cfg);

nlohmann::json to_json(const DescriptorSet& ds);
DescriptorSet descriptors_from_json(const nlohmann::json& j);

inline constexpr std::string_view kNonCircumscribed = "non-circumscribed";
inline constexpr std::string_view kCircumscribed = "circumscribed";

}  // namespace bustr::schema
