#include "bustr/schema/descriptors.hpp"

#include "bustr/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

namespace bustr::schema {

namespace {

constexpr std::array<std::pair<DescriptorKind, std::string_view>, 9> kKindNames = {{
    {DescriptorKind::birads, "birads"},
    {DescriptorKind::shape, "shape"},
    {DescriptorKind::margin_main, "margin_main"},
    {DescriptorKind::margin_subtypes, "margin_subtypes"},
    {DescriptorKind::echogenicity, "echogenicity"},
    {DescriptorKind::posterior, "posterior"},
    {DescriptorKind::pathology, "pathology"},
    {DescriptorKind::histology, "histology"},
    {DescriptorKind::size, "size"},
}};

constexpr std::array<std::pair<Task, std::string_view>, 8> kTaskNames = {{
    {Task::size, "size"},
    {Task::birads, "birads"},
    {Task::shape, "shape"},
    {Task::margin, "margin"},
    {Task::posterior, "posterior"},
    {Task::echogenicity, "echogenicity"},
    {Task::pathology, "pathology"},
    {Task::histology, "histology"},
}};

std::optional<DescriptorKind> kind_for_task(Task t) {
  switch (t) {
    case Task::size: return DescriptorKind::size;
    case Task::birads: return DescriptorKind::birads;
    case Task::shape: return DescriptorKind::shape;
    case Task::margin: return DescriptorKind::margin_main;
    case Task::posterior: return DescriptorKind::posterior;
    case Task::echogenicity: return DescriptorKind::echogenicity;
    case Task::pathology: return DescriptorKind::pathology;
    case Task::histology: return DescriptorKind::histology;
  }
  return std::nullopt;
}

std::vector<std::string> histology_values() {
  return {"fibroadenoma",       "invasive ductal carcinoma", "cyst",        "fibrocystic changes",
          "invasive lobular carcinoma", "intraductal papilloma", "sclerosing adenosis", "hyperplasia",
          "lipoma",             "phyllodes tumor",           "other"};
}

}  // namespace

std::string_view to_string(DescriptorKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<DescriptorKind> kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

bool is_single_label(DescriptorKind kind) {
  return kind != DescriptorKind::size && kind != DescriptorKind::margin_subtypes;
}

std::string_view to_string(Task task) {
  for (const auto& [t, name] : kTaskNames) {
    if (t == task) return name;
  }
  return "unknown";
}

std::string normalize_value(DescriptorKind kind, std::string_view raw) {
  std::string out;
  bool pending_space = false;
  for (char c : raw) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (kind == DescriptorKind::birads) {
    std::transform(out.begin(), out.end(), out.begin(),
                   [](char c) { return static_cast<char>(std::toupper(static_cast<unsigned char>(c))); });
  }
  return out;
}

Vocabulary::Vocabulary(DescriptorKind kind, std::vector<std::string> values) : kind_(kind) {
  if (values.empty()) fail(ErrorCode::invalid_config, "empty vocabulary for " + std::string(to_string(kind)));
  for (auto& v : values) {
    std::string n = normalize_value(kind, v);
    if (n.empty()) fail(ErrorCode::invalid_config, "blank value in " + std::string(to_string(kind)));
    if (std::find(values_.begin(), values_.end(), n) != values_.end()) {
      fail(ErrorCode::invalid_config, "duplicate value '" + n + "' in " + std::string(to_string(kind)));
    }
    values_.push_back(std::move(n));
  }
}

bool Vocabulary::contains(std::string_view normalized) const { return index_of(normalized).has_value(); }

std::optional<int> Vocabulary::index_of(std::string_view normalized) const {
  auto it = std::find(values_.begin(), values_.end(), normalized);
  if (it == values_.end()) return std::nullopt;
  return static_cast<int>(it - values_.begin());
}

bool DatasetConfig::is_active(DescriptorKind kind) const {
  return std::find(active_kinds.begin(), active_kinds.end(), kind) != active_kinds.end();
}

const Vocabulary& DatasetConfig::vocabulary(DescriptorKind kind) const {
  auto it = vocabularies.find(kind);
  if (it == vocabularies.end()) {
    fail(ErrorCode::invalid_config, "no vocabulary for " + std::string(to_string(kind)) + " in " + name);
  }
  return it->second;
}

void check_config(const DatasetConfig& cfg) {
  if (cfg.active_kinds.empty()) fail(ErrorCode::invalid_config, "config '" + cfg.name + "' has no active tasks");
  for (DescriptorKind k : cfg.active_kinds) {
    if (k != DescriptorKind::size && !cfg.has_vocabulary(k)) {
      fail(ErrorCode::invalid_config, "active kind " + std::string(to_string(k)) + " lacks a vocabulary");
    }
  }
}

DatasetConfig breast_config() {
  DatasetConfig cfg;
  cfg.name = "breast";
  cfg.active_kinds = {DescriptorKind::size,           DescriptorKind::birads,       DescriptorKind::shape,
                      DescriptorKind::margin_main,    DescriptorKind::margin_subtypes,
                      DescriptorKind::echogenicity,   DescriptorKind::posterior};
  auto add = [&cfg](DescriptorKind k, std::vector<std::string> v) { cfg.vocabularies[k] = Vocabulary(k, std::move(v)); };
  add(DescriptorKind::birads, {"2", "3", "4A", "4B", "4C", "5"});
  add(DescriptorKind::shape, {"oval", "round", "irregular"});
  add(DescriptorKind::margin_main, {"circumscribed", "non-circumscribed"});
  add(DescriptorKind::margin_subtypes, {"angular", "indistinct", "microlobulated", "spiculated"});
  add(DescriptorKind::echogenicity,
      {"anechoic", "hypoechoic", "hyperechoic", "isoechoic", "heterogeneous", "complex cystic/solid"});
  add(DescriptorKind::posterior, {"none", "enhancement", "shadowing", "combined features"});
  cfg.has_masks = true;
  return cfg;
}

DatasetConfig busbra_config() {
  DatasetConfig cfg;
  cfg.name = "busbra";
  cfg.active_kinds = {DescriptorKind::birads, DescriptorKind::pathology, DescriptorKind::histology};
  auto add = [&cfg](DescriptorKind k, std::vector<std::string> v) { cfg.vocabularies[k] = Vocabulary(k, std::move(v)); };
  add(DescriptorKind::birads, {"2", "3", "4", "5"});
  add(DescriptorKind::pathology, {"benign", "malignant"});
  add(DescriptorKind::histology, histology_values());
  cfg.has_masks = false;
  return cfg;
}

nlohmann::json to_json(const DatasetConfig& cfg) {
  nlohmann::json j;
  j["name"] = cfg.name;
  j["active_tasks"] = nlohmann::json::array();
  for (DescriptorKind k : cfg.active_kinds) j["active_tasks"].push_back(std::string(to_string(k)));
  j["vocabularies"] = nlohmann::json::object();
  for (const auto& [k, vocab] : cfg.vocabularies) j["vocabularies"][std::string(to_string(k))] = vocab.values();
  j["has_masks"] = cfg.has_masks;
  return j;
}

DatasetConfig config_from_json(const nlohmann::json& j) {
  DatasetConfig cfg;
  try {
    cfg.name = j.at("name").get<std::string>();
    for (const auto& t : j.at("active_tasks")) {
      auto k = kind_from_string(t.get<std::string>());
      if (!k) fail(ErrorCode::invalid_config, "unknown task '" + t.get<std::string>() + "'");
      cfg.active_kinds.push_back(*k);
    }
    for (const auto& [name, values] : j.at("vocabularies").items()) {
      auto k = kind_from_string(name);
      if (!k) fail(ErrorCode::invalid_config, "unknown vocabulary kind '" + name + "'");
      cfg.vocabularies[*k] = Vocabulary(*k, values.get<std::vector<std::string>>());
    }
    cfg.has_masks = j.value("has_masks", false);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_config, std::string("malformed dataset config: ") + e.what());
  }
  check_config(cfg);
  return cfg;
}

DatasetConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::missing_file, "dataset config not found: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::invalid_config, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const DatasetConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io_failure, "cannot write " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

TaskSet active_tasks(const DatasetConfig& cfg) {
  if (cfg.active_kinds.empty()) fail(ErrorCode::invalid_config, "config '" + cfg.name + "' has no active tasks");
  TaskSet out;
  for (const auto& [task, name] : kTaskNames) {
    (void)name;
    if (cfg.is_active(*kind_for_task(task))) out.push_back(task);
  }
  if (out.empty()) fail(ErrorCode::invalid_config, "config '" + cfg.name + "' activates no supervised task");
  return out;
}

void DescriptorSet::set(DescriptorKind kind, std::string value) { entries_[kind] = std::move(value); }

void DescriptorSet::set_subtypes(SubtypeSet values) {
  if (values.empty()) {
    entries_.erase(DescriptorKind::margin_subtypes);
  } else {
    entries_[DescriptorKind::margin_subtypes] = std::move(values);
  }
}

void DescriptorSet::set_size(double size_mm) { entries_[DescriptorKind::size] = size_mm; }

std::optional<std::string> DescriptorSet::get(DescriptorKind kind) const {
  auto it = entries_.find(kind);
  if (it == entries_.end()) return std::nullopt;
  if (const auto* s = std::get_if<std::string>(&it->second)) return *s;
  return std::nullopt;
}

SubtypeSet DescriptorSet::subtypes() const {
  auto it = entries_.find(DescriptorKind::margin_subtypes);
  if (it == entries_.end()) return {};
  if (const auto* s = std::get_if<SubtypeSet>(&it->second)) return *s;
  return {};
}

std::optional<double> DescriptorSet::size_mm() const {
  auto it = entries_.find(DescriptorKind::size);
  if (it == entries_.end()) return std::nullopt;
  if (const auto* d = std::get_if<double>(&it->second)) return *d;
  return std::nullopt;
}

ValidatedDescriptors validate_descriptors(const DescriptorSet& ds, const DatasetConfig& cfg) {
  if (ds.empty()) fail(ErrorCode::inconsistent_descriptors, "empty descriptor set");
  DescriptorSet out;
  out.source = ds.source;
  for (const auto& [kind, value] : ds.entries()) {
    const std::string kname(to_string(kind));
    if (!cfg.is_active(kind)) fail(ErrorCode::unknown_descriptor, kname + " is not a task of config " + cfg.name);
    if (kind == DescriptorKind::size) {
      const double* mm = std::get_if<double>(&value);
      if (mm == nullptr || !std::isfinite(*mm) || *mm <= 0.0) {
        fail(ErrorCode::out_of_vocabulary, "size must be a positive number of mm");
      }
      out.set_size(*mm);
    } else if (kind == DescriptorKind::margin_subtypes) {
      const SubtypeSet* subs = std::get_if<SubtypeSet>(&value);
      if (subs == nullptr) fail(ErrorCode::out_of_vocabulary, "margin_subtypes must be a set");
      SubtypeSet normalized;
      for (const auto& s : *subs) {
        std::string n = normalize_value(kind, s);
        if (!cfg.vocabulary(kind).contains(n)) fail(ErrorCode::out_of_vocabulary, kname + "='" + s + "'");
        normalized.insert(std::move(n));
      }
      out.set_subtypes(std::move(normalized));
    } else {
      const std::string* s = std::get_if<std::string>(&value);
      if (s == nullptr) fail(ErrorCode::out_of_vocabulary, kname + " must be categorical");
      std::string n = normalize_value(kind, *s);
      if (!cfg.vocabulary(kind).contains(n)) fail(ErrorCode::out_of_vocabulary, kname + "='" + *s + "'");
      out.set(kind, std::move(n));
    }
  }
  if (!out.subtypes().empty() && out.get(DescriptorKind::margin_main) != std::string(kNonCircumscribed)) {
    fail(ErrorCode::inconsistent_descriptors, "margin subtypes require a non-circumscribed margin");
  }
  return ValidatedDescriptors(std::move(out));
}

nlohmann::json to_json(const DescriptorSet& ds) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [kind, value] : ds.entries()) {
    const std::string key(to_string(kind));
    std::visit([&](const auto& v) { j[key] = v; }, value);
  }
  return j;
}

DescriptorSet descriptors_from_json(const nlohmann::json& j) {
  DescriptorSet ds;
  for (const auto& [key, value] : j.items()) {
    auto kind = kind_from_string(key);
    if (!kind) fail(ErrorCode::unknown_descriptor, "unknown descriptor '" + key + "'");
    if (*kind == DescriptorKind::size) {
      if (!value.is_number()) fail(ErrorCode::schema_mismatch, "size must be numeric");
      ds.set_size(value.get<double>());
    } else if (*kind == DescriptorKind::margin_subtypes) {
      if (!value.is_array()) fail(ErrorCode::schema_mismatch, "margin_subtypes must be an array");
      ds.set_subtypes(value.get<SubtypeSet>());
    } else {
      if (!value.is_string()) fail(ErrorCode::schema_mismatch, key + " must be a string");
      ds.set(*kind, value.get<std::string>());
    }
  }
  return ds;
}

}  // namespace bustr::schema
