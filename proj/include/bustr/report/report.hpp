#pragma once

#include "bustr/corpus/image.hpp"
#include "bustr/schema/descriptors.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace bustr::report {

struct ProvenanceEntry {
  schema::DescriptorKind kind;
  std::string value;               // as printed in the prompt
  std::vector<std::string> extra;  // margin subtypes, sorted

  bool operator==(const ProvenanceEntry&) const = default;
};

struct PromptText {
  std::string text;
  std::vector<ProvenanceEntry> provenance;
  std::string key;  // selects the surface variant (usually the sample id)
};

struct ReportText {
  std::vector<std::string> sentences;

  std::string full_text() const;
  /// Splits at '.' followed by whitespace or end of text.
  static ReportText from_text(const std::string& text);
  bool operator==(const ReportText&) const = default;
};

inline constexpr const char* kPromptHeader = "Write a breast ultrasound report using only these findings:";

/// Clause order: size, shape, margin, echogenicity, posterior, BI-RADS,
/// pathology, histology. Size comes from the descriptor set, else from the
/// radiomics equivalent diameter, and is printed with one decimal.
PromptText format_prompt(const schema::ValidatedDescriptors& ds, const std::optional<corpus::RadiomicsFeatures>& r,
                         std::string key = {});

class ReportRealizer {
 public:
  virtual ~ReportRealizer() = default;
  virtual ReportText realize(const PromptText& prompt) const = 0;
};

/// Slot name -> surface patterns. Placeholders: {size} {shape} {margin}
/// {subtypes} {echo} {posterior} {birads} {pathology} {histology}.
struct TemplateBank {
  std::map<std::string, std::vector<std::string>> slots;

  static TemplateBank defaults();
  static TemplateBank from_json(const nlohmann::json& j);
  static TemplateBank load(const std::string& path);
  nlohmann::json to_json() const;
  std::size_t variant_count() const;
};

/// Fact-closed realizer: one sentence per slot in a fixed order, one surface
/// variant per report chosen by hash(key).
class TemplateRealizer : public ReportRealizer {
 public:
  explicit TemplateRealizer(TemplateBank bank = TemplateBank::defaults());
  ReportText realize(const PromptText& prompt) const override;
  std::size_t variant_for(const std::string& key) const;

 private:
  TemplateBank bank_;
};

/// Talks newline-delimited JSON to a child process: writes {"prompt": ...}
/// and expects {"report": ...} back. RealizerFailure on any protocol error.
class ExternalRealizer : public ReportRealizer {
 public:
  explicit ExternalRealizer(std::string command);
  ~ExternalRealizer() override;
  ExternalRealizer(const ExternalRealizer&) = delete;
  ExternalRealizer& operator=(const ExternalRealizer&) = delete;

  ReportText realize(const PromptText& prompt) const override;

 private:
  void start() const;
  void stop() const;

  std::string command_;
  mutable std::mutex mu_;
  mutable int pid_ = -1;
  mutable int to_child_ = -1;
  mutable int from_child_ = -1;
  mutable std::string buffer_;
};

ReportText realize_report(const PromptText& prompt, const ReportRealizer& realizer);

/// Replaces the number of the existing size sentence or prepends one; the
/// value is rounded to 0.1 mm. NonPositiveSize for size_mm <= 0.
ReportText insert_size(const ReportText& report, double size_mm);

}  // namespace bustr::report
