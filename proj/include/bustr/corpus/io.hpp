#pragma once

#include "bustr/corpus/folds.hpp"
#include "bustr/corpus/sample.hpp"

#include <filesystem>

namespace bustr::corpus {

/// Directory layout: dataset.json (config), manifest.jsonl (one sample per
/// line), images/<id>.png, masks/<id>.png, images/<id>.txt for reports.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

/// MissingFile when the manifest is absent; SchemaMismatch when a manifest
/// line is malformed or names a file that does not exist.
Corpus load_corpus(const std::filesystem::path& dir);

void save_folds(const FoldPlan& plan, const std::filesystem::path& dir);
FoldPlan load_folds(const std::filesystem::path& dir);

/// Stable digest over manifest.jsonl and every referenced file.
std::string corpus_digest(const std::filesystem::path& dir);

}  // namespace bustr::corpus
