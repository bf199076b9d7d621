#include "bustr/corpus/io.hpp"

#include "bustr/error.hpp"
#include "bustr/util.hpp"

#include <fstream>
#include <sstream>

namespace bustr::corpus {

namespace fs = std::filesystem;

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir / "images");
  if (corpus.config.has_masks) fs::create_directories(dir / "masks");
  schema::save_config(corpus.config, dir / "dataset.json");
  std::ostringstream manifest;
  for (const BusSample& s : corpus.samples) {
    nlohmann::json line;
    line["id"] = s.id;
    line["image"] = "images/" + s.id + ".png";
    write_png(dir / "images" / (s.id + ".png"), s.image.pixels);
    if (s.mask) {
      fs::create_directories(dir / "masks");
      line["mask"] = "masks/" + s.id + ".png";
      write_mask_png(dir / "masks" / (s.id + ".png"), *s.mask);
    } else {
      line["mask"] = nullptr;
    }
    if (s.report) {
      line["report"] = "images/" + s.id + ".txt";
      write_text_file((dir / "images" / (s.id + ".txt")).string(), *s.report);
    } else {
      line["report"] = nullptr;
    }
    line["descriptors"] = schema::to_json(s.descriptors);
    line["spacing"] = s.image.spacing_mm_per_px;
    manifest << line.dump() << '\n';
  }
  write_text_file((dir / "manifest.jsonl").string(), manifest.str());
}

Corpus load_corpus(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.jsonl";
  if (!fs::exists(manifest_path)) fail(ErrorCode::missing_file, "no manifest.jsonl in " + dir.string());
  Corpus corpus;
  corpus.config = fs::exists(dir / "dataset.json") ? schema::load_config(dir / "dataset.json") : schema::breast_config();
  std::istringstream in(read_text_file(manifest_path.string()));
  std::string text;
  int line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    const std::string where = "manifest line " + std::to_string(line_no);
    nlohmann::json line;
    try {
      line = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::schema_mismatch, where + ": " + e.what());
    }
    auto existing = [&](const char* key) -> std::optional<fs::path> {
      if (!line.contains(key) || line[key].is_null()) return std::nullopt;
      if (!line[key].is_string()) fail(ErrorCode::schema_mismatch, where + ": " + key + " is not a path");
      fs::path p = dir / line[key].get<std::string>();
      if (!fs::exists(p)) fail(ErrorCode::schema_mismatch, where + ": referenced file missing: " + p.string());
      return p;
    };
    BusSample s;
    try {
      s.id = line.at("id").get<std::string>();
      s.image.spacing_mm_per_px = line.value("spacing", 0.2);
      s.descriptors = schema::descriptors_from_json(line.at("descriptors"));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::schema_mismatch, where + ": " + e.what());
    }
    auto image = existing("image");
    if (!image) fail(ErrorCode::schema_mismatch, where + ": no image");
    s.image.pixels = read_png(*image);
    if (auto mask = existing("mask")) {
      s.mask = read_mask_png(*mask);
      s.radiomics = extract_radiomics(s.image, *s.mask);
    }
    if (auto report = existing("report")) s.report = read_text_file(report->string());
    s.descriptors = schema::validate_descriptors(s.descriptors, corpus.config).get();
    corpus.samples.push_back(std::move(s));
  }
  return corpus;
}

void save_folds(const FoldPlan& plan, const fs::path& dir) {
  write_text_file((dir / "folds.json").string(), to_json(plan).dump(1) + "\n");
}

FoldPlan load_folds(const fs::path& dir) {
  const std::string text = read_text_file((dir / "folds.json").string());
  try {
    return fold_plan_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::schema_mismatch, std::string("folds.json: ") + e.what());
  }
}

std::string corpus_digest(const fs::path& dir) {
  const std::string manifest = read_text_file((dir / "manifest.jsonl").string());
  std::uint64_t h = fnv1a(manifest);
  std::istringstream in(manifest);
  std::string text;
  while (std::getline(in, text)) {
    if (text.empty()) continue;
    const auto line = nlohmann::json::parse(text);
    for (const char* key : {"image", "mask", "report"}) {
      if (line.contains(key) && line[key].is_string()) {
        h = mix_seed(h, fnv1a(read_text_file((dir / line[key].get<std::string>()).string())));
      }
    }
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace bustr::corpus
