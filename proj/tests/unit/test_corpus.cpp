#include "doctest.h"

#include "bustr/corpus/io.hpp"
#include "bustr/error.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace bustr;
using namespace bustr::corpus;
using schema::DescriptorKind;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::usage;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("bustr_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

schema::ValidatedDescriptors breast_target(std::map<DescriptorKind, std::string> values,
                                           schema::SubtypeSet subs = {}) {
  schema::DescriptorSet ds;
  for (auto& [k, v] : values) ds.set(k, v);
  ds.set_subtypes(std::move(subs));
  return schema::validate_descriptors(ds, schema::breast_config());
}

double binomial_sigma(int n, double p) { return std::sqrt(n * p * (1 - p)); }

}  // namespace

TEST_CASE("radiomics_of_filled_square") {
  BusImage img{Pixels::Constant(10, 10, 0.5), 1.0};
  LesionMask m{MaskPixels::Zero(10, 10)};
  m.pixels.block(3, 2, 4, 4).setOnes();
  const auto f = extract_radiomics(img, m);
  CHECK(f.area_px == 16);
  CHECK(f.mean_intensity == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(f.std_intensity == doctest::Approx(0.0));
  // 2 * sqrt(16 / pi)
  CHECK(f.equiv_diameter_mm == doctest::Approx(4.513516668382).epsilon(1e-10));
  CHECK(f.bbox_w_mm == 4.0);
  CHECK(f.bbox_h_mm == 4.0);
}

TEST_CASE("radiomics_errors") {
  BusImage img{Pixels::Constant(8, 8, 0.5), 1.0};
  CHECK(code_of([&] { extract_radiomics(img, LesionMask{MaskPixels::Zero(8, 8)}); }) == ErrorCode::empty_mask);
  CHECK(code_of([&] { extract_radiomics(img, LesionMask{MaskPixels::Ones(8, 9)}); }) == ErrorCode::shape_mismatch);
}

TEST_CASE("radiomics_std_matches_direct_computation") {
  BusImage img{Pixels::Zero(4, 4), 0.5};
  LesionMask m{MaskPixels::Zero(4, 4)};
  const double vals[] = {0.1, 0.4, 0.7};
  for (int i = 0; i < 3; ++i) {
    img.pixels(1, i) = vals[i];
    m.pixels(1, i) = 1;
  }
  const auto f = extract_radiomics(img, m);
  CHECK(f.mean_intensity == doctest::Approx(0.4));
  CHECK(f.std_intensity == doctest::Approx(std::sqrt((0.09 + 0.0 + 0.09) / 3.0)));
  CHECK(f.bbox_w_mm == doctest::Approx(1.5));
}

TEST_CASE("anechoic_enhancement_lesion_is_dark_with_bright_column") {
  auto s = synthesize_sample(breast_target({{DescriptorKind::shape, "oval"},
                                            {DescriptorKind::margin_main, "circumscribed"},
                                            {DescriptorKind::echogenicity, "anechoic"},
                                            {DescriptorKind::posterior, "enhancement"}}),
                             7);
  REQUIRE(s.radiomics);
  CHECK(s.radiomics->mean_intensity < 0.15);
  LesionMask column{MaskPixels::Zero(s.image.rows(), s.image.cols())};
  for (int c = 0; c < s.image.cols(); ++c) {
    int bottom = -1;
    for (int r = 0; r < s.image.rows(); ++r) {
      if (s.mask->pixels(r, c)) bottom = r;
    }
    for (int r = bottom + 1; bottom >= 0 && r < s.image.rows(); ++r) column.pixels(r, c) = 1;
  }
  CHECK(extract_radiomics(s.image, column).mean_intensity > 0.5);
}

TEST_CASE("synthesis_is_deterministic") {
  auto t = breast_target({{DescriptorKind::shape, "irregular"},
                          {DescriptorKind::margin_main, "non-circumscribed"},
                          {DescriptorKind::echogenicity, "heterogeneous"},
                          {DescriptorKind::posterior, "combined features"}},
                         {"spiculated", "angular"});
  auto a = synthesize_sample(t, 3);
  auto b = synthesize_sample(t, 3);
  CHECK(a.image.pixels == b.image.pixels);
  CHECK(a.mask->pixels == b.mask->pixels);
  auto c = synthesize_sample(t, 4);
  CHECK(a.image.pixels != c.image.pixels);
}

TEST_CASE("subtypes_on_circumscribed_margin_are_inconsistent") {
  CHECK(code_of([] {
          breast_target({{DescriptorKind::margin_main, "circumscribed"}}, {"spiculated"});
        }) == ErrorCode::inconsistent_descriptors);
}

TEST_CASE("echogenicity_band_recovered_by_radiomics") {
  const std::map<std::string, std::pair<double, double>> bands = {
      {"anechoic", {0.0, 0.15}},   {"hypoechoic", {0.15, 0.38}},          {"isoechoic", {0.38, 0.62}},
      {"hyperechoic", {0.62, 1.0}}, {"complex cystic/solid", {0.2, 0.55}}};
  const char* shapes[] = {"oval", "round", "irregular"};
  for (const auto& [echo, band] : bands) {
    for (int seed = 0; seed < 12; ++seed) {
      const bool non_circ = seed % 2 == 1;
      schema::SubtypeSet subs;
      if (non_circ && seed % 4 == 1) subs = {"indistinct", "spiculated"};
      if (non_circ && seed % 4 == 3) subs = {"microlobulated", "angular"};
      auto s = synthesize_sample(
          breast_target({{DescriptorKind::shape, shapes[seed % 3]},
                         {DescriptorKind::margin_main, non_circ ? "non-circumscribed" : "circumscribed"},
                         {DescriptorKind::echogenicity, echo},
                         {DescriptorKind::posterior, seed % 3 == 0 ? "shadowing" : "none"}},
                        subs),
          static_cast<std::uint64_t>(seed));
      INFO(echo << " seed " << seed);
      CHECK(s.radiomics->mean_intensity >= band.first);
      CHECK(s.radiomics->mean_intensity <= band.second);
    }
  }
}

TEST_CASE("rendered_images_are_valid_intensities") {
  const auto samples = sample_corpus(schema::breast_config(), 20, 5);
  for (const auto& s : samples) {
    CHECK(s.image.rows() == 64);
    CHECK(s.image.pixels.allFinite());
    CHECK(s.image.pixels.minCoeff() >= 0.0);
    CHECK(s.image.pixels.maxCoeff() <= 1.0);
    CHECK(s.mask->count() >= 1);
    CHECK(*s.descriptors.size_mm() > 0.0);
  }
}

TEST_CASE("birads_rule_table") {
  schema::DescriptorSet ds;
  ds.set(DescriptorKind::shape, "oval");
  ds.set(DescriptorKind::margin_main, "circumscribed");
  ds.set(DescriptorKind::posterior, "none");
  ds.set(DescriptorKind::echogenicity, "anechoic");
  CHECK(birads_from_descriptors(ds, true) == "2");
  ds.set(DescriptorKind::shape, "irregular");
  CHECK(birads_from_descriptors(ds, true) == "3");
  ds.set(DescriptorKind::margin_main, "non-circumscribed");
  CHECK(birads_from_descriptors(ds, true) == "4A");
  ds.set_subtypes({"spiculated"});
  CHECK(birads_from_descriptors(ds, true) == "4B");
  CHECK(birads_from_descriptors(ds, false) == "4");
  ds.set(DescriptorKind::posterior, "shadowing");
  CHECK(birads_from_descriptors(ds, true) == "4C");
  ds.set(DescriptorKind::echogenicity, "heterogeneous");
  CHECK(birads_from_descriptors(ds, true) == "5");
}

TEST_CASE("breast_shape_marginals_match_table") {
  const int n = 252;
  const auto samples = sample_corpus(schema::breast_config(), n, 1);
  std::map<std::string, int> counts;
  for (const auto& s : samples) counts[*s.descriptors.get(DescriptorKind::shape)]++;
  const std::map<std::string, int> table = {{"oval", 97}, {"round", 15}, {"irregular", 140}};
  for (const auto& [name, expected] : table) {
    const double p = expected / 252.0;
    INFO(name);
    CHECK(std::abs(counts[name] - n * p) <= 3 * binomial_sigma(n, p));
  }
}

TEST_CASE("breast_marginal_fidelity_at_n_500") {
  const int n = 600;
  const auto samples = sample_corpus(schema::breast_config(), n, 21);
  const std::map<DescriptorKind, std::map<std::string, double>> table = {
      {DescriptorKind::shape, {{"oval", 97}, {"round", 15}, {"irregular", 140}}},
      {DescriptorKind::margin_main, {{"circumscribed", 115}, {"non-circumscribed", 137}}},
      {DescriptorKind::echogenicity,
       {{"anechoic", 15}, {"hypoechoic", 148}, {"hyperechoic", 9}, {"isoechoic", 12}, {"heterogeneous", 57},
        {"complex cystic/solid", 11}}},
      {DescriptorKind::posterior, {{"none", 159}, {"enhancement", 36}, {"shadowing", 50}, {"combined features", 7}}},
  };
  for (const auto& [kind, dist] : table) {
    std::map<std::string, int> counts;
    for (const auto& s : samples) counts[*s.descriptors.get(kind)]++;
    for (const auto& [name, c] : dist) {
      const double p = c / 252.0;
      INFO(name);
      CHECK(std::abs(counts[name] - n * p) <= 3 * binomial_sigma(n, p));
    }
  }
  int non_circ = 0;
  std::map<std::string, int> subs;
  for (const auto& s : samples) {
    if (s.descriptors.get(DescriptorKind::margin_main) != "non-circumscribed") continue;
    ++non_circ;
    for (const auto& t : s.descriptors.subtypes()) subs[t]++;
  }
  const std::map<std::string, double> sub_table = {
      {"angular", 42}, {"indistinct", 115}, {"microlobulated", 36}, {"spiculated", 33}};
  for (const auto& [name, c] : sub_table) {
    const double p = c / 137.0;
    INFO(name);
    CHECK(std::abs(subs[name] - non_circ * p) <= 3 * binomial_sigma(non_circ, p));
  }
}

TEST_CASE("busbra_pathology_split_and_rules") {
  const int n = 1875;
  const auto samples = sample_corpus(schema::busbra_config(), n, 2);
  int benign = 0;
  std::map<std::string, int> birads;
  for (const auto& s : samples) {
    const auto path = *s.descriptors.get(DescriptorKind::pathology);
    const auto b = *s.descriptors.get(DescriptorKind::birads);
    birads[b]++;
    benign += path == "benign";
    if (b == "2" || b == "3") CHECK(path == "benign");
    if (b == "5") CHECK(path == "malignant");
    CHECK_FALSE(s.mask.has_value());
    CHECK_FALSE(s.descriptors.has(DescriptorKind::shape));
    CHECK_FALSE(s.descriptors.has(DescriptorKind::size));
  }
  const double p = 1268.0 / 1875.0;
  CHECK(std::abs(benign - n * p) <= 3 * binomial_sigma(n, p));
  const std::map<std::string, double> table = {{"2", 562}, {"3", 463}, {"4", 693}, {"5", 157}};
  for (const auto& [name, c] : table) {
    const double q = c / 1875.0;
    CHECK(std::abs(birads[name] - n * q) <= 3 * binomial_sigma(n, q));
  }
}

TEST_CASE("sample_corpus_is_deterministic") {
  const auto a = sample_corpus(schema::breast_config(), 10, 99);
  const auto b = sample_corpus(schema::breast_config(), 10, 99);
  REQUIRE(a.size() == 10);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].descriptors == b[i].descriptors);
    CHECK(a[i].image.pixels == b[i].image.pixels);
  }
}

TEST_CASE("pad_and_resize_geometry") {
  BusImage wide{Pixels::Constant(50, 100, 0.7), 0.2};
  auto out = pad_and_resize(wide, 224);
  CHECK(out.rows() == 224);
  CHECK(out.cols() == 224);
  CHECK(out.pixels(0, 112) == doctest::Approx(0.0));
  CHECK(out.pixels(112, 112) == doctest::Approx(0.7));
  BusImage square{Pixels::Constant(40, 40, 0.3), 0.2};
  auto same = pad_and_resize(square, 40);
  CHECK(same.pixels == square.pixels);
  auto up = pad_and_resize(square, 97);
  CHECK((up.pixels.array() - 0.3).abs().maxCoeff() < 1e-12);
  Pixels ramp(20, 20);
  for (int r = 0; r < 20; ++r) ramp.row(r).setConstant(r / 19.0);
  auto small = pad_and_resize(BusImage{ramp, 0.2}, 16);
  CHECK(small.rows() == 16);
  CHECK(small.pixels.minCoeff() >= 0.0);
}

TEST_CASE("folds_partition_and_split_sizes") {
  std::vector<std::string> ids, labels;
  const char* classes[] = {"2", "3", "4A", "4B", "4C", "5"};
  for (int i = 0; i < 100; ++i) {
    ids.push_back("s" + std::to_string(i));
    labels.push_back(classes[(i * 7) % 6]);
  }
  const auto plan = make_folds(ids, labels, 5, 42);
  std::set<std::string> seen;
  for (const auto& f : plan.folds) {
    CHECK(f.test.size() == 20);
    CHECK(f.train.size() == 64);
    CHECK(f.val.size() == 16);
    std::set<std::string> tr(f.train.begin(), f.train.end()), va(f.val.begin(), f.val.end());
    for (const auto& id : f.test) {
      CHECK(seen.insert(id).second);
      CHECK(tr.count(id) == 0);
      CHECK(va.count(id) == 0);
    }
    for (const auto& id : f.val) CHECK(tr.count(id) == 0);
    CHECK(tr.size() + va.size() + f.test.size() == 100);
  }
  CHECK(seen.size() == 100);
  CHECK(code_of([&] { make_folds({"a", "b"}, {"2", "3"}, 5, 1); }) == ErrorCode::too_few_samples);
}

TEST_CASE("folds_are_stratified_within_one") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const int n = 30 + static_cast<int>(rng() % 60);
    std::vector<std::string> ids, labels;
    for (int i = 0; i < n; ++i) {
      ids.push_back("x" + std::to_string(i));
      labels.push_back(std::to_string(rng() % 4));
    }
    const auto plan = make_folds(ids, labels, 5, seed);
    std::map<std::string, int> total;
    for (const auto& l : labels) total[l]++;
    std::map<std::string, std::string> label_of;
    for (int i = 0; i < n; ++i) label_of[ids[i]] = labels[i];
    for (const auto& f : plan.folds) {
      std::map<std::string, int> hist;
      for (const auto& id : f.test) hist[label_of[id]]++;
      for (const auto& [l, c] : total) CHECK(std::abs(hist[l] - c / 5.0) <= 1.0);
    }
    const auto again = make_folds(ids, labels, 5, seed);
    CHECK(to_json(again) == to_json(plan));
  }
}

TEST_CASE("corpus_save_load_round_trip") {
  const auto dir = scratch("corpus_rt");
  Corpus c{schema::breast_config(), sample_corpus(schema::breast_config(), 6, 8)};
  c.samples[0].report = "The mass is oval.";
  save_corpus(c, dir);
  const auto back = load_corpus(dir);
  REQUIRE(back.samples.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(back.samples[i].id == c.samples[i].id);
    CHECK(back.samples[i].descriptors == c.samples[i].descriptors);
    CHECK(back.samples[i].image.pixels == c.samples[i].image.pixels);
    CHECK(back.samples[i].mask->pixels == c.samples[i].mask->pixels);
  }
  CHECK(back.samples[0].report == "The mass is oval.");
  CHECK_FALSE(back.samples[1].report.has_value());
  const auto digest = corpus_digest(dir);
  save_corpus(c, dir);
  CHECK(corpus_digest(dir) == digest);

  std::filesystem::remove(dir / ("images/" + c.samples[2].id + ".png"));
  CHECK(code_of([&] { load_corpus(dir); }) == ErrorCode::schema_mismatch);
  std::filesystem::remove(dir / "manifest.jsonl");
  CHECK(code_of([&] { load_corpus(dir); }) == ErrorCode::missing_file);
  std::filesystem::remove_all(dir);
}

TEST_CASE("folds_json_round_trip") {
  const auto dir = scratch("folds_rt");
  std::filesystem::create_directories(dir);
  std::vector<std::string> ids{"a", "b", "c", "d", "e", "f", "g"};
  std::vector<std::string> labels{"2", "2", "3", "3", "3", "5", "5"};
  const auto plan = make_folds(ids, labels, 3, 4);
  save_folds(plan, dir);
  CHECK(to_json(load_folds(dir)) == to_json(plan));
  std::filesystem::remove_all(dir);
}
