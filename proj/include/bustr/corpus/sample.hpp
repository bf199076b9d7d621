#pragma once

#include "bustr/corpus/image.hpp"
#include "bustr/schema/descriptors.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bustr::corpus {

struct BusSample {
  std::string id;
  BusImage image;
  std::optional<LesionMask> mask;
  schema::DescriptorSet descriptors;
  std::optional<RadiomicsFeatures> radiomics;
  std::optional<std::string> report;
};

struct Corpus {
  schema::DatasetConfig config;
  std::vector<BusSample> samples;
};

struct RenderConfig {
  int side = 64;
  double spacing_mm = 0.2;
  double background = 0.5;
  double speckle = 0.15;
};

/// Nominal lesion intensity per echogenicity class.
double echo_level(const std::string& echogenicity);

/// Renders a lesion whose appearance encodes shape, margin (with subtypes),
/// echogenicity and posterior features. Missing descriptors fall back to an
/// oval, circumscribed, isoechoic lesion without posterior features. A size
/// entry fixes the lesion's equivalent diameter. Deterministic in `seed`.
BusSample synthesize_sample(const schema::ValidatedDescriptors& target, std::uint64_t seed,
                            const RenderConfig& render = {}, std::string id = "sample");

/// Suspicion score: irregular shape + non-circumscribed margin + shadowing +
/// hypoechoic or heterogeneous echo.
int suspicion_score(const schema::DescriptorSet& ds);

/// BI-RADS category from the suspicion score. Without letters (BUS-BRA)
/// scores 2 and 3 both map to "4".
std::string birads_from_descriptors(const schema::DescriptorSet& ds, bool lettered);

/// Draws n samples whose descriptor frequencies follow the published
/// per-dataset distributions. BrEaST-style configs receive size from the
/// rendered mask; mask-less configs drop the mask and radiomics.
std::vector<BusSample> sample_corpus(const schema::DatasetConfig& cfg, int n, std::uint64_t seed,
                                     const RenderConfig& render = {});

}  // namespace bustr::corpus
