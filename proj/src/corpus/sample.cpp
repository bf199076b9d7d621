#include "bustr/corpus/sample.hpp"

#include "bustr/error.hpp"
#include "bustr/util.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace bustr::corpus {

using schema::DescriptorKind;
using schema::DescriptorSet;

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

struct Geometry {
  double cy = 0, cx = 0;
  double a = 1, b = 1, rot = 0;
  std::vector<std::pair<double, double>> harmonics;  // (amplitude, phase) for k = 2, 3, 5
  int polygon = 0;
  double polygon_phase = 0;
  double lobule_phase = 0;
  bool lobulated = false;
  std::vector<double> spikes;
  double jitter_phase = 0;
  bool jitter = false;
  double blur = 0.0;

  double boundary(double theta) const {
    const double ct = std::cos(theta), st = std::sin(theta);
    double r = a * b / std::sqrt((b * ct) * (b * ct) + (a * st) * (a * st));
    static constexpr int kOrders[] = {2, 3, 5};
    for (std::size_t i = 0; i < harmonics.size(); ++i) {
      r *= 1.0 + harmonics[i].first * std::cos(kOrders[i] * theta + harmonics[i].second);
    }
    if (polygon > 0) {
      const double sector = kTwoPi / polygon;
      double u = std::fmod(theta - polygon_phase, sector);
      if (u < 0) u += sector;
      r *= std::cos(M_PI / polygon) / std::cos(u - M_PI / polygon);
    }
    if (lobulated) r *= 1.0 + 0.09 * std::abs(std::sin(8.0 * (theta - lobule_phase)));
    if (jitter) r *= 1.0 + 0.1 * std::cos(7.0 * theta + jitter_phase);
    const double base = std::sqrt(a * b);
    for (double s : spikes) {
      double d = std::remainder(theta - s, kTwoPi);
      r += 0.5 * base * std::exp(-(d / 0.06) * (d / 0.06));
    }
    return r;
  }

  // Signed distance proxy in pixels: negative inside.
  double signed_distance(double row, double col) const {
    const double dy = row - cy, dx = col - cx;
    const double lx = std::cos(rot) * dx + std::sin(rot) * dy;
    const double ly = -std::sin(rot) * dx + std::cos(rot) * dy;
    const double rho = std::hypot(lx, ly);
    return rho - boundary(std::atan2(ly, lx));
  }
};

std::string value_or(const DescriptorSet& ds, DescriptorKind k, const char* fallback) {
  auto v = ds.get(k);
  return v ? *v : std::string(fallback);
}

}  // namespace

double echo_level(const std::string& echo) {
  if (echo == "anechoic") return 0.05;
  if (echo == "hypoechoic") return 0.25;
  if (echo == "hyperechoic") return 0.8;
  if (echo == "heterogeneous") return 0.45;
  if (echo == "complex cystic/solid") return 0.375;
  return 0.5;
}

BusSample synthesize_sample(const schema::ValidatedDescriptors& target, std::uint64_t seed, const RenderConfig& rc,
                            std::string id) {
  const DescriptorSet& ds = target.get();
  const std::string shape = value_or(ds, DescriptorKind::shape, "oval");
  const std::string margin = value_or(ds, DescriptorKind::margin_main, "circumscribed");
  const std::string echo = value_or(ds, DescriptorKind::echogenicity, "isoechoic");
  const std::string posterior = value_or(ds, DescriptorKind::posterior, "none");
  const schema::SubtypeSet subtypes = ds.subtypes();
  if (!subtypes.empty() && margin != schema::kNonCircumscribed) {
    fail(ErrorCode::inconsistent_descriptors, "margin subtypes on a circumscribed lesion");
  }
  if (rc.side < 16) fail(ErrorCode::bad_geometry, "render side below 16");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };
  const double side = rc.side;

  Geometry g;
  double radius = between(0.19, 0.27) * side;
  if (auto mm = ds.size_mm()) radius = std::clamp(*mm / 2.0 / rc.spacing_mm, 2.0, 0.3 * side);
  g.cy = between(0.36, 0.42) * side;
  g.cx = between(0.44, 0.56) * side;
  if (shape == "round") {
    g.a = g.b = radius;
  } else {
    const double q = shape == "oval" ? between(0.45, 0.6) : between(0.75, 0.95);
    g.a = radius / std::sqrt(q);
    g.b = radius * std::sqrt(q);
    g.rot = between(-0.35, 0.35);
  }
  if (shape == "irregular") {
    for (int i = 0; i < 3; ++i) g.harmonics.emplace_back(between(0.16, 0.24), between(0.0, kTwoPi));
  }
  if (margin == schema::kNonCircumscribed) {
    if (subtypes.count("angular")) {
      g.polygon = 5;
      g.polygon_phase = between(0.0, kTwoPi);
    }
    if (subtypes.count("microlobulated")) {
      g.lobulated = true;
      g.lobule_phase = between(0.0, kTwoPi);
    }
    if (subtypes.count("spiculated")) {
      const int n = 9 + static_cast<int>(rng() % 4);
      for (int i = 0; i < n; ++i) g.spikes.push_back(between(0.0, kTwoPi));
    }
    g.blur = subtypes.count("indistinct") ? 3.0 : 1.5;
    g.jitter = true;
    g.jitter_phase = between(0.0, kTwoPi);
  }
  const double tex_phase_r = between(0.0, kTwoPi), tex_phase_c = between(0.0, kTwoPi);

  const int n = rc.side;
  Pixels dist(n, n);
  LesionMask mask;
  mask.pixels = MaskPixels::Zero(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      dist(r, c) = g.signed_distance(r, c);
      mask.pixels(r, c) = dist(r, c) < 0.0;
    }
  }
  if (mask.count() == 0) fail(ErrorCode::empty_mask, "rendered lesion is empty");

  Pixels img = Pixels::Constant(n, n, rc.background);
  if (posterior != "none") {
    const double left_factor = posterior == "shadowing" ? 0.4 : 1.5;
    const double right_factor = posterior == "enhancement" ? 1.5 : 0.4;
    for (int c = 0; c < n; ++c) {
      int bottom = -1;
      for (int r = 0; r < n; ++r) {
        if (mask.pixels(r, c)) bottom = r;
      }
      if (bottom < 0) continue;
      const double factor = c < g.cx ? left_factor : right_factor;
      for (int r = bottom + 1; r < n; ++r) img(r, c) *= factor;
    }
  }
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double d = dist(r, c);
      double alpha;
      if (g.blur > 0.0) {
        alpha = std::clamp(0.5 - d / (2.0 * g.blur), 0.0, 1.0);
      } else {
        alpha = d < 0.0 ? 1.0 : 0.0;
      }
      if (alpha <= 0.0) continue;
      double level = echo_level(echo);
      if (echo == "heterogeneous") {
        level = std::sin(0.8 * r + tex_phase_r) * std::sin(0.8 * c + tex_phase_c) > 0.0 ? 0.22 : 0.65;
      } else if (echo == "complex cystic/solid") {
        level = r < g.cy ? 0.05 : 0.7;
      }
      img(r, c) = alpha * level + (1.0 - alpha) * img(r, c);
    }
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    img.data()[i] = std::clamp(img.data()[i] * (1.0 + rc.speckle * gauss(rng)), 0.0, 1.0);
  }
  quantize_8bit(img);

  BusSample s;
  s.id = std::move(id);
  s.image.pixels = std::move(img);
  s.image.spacing_mm_per_px = rc.spacing_mm;
  s.radiomics = extract_radiomics(s.image, mask);
  s.mask = std::move(mask);
  s.descriptors = ds;
  return s;
}

int suspicion_score(const DescriptorSet& ds) {
  int s = 0;
  s += ds.get(DescriptorKind::shape) == "irregular";
  s += ds.get(DescriptorKind::margin_main) == std::string(schema::kNonCircumscribed);
  s += ds.get(DescriptorKind::posterior) == "shadowing";
  const auto echo = ds.get(DescriptorKind::echogenicity);
  s += echo == "hypoechoic" || echo == "heterogeneous";
  return s;
}

std::string birads_from_descriptors(const DescriptorSet& ds, bool lettered) {
  switch (suspicion_score(ds)) {
    case 0: return "2";
    case 1: return "3";
    case 2:
      if (!lettered) return "4";
      return ds.subtypes().count("spiculated") ? "4B" : "4A";
    case 3: return lettered ? "4C" : "4";
    default: return "5";
  }
}

namespace {

template <std::size_t N>
std::string pick(std::mt19937_64& rng, const std::array<const char*, N>& names, const std::array<double, N>& w) {
  std::discrete_distribution<int> d(w.begin(), w.end());
  return names[static_cast<std::size_t>(d(rng))];
}

DescriptorSet draw_breast_descriptors(std::mt19937_64& rng) {
  DescriptorSet ds;
  ds.set(DescriptorKind::shape, pick<3>(rng, {"oval", "round", "irregular"}, {97, 15, 140}));
  const std::string margin = pick<2>(rng, {"circumscribed", "non-circumscribed"}, {115, 137});
  ds.set(DescriptorKind::margin_main, margin);
  if (margin == schema::kNonCircumscribed) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    schema::SubtypeSet subs;
    const std::array<std::pair<const char*, double>, 4> rates = {
        {{"angular", 42.0}, {"indistinct", 115.0}, {"microlobulated", 36.0}, {"spiculated", 33.0}}};
    for (const auto& [name, count] : rates) {
      if (uni(rng) < count / 137.0) subs.insert(name);
    }
    ds.set_subtypes(std::move(subs));
  }
  ds.set(DescriptorKind::echogenicity,
         pick<6>(rng, {"anechoic", "hypoechoic", "hyperechoic", "isoechoic", "heterogeneous", "complex cystic/solid"},
                 {15, 148, 9, 12, 57, 11}));
  ds.set(DescriptorKind::posterior,
         pick<4>(rng, {"none", "enhancement", "shadowing", "combined features"}, {159, 36, 50, 7}));
  return ds;
}

std::string draw_histology(std::mt19937_64& rng, bool malignant) {
  if (malignant) {
    return pick<3>(rng, {"invasive ductal carcinoma", "invasive lobular carcinoma", "other"}, {520, 42, 45});
  }
  return pick<9>(rng,
                 {"fibroadenoma", "cyst", "fibrocystic changes", "intraductal papilloma", "sclerosing adenosis",
                  "hyperplasia", "lipoma", "phyllodes tumor", "other"},
                 {835, 142, 106, 41, 37, 31, 17, 13, 46});
}

std::string sample_id(const std::string& prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d", prefix.c_str(), i);
  return buf;
}

}  // namespace

std::vector<BusSample> sample_corpus(const schema::DatasetConfig& cfg, int n, std::uint64_t seed,
                                     const RenderConfig& render) {
  if (n < 1) fail(ErrorCode::usage, "corpus size must be positive");
  schema::check_config(cfg);
  const schema::DatasetConfig latent_cfg = schema::breast_config();
  const bool lettered = cfg.has_vocabulary(DescriptorKind::birads) &&
                        cfg.vocabulary(DescriptorKind::birads).contains("4A");
  const bool descriptor_mode = cfg.is_active(DescriptorKind::shape);
  std::vector<BusSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    DescriptorSet latent;
    DescriptorSet visible;
    if (descriptor_mode) {
      latent = draw_breast_descriptors(rng);
      visible = latent;
      if (cfg.is_active(DescriptorKind::birads)) visible.set(DescriptorKind::birads, birads_from_descriptors(latent, lettered));
    } else {
      const std::string birads = pick<4>(rng, {"2", "3", "4", "5"}, {562, 463, 693, 157});
      do {
        latent = draw_breast_descriptors(rng);
      } while (birads_from_descriptors(latent, false) != birads);
      std::uniform_real_distribution<double> uni(0.0, 1.0);
      const bool malignant = birads == "5" || (birads == "4" && uni(rng) < 450.0 / 693.0);
      visible.set(DescriptorKind::birads, birads);
      if (cfg.is_active(DescriptorKind::pathology)) visible.set(DescriptorKind::pathology, malignant ? "malignant" : "benign");
      const std::string histology = draw_histology(rng, malignant);
      if (cfg.is_active(DescriptorKind::histology)) visible.set(DescriptorKind::histology, histology);
    }
    for (auto it = visible.entries().begin(); it != visible.entries().end();) {
      const DescriptorKind k = it->first;
      ++it;
      if (!cfg.is_active(k)) visible.erase(k);
    }
    const std::uint64_t render_seed = rng();
    BusSample s = synthesize_sample(schema::validate_descriptors(latent, latent_cfg), render_seed, render,
                                    sample_id(cfg.name, i));
    if (cfg.is_active(DescriptorKind::size) && s.radiomics) {
      visible.set_size(std::round(s.radiomics->equiv_diameter_mm * 10.0) / 10.0);
    }
    if (!cfg.has_masks) {
      s.mask.reset();
      s.radiomics.reset();
    }
    s.descriptors = schema::validate_descriptors(visible, cfg).get();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace bustr::corpus
