#include "bustr/vision/model.hpp"

#include "bustr/error.hpp"
#include "bustr/util.hpp"

#include <cmath>

namespace bustr::vision {

using schema::DescriptorKind;

nlohmann::json to_json(const EncoderConfig& c) {
  return {{"side", c.side},     {"patch", c.patch},   {"window", c.window}, {"embed", c.embed},
          {"heads", c.heads},   {"depth1", c.depth1}, {"depth2", c.depth2}, {"mlp_ratio", c.mlp_ratio}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.side = j.value("side", c.side);
  c.patch = j.value("patch", c.patch);
  c.window = j.value("window", c.window);
  c.embed = j.value("embed", c.embed);
  c.heads = j.value("heads", c.heads);
  c.depth1 = j.value("depth1", c.depth1);
  c.depth2 = j.value("depth2", c.depth2);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  return c;
}

void check_geometry(const EncoderConfig& cfg, int rows, int cols) {
  if (rows != cols) fail(ErrorCode::bad_geometry, "image is not square");
  if (rows != cfg.side) {
    fail(ErrorCode::bad_geometry, "image side " + std::to_string(rows) + " != encoder side " + std::to_string(cfg.side));
  }
  if (cfg.patch <= 0 || cfg.side % cfg.patch != 0) fail(ErrorCode::bad_geometry, "side not divisible by patch");
  const int g = cfg.grid();
  if (g % 2 != 0) fail(ErrorCode::bad_geometry, "patch grid must be even for the merge");
  if (cfg.window <= 0 || (g > cfg.window && g % cfg.window != 0)) {
    fail(ErrorCode::bad_geometry, "patch grid not divisible by window");
  }
}

// ---------------------------------------------------------------------------

SwinBlock::SwinBlock(const std::string& name, int grid, int dim, int window, int shift, int heads, int mlp_ratio,
                     Rng& rng)
    : ln1_(name + ".ln1", dim),
      ln2_(name + ".ln2", dim),
      attn_(name + ".attn", dim, heads, rng),
      mlp_(name + ".mlp", dim, dim * mlp_ratio, rng) {
  if (grid <= window) {
    window = grid;
    shift = 0;
  }
  const int span = 2 * window - 1;
  rel_bias_ = nn::Parameter(name + ".rel_bias", nn::normal_matrix(heads, span * span, 0.02, rng));

  const int n = grid * grid;
  struct Pos {
    int win, r, c, region;
  };
  auto region = [&](int v) { return v < grid - window ? 0 : (v < grid - shift ? 1 : 2); };
  std::vector<Pos> pos(static_cast<std::size_t>(n));
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      // coordinates after the cyclic shift by -shift
      const int rr = ((r - shift) % grid + grid) % grid;
      const int cc = ((c - shift) % grid + grid) % grid;
      const int wins = grid / window;
      Pos p;
      p.win = (rr / window) * wins + cc / window;
      p.r = rr % window;
      p.c = cc % window;
      p.region = shift > 0 ? region(rr) * 3 + region(cc) : 0;
      pos[static_cast<std::size_t>(r * grid + c)] = p;
    }
  }
  mask_ = Matrix::Zero(n, n);
  Eigen::MatrixXi rel = Eigen::MatrixXi::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const Pos& a = pos[static_cast<std::size_t>(i)];
      const Pos& b = pos[static_cast<std::size_t>(j)];
      if (a.win != b.win) {
        mask_(i, j) = -1e9;
        continue;
      }
      if (a.region != b.region) mask_(i, j) = -100.0;
      rel(i, j) = (a.r - b.r + window - 1) * span + (a.c - b.c + window - 1);
    }
  }
  for (int h = 0; h < heads; ++h) rel_index_.push_back(rel.array() + h * span * span);
}

Var SwinBlock::operator()(Tape& tape, const Var& x) const {
  const Var table = tape.leaf(rel_bias_);
  std::vector<Var> bias;
  bias.reserve(rel_index_.size());
  for (const auto& idx : rel_index_) bias.push_back(add_const(gather_elements(table, idx), mask_));
  const Var a = add(x, attn_(tape, ln1_(tape, x), bias));
  return add(a, mlp_(tape, ln2_(tape, a)));
}

void SwinBlock::collect(ParamList& out) {
  ln1_.collect(out);
  attn_.collect(out);
  out.push_back(&rel_bias_);
  ln2_.collect(out);
  mlp_.collect(out);
}

// ---------------------------------------------------------------------------

SwinEncoder::SwinEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  check_geometry(cfg, cfg.side, cfg.side);
  const int g = cfg.grid();
  const int c = cfg.embed;
  patch_embed_ = nn::Linear("enc.patch_embed", cfg.patch * cfg.patch, c, rng);
  patch_norm_ = nn::LayerNorm("enc.patch_norm", c);
  for (int b = 0; b < cfg.depth1; ++b) {
    const int shift = b % 2 == 1 ? cfg.window / 2 : 0;
    stage1_.emplace_back("enc.s1.b" + std::to_string(b), g, c, cfg.window, shift, cfg.heads, cfg.mlp_ratio, rng);
  }
  merge_norm_ = nn::LayerNorm("enc.merge.norm", 4 * c);
  merge_reduce_ = nn::Linear("enc.merge.reduce", 4 * c, 2 * c, rng, false);
  const int g2 = g / 2;
  for (int b = 0; b < cfg.depth2; ++b) {
    const int shift = b % 2 == 1 ? cfg.window / 2 : 0;
    stage2_.emplace_back("enc.s2.b" + std::to_string(b), g2, 2 * c, cfg.window, shift, cfg.heads, cfg.mlp_ratio,
                         rng);
  }
  final_norm_ = nn::LayerNorm("enc.final_norm", 2 * c);
  // 2x2 neighbourhood order: (0,0) (1,0) (0,1) (1,1)
  const int dr[4] = {0, 1, 0, 1};
  const int dc[4] = {0, 0, 1, 1};
  for (int k = 0; k < 4; ++k) {
    std::vector<int> idx;
    for (int r = 0; r < g2; ++r) {
      for (int col = 0; col < g2; ++col) idx.push_back((2 * r + dr[k]) * g + 2 * col + dc[k]);
    }
    merge_index_.push_back(std::move(idx));
  }
}

Matrix patchify(const corpus::BusImage& image, int patch) {
  const int g = image.rows() / patch;
  Matrix out(g * g, patch * patch);
  for (int pr = 0; pr < g; ++pr) {
    for (int pc = 0; pc < g; ++pc) {
      for (int y = 0; y < patch; ++y) {
        for (int x = 0; x < patch; ++x) {
          out(pr * g + pc, y * patch + x) = image.pixels(pr * patch + y, pc * patch + x) - 0.5;
        }
      }
    }
  }
  return out;
}

Var SwinEncoder::operator()(Tape& tape, const corpus::BusImage& image) const {
  check_geometry(cfg_, image.rows(), image.cols());
  Var x = patch_norm_(tape, patch_embed_(tape, tape.constant(patchify(image, cfg_.patch))));
  for (const auto& b : stage1_) x = b(tape, x);
  std::vector<Var> parts;
  for (const auto& idx : merge_index_) parts.push_back(gather_rows(x, idx));
  x = merge_reduce_(tape, merge_norm_(tape, concat_cols(parts)));
  for (const auto& b : stage2_) x = b(tape, x);
  return final_norm_(tape, x);
}

void SwinEncoder::collect(ParamList& out) {
  patch_embed_.collect(out);
  patch_norm_.collect(out);
  for (auto& b : stage1_) b.collect(out);
  merge_norm_.collect(out);
  merge_reduce_.collect(out);
  for (auto& b : stage2_) b.collect(out);
  final_norm_.collect(out);
}

// ---------------------------------------------------------------------------

Var branch_pool(const Var& tokens, const nn::Linear& branch, Tape& tape) {
  return mean_rows(gelu(branch(tape, tokens)));
}

DescriptorHeads::DescriptorHeads(const schema::DatasetConfig& cfg, int dim, Rng& rng) {
  for (const auto& b : kDescriptorBranches) branches_.emplace(b, nn::Linear("branch." + b, dim, dim, rng));
  const std::pair<DescriptorKind, const char*> single[] = {{DescriptorKind::shape, "shape"},
                                                           {DescriptorKind::margin_main, "margin"},
                                                           {DescriptorKind::posterior, "posterior"},
                                                           {DescriptorKind::echogenicity, "echo"},
                                                           {DescriptorKind::pathology, "pathology"},
                                                           {DescriptorKind::histology, "histology"}};
  for (const auto& [kind, branch] : single) {
    if (!cfg.is_active(kind)) continue;
    if (!branches_.count(branch)) branches_.emplace(branch, nn::Linear(std::string("branch.") + branch, dim, dim, rng));
    const int width = static_cast<int>(cfg.vocabulary(kind).size());
    heads_.emplace(kind, nn::Linear("head." + std::string(schema::to_string(kind)), dim, width, rng));
  }
  if (cfg.is_active(DescriptorKind::birads)) {
    const int width = static_cast<int>(cfg.vocabulary(DescriptorKind::birads).size());
    heads_.emplace(DescriptorKind::birads, nn::Linear("head.birads", 4 * dim, width, rng));
  }
  if (cfg.is_active(DescriptorKind::margin_main) && cfg.is_active(DescriptorKind::margin_subtypes)) {
    for (const auto& s : cfg.vocabulary(DescriptorKind::margin_subtypes).values()) {
      subtype_heads_.emplace_back("head.margin_subtype." + s, dim, 2, rng);
    }
  }
  if (cfg.is_active(DescriptorKind::size)) {
    has_size_ = true;
    branches_.emplace("size", nn::Linear("branch.size", dim, dim, rng));
    size_head_ = nn::Linear("head.size", dim, 1, rng);
  }
}

HeadVars DescriptorHeads::operator()(Tape& tape, const Var& tokens) const {
  HeadVars out;
  for (const auto& [name, lin] : branches_) out.hidden.emplace(name, branch_pool(tokens, lin, tape));
  auto branch_of = [](DescriptorKind k) -> std::string {
    switch (k) {
      case DescriptorKind::margin_main: return "margin";
      case DescriptorKind::echogenicity: return "echo";
      default: return std::string(schema::to_string(k));
    }
  };
  for (const auto& [kind, lin] : heads_) {
    if (kind == DescriptorKind::birads) {
      std::vector<Var> parts;
      for (const auto& b : kDescriptorBranches) parts.push_back(out.hidden.at(b));
      out.logits.emplace(kind, lin(tape, concat_cols(parts)));
    } else {
      out.logits.emplace(kind, lin(tape, out.hidden.at(branch_of(kind))));
    }
  }
  for (const auto& lin : subtype_heads_) out.subtype_logits.push_back(lin(tape, out.hidden.at("margin")));
  if (has_size_) out.size_norm = sigmoid(size_head_(tape, out.hidden.at("size")));
  return out;
}

void DescriptorHeads::collect(ParamList& out) {
  for (auto& [name, lin] : branches_) lin.collect(out);
  for (auto& [kind, lin] : heads_) lin.collect(out);
  for (auto& lin : subtype_heads_) lin.collect(out);
  if (has_size_) size_head_.collect(out);
}

// ---------------------------------------------------------------------------

VisionModel::VisionModel(schema::DatasetConfig cfg, EncoderConfig enc, std::uint64_t seed_in)
    : seed(seed_in), cfg_(std::move(cfg)) {
  schema::check_config(cfg_);
  Rng rng(mix_seed(seed_in, 0x7669));
  encoder_ = SwinEncoder(enc, rng);
  heads_ = DescriptorHeads(cfg_, enc.token_dim(), rng);
}

std::unique_ptr<VisionModel> VisionModel::clone() const {
  auto copy = std::make_unique<VisionModel>(cfg_, encoder_.config(), seed);
  auto* self = const_cast<VisionModel*>(this);
  nn::restore(copy->parameters(), nn::snapshot(self->parameters()));
  copy->size_max = size_max;
  copy->epoch = epoch;
  return copy;
}

ParamList VisionModel::encoder_parameters() {
  ParamList out;
  encoder_.collect(out);
  return out;
}

ParamList VisionModel::parameters() {
  ParamList out;
  encoder_.collect(out);
  heads_.collect(out);
  return out;
}

HeadVars VisionModel::forward(Tape& tape, const corpus::BusImage& image) const {
  return heads_(tape, encoder_(tape, image));
}

DescriptorPredictions VisionModel::predict(const corpus::BusImage& image) const {
  Tape tape(false);
  const HeadVars hv = forward(tape, image);
  DescriptorPredictions p;
  for (const auto& [k, v] : hv.logits) p.logits.emplace(k, v.value());
  for (const auto& v : hv.subtype_logits) p.subtype_logits.push_back(v.value());
  if (hv.size_norm) p.size_norm = hv.size_norm->scalar();
  return p;
}

Matrix VisionModel::encode(const corpus::BusImage& image) const {
  Tape tape(false);
  return encoder_(tape, image).value();
}

int argmax(const Matrix& row) {
  int best = 0;
  for (int i = 1; i < row.size(); ++i) {
    if (row.data()[i] > row.data()[best]) best = i;
  }
  return best;
}

schema::DescriptorSet decode_predictions(const DescriptorPredictions& pred, const schema::DatasetConfig& cfg,
                                         double size_max) {
  schema::DescriptorSet ds;
  ds.source = schema::DescriptorSource::predicted;
  for (const auto& [kind, logits] : pred.logits) ds.set(kind, cfg.vocabulary(kind).at(argmax(logits)));
  if (!pred.subtype_logits.empty() && ds.get(DescriptorKind::margin_main) == std::string(schema::kNonCircumscribed)) {
    schema::SubtypeSet subs;
    const auto& names = cfg.vocabulary(DescriptorKind::margin_subtypes).values();
    for (std::size_t i = 0; i < pred.subtype_logits.size(); ++i) {
      if (argmax(pred.subtype_logits[i]) == 1) subs.insert(names[i]);
    }
    if (!subs.empty()) ds.set_subtypes(std::move(subs));
  }
  if (pred.size_norm && size_max > 0) {
    const double mm = std::round(*pred.size_norm * size_max * 10.0) / 10.0;
    if (mm > 0) ds.set_size(mm);
  }
  return ds;
}

}  // namespace bustr::vision
