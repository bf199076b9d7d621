#pragma once

// Descriptor-aware multi-head vision encoder.
//
// A small Swin-style backbone turns a square grayscale image into a P x E
// token matrix. Each descriptor branch applies Linear+GELU to every token and
// mean-pools over tokens; heads read the pooled vectors. The BI-RADS head
// reads the concatenation of the shape, margin, posterior and echo branches.

#include "bustr/corpus/image.hpp"
#include "bustr/nn/layers.hpp"
#include "bustr/schema/descriptors.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace bustr::vision {

using nn::Matrix;
using nn::ParamList;
using nn::Rng;
using nn::Tape;
using nn::Var;

struct EncoderConfig {
  int side = 64;
  int patch = 8;
  int window = 4;
  int embed = 32;  // stage-1 width; stage 2 (after the merge) is 2 * embed
  int heads = 2;
  int depth1 = 2;
  int depth2 = 2;
  int mlp_ratio = 2;

  int grid() const { return side / patch; }
  /// P: tokens after the single patch merge.
  int token_count() const { return (grid() / 2) * (grid() / 2); }
  /// E: token width after the merge.
  int token_dim() const { return 2 * embed; }
};

nlohmann::json to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

/// BadGeometry unless side divides into patches, the patch grid into
/// windows, and the grid is even (one merge).
void check_geometry(const EncoderConfig& cfg, int rows, int cols);

/// Swin block: windowed attention (optionally cyclically shifted, with the
/// usual region mask) and an MLP, each pre-normed with a residual.
class SwinBlock {
 public:
  SwinBlock() = default;
  SwinBlock(const std::string& name, int grid, int dim, int window, int shift, int heads, int mlp_ratio, Rng& rng);

  Var operator()(Tape& tape, const Var& x) const;
  void collect(ParamList& out);

  /// Additive score mask: 0 inside a window and region, -100 inside a window
  /// across shift regions, -1e9 across windows.
  const Matrix& mask() const { return mask_; }

 private:
  nn::LayerNorm ln1_, ln2_;
  nn::SelfAttention attn_;
  nn::Mlp mlp_;
  mutable nn::Parameter rel_bias_;  // heads x (2w-1)^2
  Matrix mask_;
  std::vector<Eigen::MatrixXi> rel_index_;  // per head, flat into rel_bias_
};

class SwinEncoder {
 public:
  SwinEncoder() = default;
  SwinEncoder(const EncoderConfig& cfg, Rng& rng);

  /// Tokens for one image (P x E). BadGeometry on a size mismatch.
  Var operator()(Tape& tape, const corpus::BusImage& image) const;
  void collect(ParamList& out);
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  nn::Linear patch_embed_;
  nn::LayerNorm patch_norm_;
  std::vector<SwinBlock> stage1_, stage2_;
  nn::LayerNorm merge_norm_;
  nn::Linear merge_reduce_;
  nn::LayerNorm final_norm_;
  std::vector<std::vector<int>> merge_index_;
};

/// Rows of the flattened patch matrix: one row per patch, pixel values
/// centred at zero.
Matrix patchify(const corpus::BusImage& image, int patch);

/// Pooled hidden state for one branch: mean over tokens of GELU(xW + b).
Var branch_pool(const Var& tokens, const nn::Linear& branch, Tape& tape);

inline const std::vector<std::string> kDescriptorBranches = {"shape", "margin", "posterior", "echo"};

/// Per-head outputs on a tape.
struct HeadVars {
  std::map<schema::DescriptorKind, Var> logits;  // 1 x C each
  std::vector<Var> subtype_logits;               // 1 x 2 each, vocabulary order
  std::optional<Var> size_norm;                  // 1 x 1, sigmoid-bounded
  std::map<std::string, Var> hidden;             // pooled branch vectors
};

struct DescriptorPredictions {
  std::map<schema::DescriptorKind, Matrix> logits;
  std::vector<Matrix> subtype_logits;
  std::optional<double> size_norm;
};

class DescriptorHeads {
 public:
  DescriptorHeads() = default;
  DescriptorHeads(const schema::DatasetConfig& cfg, int dim, Rng& rng);

  HeadVars operator()(Tape& tape, const Var& tokens) const;
  void collect(ParamList& out);

  const nn::Linear& branch(const std::string& name) const { return branches_.at(name); }
  nn::Linear& head(schema::DescriptorKind kind) { return heads_.at(kind); }
  const std::map<schema::DescriptorKind, nn::Linear>& heads() const { return heads_; }
  std::vector<nn::Linear>& subtype_heads() { return subtype_heads_; }
  bool has_size() const { return has_size_; }

 private:
  std::map<std::string, nn::Linear> branches_;
  std::map<schema::DescriptorKind, nn::Linear> heads_;
  std::vector<nn::Linear> subtype_heads_;
  nn::Linear size_head_;
  bool has_size_ = false;
};

/// Encoder + heads for one dataset configuration.
class VisionModel {
 public:
  VisionModel(schema::DatasetConfig cfg, EncoderConfig enc, std::uint64_t seed);
  VisionModel(const VisionModel&) = delete;
  VisionModel& operator=(const VisionModel&) = delete;

  const schema::DatasetConfig& config() const { return cfg_; }
  const EncoderConfig& encoder_config() const { return encoder_.config(); }
  SwinEncoder& encoder() { return encoder_; }
  const SwinEncoder& encoder() const { return encoder_; }
  DescriptorHeads& heads() { return heads_; }
  const DescriptorHeads& heads() const { return heads_; }

  /// Same configuration, seed and parameter values.
  std::unique_ptr<VisionModel> clone() const;

  ParamList encoder_parameters();
  ParamList parameters();

  HeadVars forward(Tape& tape, const corpus::BusImage& image) const;
  /// Inference on a gradient-free tape.
  DescriptorPredictions predict(const corpus::BusImage& image) const;
  /// Token matrix in inference mode.
  Matrix encode(const corpus::BusImage& image) const;

  /// Max training size in mm (size normalizer); 0 when size is not a task.
  double size_max = 0.0;
  std::uint64_t seed = 0;
  int epoch = 0;

 private:
  schema::DatasetConfig cfg_;
  SwinEncoder encoder_;
  DescriptorHeads heads_;
};

/// Argmax decoding (ties to the lowest index). Subtypes are reported only
/// under a non-circumscribed margin; size is pred x size_max rounded to 0.1.
schema::DescriptorSet decode_predictions(const DescriptorPredictions& pred, const schema::DatasetConfig& cfg,
                                         double size_max);

int argmax(const Matrix& row);

}  // namespace bustr::vision
