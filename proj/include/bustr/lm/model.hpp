#pragma once

// Small decoder-only language model used as the frozen report writer, plus
// the sequence assembly and losses of the report-generation stage.

#include "bustr/lm/tokenizer.hpp"
#include "bustr/nn/layers.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace bustr::lm {

using nn::Matrix;
using nn::ParamList;
using nn::Rng;
using nn::Tape;
using nn::Var;

struct LmConfig {
  int d_model = 64;
  int layers = 2;
  int heads = 2;
  int context = 256;
  int mlp_ratio = 4;
  /// Leading sequence slots reserved for conditioning (vision tokens at
  /// report time, descriptor tokens during pretraining).
  int prefix = 16;
};

nlohmann::json to_json(const LmConfig& c);
LmConfig lm_config_from_json(const nlohmann::json& j);

class FrozenLM {
 public:
  FrozenLM(int vocab_size, LmConfig cfg, std::uint64_t seed);
  FrozenLM(const FrozenLM&) = delete;
  FrozenLM& operator=(const FrozenLM&) = delete;

  const LmConfig& config() const { return cfg_; }
  int vocab_size() const { return static_cast<int>(tok_emb_.value.rows()); }

  /// Token embeddings without positions (rows of Z).
  Var embed(Tape& tape, std::span<const int> ids) const;

  struct Output {
    Var hidden;  // H: final-normed states, L x D
    Var logits;  // L x V
  };
  /// Adds positional embeddings to z and runs the causal stack.
  /// ContextOverflow when z has more rows than the context.
  Output forward(Tape& tape, const Var& z) const;

  ParamList parameters();
  void freeze();
  bool frozen() const { return frozen_; }
  std::uint64_t hash() const;

  /// Grows the token embedding and output head from `before` to `after`
  /// (an augmented copy). Each new row is the mean of the rows of the term's
  /// ids under `before`.
  void resize_vocab(const Tokenizer& before, const Tokenizer& after);

  const nn::Parameter& token_embedding() const { return tok_emb_; }

 private:
  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::SelfAttention attn;
    nn::Mlp mlp;
  };

  LmConfig cfg_;
  mutable nn::Parameter tok_emb_;
  mutable nn::Parameter pos_emb_;
  std::vector<Block> blocks_;
  nn::LayerNorm final_norm_;
  mutable nn::Parameter head_w_;  // D x V
  mutable nn::Parameter head_b_;
  bool frozen_ = false;
};

void save_lm(FrozenLM& lm, const Tokenizer& tok, const std::filesystem::path& path);
struct LoadedLM {
  std::unique_ptr<FrozenLM> lm;
  Tokenizer tokenizer;
};
LoadedLM load_lm(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

/// Z, H and the supervised span of one assembled sequence.
struct LMSequence {
  Var z;
  Var hidden;
  Var logits;
  int vision_len = 0;
  int prompt_len = 0;
  int report_len = 0;
  /// Next-token targets for rows [ce_start, ce_start + targets.size()).
  std::vector<int> targets;
  int ce_start = 0;

  int length() const { return vision_len + prompt_len + report_len; }
};

/// Z = [prefix ; embed(prompt) ; embed(report)], then the LM forward pass.
/// The prefix rows are projected vision tokens (or descriptor embeddings
/// during pretraining). Targets are the report ids, each predicted from the
/// preceding row, so prompt and prefix rows carry no cross-entropy.
/// ContextOverflow when the total length exceeds the context.
LMSequence assemble_input(Tape& tape, const Var& prefix, std::span<const int> prompt_ids,
                          std::span<const int> report_ids, const FrozenLM& lm);

/// Cross-entropy of rows [start, start + targets.size()) of the logits.
Var token_ce_loss(const Var& logits, std::span<const int> targets, int start,
                  nn::Reduction reduction = nn::Reduction::mean);

/// 1 - mean_i cos(H_i, Z_i) over all rows, eps 1e-8 on each norm.
Var align_loss(const Var& hidden, const Var& z);
double align_loss(const Matrix& hidden, const Matrix& z);

enum class LossMode { weighted_sum, sum, product, mean, max };

std::string_view to_string(LossMode mode);
/// InvalidConfig for an unknown name.
LossMode loss_mode_from_string(std::string_view name);

struct LossWeights {
  double ce = 0.5;
  double align = 0.5;
  LossMode mode = LossMode::weighted_sum;
};

double combine_losses(double ce, double align, const LossWeights& w);
Var combine_losses(const Var& ce, const Var& align, const LossWeights& w);

}  // namespace bustr::lm
