#pragma once

#include "bustr/nn/tape.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace bustr::nn {

using ParamList = std::vector<Parameter*>;
using Rng = std::mt19937_64;

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng, bool bias = true, double init_std = 0.02);

  Var operator()(Tape& tape, const Var& x) const;
  void collect(ParamList& out);
  int in_features() const { return static_cast<int>(weight_.value.rows()); }
  int out_features() const { return static_cast<int>(weight_.value.cols()); }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  mutable Parameter weight_;
  mutable Parameter bias_;
  bool has_bias_ = true;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim);

  Var operator()(Tape& tape, const Var& x) const;
  void collect(ParamList& out);

 private:
  mutable Parameter gamma_;
  mutable Parameter beta_;
};

/// Linear -> GELU -> Linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, int dim, int hidden, Rng& rng);

  Var operator()(Tape& tape, const Var& x) const;
  void collect(ParamList& out);

 private:
  Linear fc1_;
  Linear fc2_;
};

/// Multi-head scaled dot-product self-attention over the rows of x.
class SelfAttention {
 public:
  SelfAttention() = default;
  SelfAttention(const std::string& name, int dim, int heads, Rng& rng);

  /// `head_bias` (optional) holds one NxN additive score bias per head.
  Var operator()(Tape& tape, const Var& x, std::span<const Var> head_bias = {}, bool causal = false) const;
  void collect(ParamList& out);
  int heads() const { return heads_; }

 private:
  Linear qkv_;
  Linear proj_;
  int dim_ = 0;
  int heads_ = 1;
};

/// Adaptive moment estimation with bias correction.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Applies one update using each parameter's accumulated grad.
  /// Throws FrozenViolation if asked to update a frozen parameter.
  void step(const ParamList& params);
  void set_lr(double lr) { lr_ = lr; }
  long steps() const { return t_; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<const Parameter*, Moments> state_;
};

void zero_grads(const ParamList& params);
std::size_t count_values(const ParamList& params);

/// Flattened copy of all values, in list order.
std::vector<double> snapshot(const ParamList& params);
void restore(const ParamList& params, const std::vector<double>& values);

/// FNV-1a over the raw bytes of every parameter value.
std::uint64_t hash_parameters(const ParamList& params);

/// Rounds every value to the nearest float32 (the on-disk precision).
void quantize_to_float(const ParamList& params);

}  // namespace bustr::nn
