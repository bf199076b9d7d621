#include "bustr/nn/layers.hpp"

#include "bustr/error.hpp"

#include <cmath>
#include <cstring>

namespace bustr::nn {

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear::Linear(const std::string& name, int in, int out, Rng& rng, bool bias, double init_std)
    : weight_(name + ".weight", normal_matrix(in, out, init_std, rng)),
      bias_(name + ".bias", Matrix::Zero(1, out)),
      has_bias_(bias) {}

Var Linear::operator()(Tape& tape, const Var& x) const {
  Var y = matmul(x, tape.leaf(weight_));
  if (has_bias_) y = add_row(y, tape.leaf(bias_));
  return y;
}

void Linear::collect(ParamList& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

LayerNorm::LayerNorm(const std::string& name, int dim)
    : gamma_(name + ".gamma", Matrix::Ones(1, dim)), beta_(name + ".beta", Matrix::Zero(1, dim)) {}

Var LayerNorm::operator()(Tape& tape, const Var& x) const {
  return layer_norm(x, tape.leaf(gamma_), tape.leaf(beta_));
}

void LayerNorm::collect(ParamList& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

Mlp::Mlp(const std::string& name, int dim, int hidden, Rng& rng)
    : fc1_(name + ".fc1", dim, hidden, rng), fc2_(name + ".fc2", hidden, dim, rng) {}

Var Mlp::operator()(Tape& tape, const Var& x) const { return fc2_(tape, gelu(fc1_(tape, x))); }

void Mlp::collect(ParamList& out) {
  fc1_.collect(out);
  fc2_.collect(out);
}

SelfAttention::SelfAttention(const std::string& name, int dim, int heads, Rng& rng)
    : qkv_(name + ".qkv", dim, 3 * dim, rng), proj_(name + ".proj", dim, dim, rng), dim_(dim), heads_(heads) {
  if (heads <= 0 || dim % heads != 0) fail(ErrorCode::invalid_config, "attention width not divisible by heads");
}

Var SelfAttention::operator()(Tape& tape, const Var& x, std::span<const Var> head_bias, bool causal) const {
  const Var qkv = qkv_(tape, x);
  const int dh = dim_ / heads_;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    const Var q = slice_cols(qkv, h * dh, dh);
    const Var k = slice_cols(qkv, dim_ + h * dh, dh);
    const Var v = slice_cols(qkv, 2 * dim_ + h * dh, dh);
    Var s = scale(matmul_bt(q, k), inv);
    if (!head_bias.empty()) s = add(s, head_bias[static_cast<std::size_t>(h)]);
    outs.push_back(matmul(softmax_rows(s, causal), v));
  }
  return proj_(tape, heads_ == 1 ? outs.front() : concat_cols(outs));
}

void SelfAttention::collect(ParamList& out) {
  qkv_.collect(out);
  proj_.collect(out);
}

void Adam::step(const ParamList& params) {
  for (const Parameter* p : params) {
    if (p->frozen) fail(ErrorCode::frozen_violation, "optimizer step on frozen parameter " + p->name);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Parameter* p : params) {
    if (p->grad.size() != p->value.size()) p->zero_grad();
    auto [it, inserted] = state_.try_emplace(p);
    Moments& s = it->second;
    if (inserted) {
      s.m = Matrix::Zero(p->value.rows(), p->value.cols());
      s.v = Matrix::Zero(p->value.rows(), p->value.cols());
    }
    s.m = beta1_ * s.m + (1.0 - beta1_) * p->grad;
    s.v = beta2_ * s.v + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
    p->value.array() -= lr_ * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps_);
  }
}

void zero_grads(const ParamList& params) {
  for (Parameter* p : params) p->zero_grad();
}

std::size_t count_values(const ParamList& params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += static_cast<std::size_t>(p->value.size());
  return n;
}

std::vector<double> snapshot(const ParamList& params) {
  std::vector<double> out;
  out.reserve(count_values(params));
  for (const Parameter* p : params) out.insert(out.end(), p->value.data(), p->value.data() + p->value.size());
  return out;
}

void restore(const ParamList& params, const std::vector<double>& values) {
  std::size_t at = 0;
  for (Parameter* p : params) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(at), p->value.size(), p->value.data());
    at += static_cast<std::size_t>(p->value.size());
  }
}

std::uint64_t hash_parameters(const ParamList& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Parameter* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    const std::size_t n = static_cast<std::size_t>(p->value.size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

void quantize_to_float(const ParamList& params) {
  for (Parameter* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      p->value.data()[i] = static_cast<double>(static_cast<float>(p->value.data()[i]));
    }
  }
}

}  // namespace bustr::nn
