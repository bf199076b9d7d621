#include "bustr/lm/model.hpp"

#include "bustr/error.hpp"
#include "bustr/nn/checkpoint.hpp"
#include "bustr/util.hpp"

#include <algorithm>
#include <cmath>

namespace bustr::lm {

nlohmann::json to_json(const LmConfig& c) {
  return {{"d_model", c.d_model}, {"layers", c.layers},       {"heads", c.heads},
          {"context", c.context}, {"mlp_ratio", c.mlp_ratio}, {"prefix", c.prefix}};
}

LmConfig lm_config_from_json(const nlohmann::json& j) {
  LmConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.context = j.value("context", c.context);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.prefix = j.value("prefix", c.prefix);
  if (c.d_model <= 0 || c.layers <= 0 || c.context <= c.prefix) fail(ErrorCode::invalid_config, "bad LM config");
  return c;
}

FrozenLM::FrozenLM(int vocab_size, LmConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(mix_seed(seed, 0x6c6d));
  const int d = cfg.d_model;
  tok_emb_ = nn::Parameter("lm.tok_emb", nn::normal_matrix(vocab_size, d, 0.02, rng));
  pos_emb_ = nn::Parameter("lm.pos_emb", nn::normal_matrix(cfg.context, d, 0.02, rng));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string n = "lm.block" + std::to_string(l);
    blocks_.push_back(Block{nn::LayerNorm(n + ".ln1", d), nn::LayerNorm(n + ".ln2", d),
                            nn::SelfAttention(n + ".attn", d, cfg.heads, rng),
                            nn::Mlp(n + ".mlp", d, d * cfg.mlp_ratio, rng)});
  }
  final_norm_ = nn::LayerNorm("lm.final_norm", d);
  head_w_ = nn::Parameter("lm.head.weight", nn::normal_matrix(d, vocab_size, 0.02, rng));
  head_b_ = nn::Parameter("lm.head.bias", Matrix::Zero(1, vocab_size));
}

Var FrozenLM::embed(Tape& tape, std::span<const int> ids) const {
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) fail(ErrorCode::out_of_vocabulary, "token id " + std::to_string(id));
  }
  return gather_rows(tape.leaf(tok_emb_), ids);
}

FrozenLM::Output FrozenLM::forward(Tape& tape, const Var& z) const {
  const auto len = z.rows();
  if (len > cfg_.context) {
    fail(ErrorCode::context_overflow,
         "sequence of " + std::to_string(len) + " exceeds context " + std::to_string(cfg_.context));
  }
  Var x = add(z, slice_rows(tape.leaf(pos_emb_), 0, len));
  for (const Block& b : blocks_) {
    x = add(x, b.attn(tape, b.ln1(tape, x), {}, true));
    x = add(x, b.mlp(tape, b.ln2(tape, x)));
  }
  Output out;
  out.hidden = final_norm_(tape, x);
  out.logits = add_row(matmul(out.hidden, tape.leaf(head_w_)), tape.leaf(head_b_));
  return out;
}

ParamList FrozenLM::parameters() {
  ParamList out = {&tok_emb_, &pos_emb_};
  for (Block& b : blocks_) {
    b.ln1.collect(out);
    b.attn.collect(out);
    b.ln2.collect(out);
    b.mlp.collect(out);
  }
  final_norm_.collect(out);
  out.push_back(&head_w_);
  out.push_back(&head_b_);
  return out;
}

void FrozenLM::freeze() {
  for (nn::Parameter* p : parameters()) p->frozen = true;
  frozen_ = true;
}

std::uint64_t FrozenLM::hash() const { return nn::hash_parameters(const_cast<FrozenLM*>(this)->parameters()); }

void FrozenLM::resize_vocab(const Tokenizer& before, const Tokenizer& after) {
  if (before.vocab_size() != vocab_size()) fail(ErrorCode::shape_mismatch, "tokenizer does not match the LM vocabulary");
  const int old_v = before.vocab_size();
  const int new_v = after.vocab_size();
  if (new_v < old_v) fail(ErrorCode::shape_mismatch, "vocabulary cannot shrink");
  Matrix emb(new_v, tok_emb_.value.cols());
  Matrix hw(head_w_.value.rows(), new_v);
  Matrix hb(1, new_v);
  emb.topRows(old_v) = tok_emb_.value;
  hw.leftCols(old_v) = head_w_.value;
  hb.leftCols(old_v) = head_b_.value;
  for (int id = old_v; id < new_v; ++id) {
    const auto parts = before.encode(after.surface(id));
    emb.row(id).setZero();
    hw.col(id).setZero();
    hb(0, id) = 0.0;
    for (int p : parts) {
      emb.row(id) += tok_emb_.value.row(p);
      hw.col(id) += head_w_.value.col(p);
      hb(0, id) += head_b_.value(0, p);
    }
    const double inv = 1.0 / static_cast<double>(parts.size());
    emb.row(id) *= inv;
    hw.col(id) *= inv;
    hb(0, id) *= inv;
  }
  tok_emb_.value = std::move(emb);
  head_w_.value = std::move(hw);
  head_b_.value = std::move(hb);
  tok_emb_.zero_grad();
  head_w_.zero_grad();
  head_b_.zero_grad();
}

void save_lm(FrozenLM& lm, const Tokenizer& tok, const std::filesystem::path& path) {
  nlohmann::json header = {{"kind", "lm"},
                           {"config", to_json(lm.config())},
                           {"vocab_size", lm.vocab_size()},
                           {"frozen", lm.frozen()},
                           {"tokenizer", tok.to_json()}};
  nn::write_checkpoint(path, header, lm.parameters());
}

LoadedLM load_lm(const std::filesystem::path& path) {
  const nn::CheckpointFile file = nn::read_checkpoint(path);
  const auto& h = file.header;
  if (h.value("kind", "") != "lm") fail(ErrorCode::schema_mismatch, path.string() + " is not an LM checkpoint");
  LoadedLM out{std::make_unique<FrozenLM>(h.at("vocab_size").get<int>(), lm_config_from_json(h.at("config")), 0),
               Tokenizer::from_json(h.at("tokenizer"))};
  if (out.tokenizer.vocab_size() != out.lm->vocab_size()) fail(ErrorCode::schema_mismatch, "tokenizer/LM size mismatch");
  nn::load_parameters(file, out.lm->parameters());
  if (h.value("frozen", false)) out.lm->freeze();
  return out;
}

// ---------------------------------------------------------------------------

LMSequence assemble_input(Tape& tape, const Var& prefix, std::span<const int> prompt_ids,
                          std::span<const int> report_ids, const FrozenLM& lm) {
  LMSequence seq;
  seq.vision_len = static_cast<int>(prefix.rows());
  seq.prompt_len = static_cast<int>(prompt_ids.size());
  seq.report_len = static_cast<int>(report_ids.size());
  if (seq.length() > lm.config().context) {
    fail(ErrorCode::context_overflow,
         "sequence of " + std::to_string(seq.length()) + " exceeds context " + std::to_string(lm.config().context));
  }
  if (prefix.cols() != lm.config().d_model) fail(ErrorCode::shape_mismatch, "prefix width differs from d_model");
  std::vector<int> text(prompt_ids.begin(), prompt_ids.end());
  text.insert(text.end(), report_ids.begin(), report_ids.end());
  if (text.empty()) {
    seq.z = prefix;
  } else {
    const Var parts[2] = {prefix, lm.embed(tape, text)};
    seq.z = concat_rows(parts);
  }
  const auto out = lm.forward(tape, seq.z);
  seq.hidden = out.hidden;
  seq.logits = out.logits;
  seq.targets.assign(report_ids.begin(), report_ids.end());
  seq.ce_start = seq.vision_len + seq.prompt_len - 1;
  return seq;
}

Var token_ce_loss(const Var& logits, std::span<const int> targets, int start, nn::Reduction reduction) {
  return nn::cross_entropy(slice_rows(logits, start, static_cast<Eigen::Index>(targets.size())), targets, reduction);
}

Var align_loss(const Var& hidden, const Var& z) { return nn::cosine_alignment(hidden, z, 1e-8); }

double align_loss(const Matrix& hidden, const Matrix& z) {
  Tape tape(false);
  return align_loss(tape.constant(hidden), tape.constant(z)).scalar();
}

std::string_view to_string(LossMode mode) {
  switch (mode) {
    case LossMode::weighted_sum: return "weighted_sum";
    case LossMode::sum: return "sum";
    case LossMode::product: return "product";
    case LossMode::mean: return "mean";
    case LossMode::max: return "max";
  }
  return "weighted_sum";
}

LossMode loss_mode_from_string(std::string_view name) {
  for (LossMode m : {LossMode::weighted_sum, LossMode::sum, LossMode::product, LossMode::mean, LossMode::max}) {
    if (to_string(m) == name) return m;
  }
  fail(ErrorCode::invalid_config, "unknown loss mode '" + std::string(name) + "'");
}

double combine_losses(double ce, double align, const LossWeights& w) {
  switch (w.mode) {
    case LossMode::weighted_sum: return w.ce * ce + w.align * align;
    case LossMode::sum: return ce + align;
    case LossMode::product: return ce * align;
    case LossMode::mean: return 0.5 * (ce + align);
    case LossMode::max: return std::max(ce, align);
  }
  return 0.0;
}

Var combine_losses(const Var& ce, const Var& align, const LossWeights& w) {
  switch (w.mode) {
    case LossMode::weighted_sum: return add(scale(ce, w.ce), scale(align, w.align));
    case LossMode::sum: return add(ce, align);
    case LossMode::product: return cmul(ce, align);
    case LossMode::mean: return scale(add(ce, align), 0.5);
    case LossMode::max: return nn::max(ce, align);
  }
  return ce;
}

}  // namespace bustr::lm
