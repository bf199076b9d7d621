#include "doctest.h"

#include "bustr/corpus/sample.hpp"
#include "bustr/error.hpp"
#include "bustr/vision/train.hpp"
#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

using namespace bustr;
using namespace bustr::vision;
using schema::DescriptorKind;
using schema::Task;

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

EncoderConfig micro_encoder() {
  EncoderConfig e;
  e.side = 16;
  e.patch = 4;
  e.window = 2;
  e.embed = 4;
  e.heads = 2;
  return e;
}

std::vector<const corpus::BusSample*> pointers(const std::vector<corpus::BusSample>& v) {
  std::vector<const corpus::BusSample*> out;
  for (const auto& s : v) out.push_back(&s);
  return out;
}

// Shifted-window mask derived the way the reference Swin code does it: label
// regions on the cyclically rolled grid with three slices per axis, partition
// the rolled grid into windows, then map back to the original positions.
Matrix reference_mask(int grid, int window, int shift) {
  std::vector<int> region(static_cast<std::size_t>(grid * grid), 0), win(static_cast<std::size_t>(grid * grid));
  const int bounds[4] = {0, grid - window, grid - shift, grid};
  int label = 0;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      for (int r = bounds[a]; r < bounds[a + 1]; ++r) {
        for (int c = bounds[b]; c < bounds[b + 1]; ++c) region[static_cast<std::size_t>(r * grid + c)] = label;
      }
      ++label;
    }
  }
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) win[static_cast<std::size_t>(r * grid + c)] = (r / window) * (grid / window) + c / window;
  }
  const int n = grid * grid;
  // rolled position (r, c) holds original token ((r + s) % g, (c + s) % g)
  std::vector<int> orig_to_rolled(static_cast<std::size_t>(n));
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      orig_to_rolled[static_cast<std::size_t>(((r + shift) % grid) * grid + (c + shift) % grid)] = r * grid + c;
    }
  }
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const auto ri = static_cast<std::size_t>(orig_to_rolled[static_cast<std::size_t>(i)]);
      const auto rj = static_cast<std::size_t>(orig_to_rolled[static_cast<std::size_t>(j)]);
      m(i, j) = win[ri] != win[rj] ? -1e9 : (shift > 0 && region[ri] != region[rj] ? -100.0 : 0.0);
    }
  }
  return m;
}

}  // namespace

TEST_CASE("encode_shape_determinism_and_geometry") {
  VisionModel model(schema::breast_config(), {}, 5);
  const auto samples = corpus::sample_corpus(schema::breast_config(), 2, 3);
  const Matrix a = model.encode(samples[0].image);
  CHECK(a.rows() == 16);
  CHECK(a.cols() == 64);
  CHECK(a.allFinite());
  CHECK(model.encode(samples[0].image) == a);
  CHECK(model.encode(samples[1].image) != a);
  corpus::BusImage odd;
  odd.pixels = corpus::Pixels::Constant(65, 65, 0.5);
  CHECK(code_of([&] { model.encode(odd); }) == ErrorCode::bad_geometry);
  odd.pixels = corpus::Pixels::Constant(64, 48, 0.5);
  CHECK(code_of([&] { model.encode(odd); }) == ErrorCode::bad_geometry);
  EncoderConfig bad;
  bad.patch = 7;
  Rng rng(1);
  CHECK(code_of([&] { SwinEncoder e(bad, rng); }) == ErrorCode::bad_geometry);
}

TEST_CASE("window_masks_match_rolled_partition") {
  Rng rng(2);
  for (int shift : {0, 2}) {
    SwinBlock block("b", 8, 8, 4, shift, 2, 2, rng);
    CHECK(block.mask() == reference_mask(8, 4, shift));
    for (Eigen::Index r = 0; r < block.mask().rows(); ++r) {
      CHECK((block.mask().row(r).array() > -1e8).count() == 16);
    }
  }
  // grid no larger than the window: one window, shift dropped
  SwinBlock small("s", 4, 8, 4, 2, 2, 2, rng);
  CHECK(small.mask().isZero());
}

TEST_CASE("branch_pool_properties") {
  Rng rng(3);
  nn::Linear branch("br", 6, 6, rng);
  Tape tape(false);
  Matrix tokens = nn::normal_matrix(5, 6, 1.0, rng);
  const Matrix pooled = branch_pool(tape.constant(tokens), branch, tape).value();
  Matrix shuffled = tokens;
  shuffled.row(0).swap(shuffled.row(3));
  shuffled.row(1).swap(shuffled.row(4));
  CHECK((branch_pool(tape.constant(shuffled), branch, tape).value() - pooled).cwiseAbs().maxCoeff() < 1e-15);
  Matrix same(4, 6);
  for (int r = 0; r < 4; ++r) same.row(r) = tokens.row(2);
  const Matrix single = branch_pool(tape.constant(tokens.row(2)), branch, tape).value();
  CHECK((branch_pool(tape.constant(same), branch, tape).value() - single).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(branch_pool(tape.constant(Matrix::Zero(5, 6)), branch, tape).value().isZero());
}

TEST_CASE("head_widths_per_config") {
  VisionModel breast(schema::breast_config(), {}, 1);
  const auto samples = corpus::sample_corpus(schema::breast_config(), 1, 4);
  const auto p = breast.predict(samples[0].image);
  CHECK(p.logits.at(DescriptorKind::birads).cols() == 6);
  CHECK(p.logits.at(DescriptorKind::shape).cols() == 3);
  CHECK(p.logits.at(DescriptorKind::margin_main).cols() == 2);
  REQUIRE(p.subtype_logits.size() == 4);
  for (const auto& s : p.subtype_logits) CHECK(s.cols() == 2);
  CHECK(p.logits.at(DescriptorKind::posterior).cols() == 4);
  CHECK(p.logits.at(DescriptorKind::echogenicity).cols() == 6);
  REQUIRE(p.size_norm.has_value());
  CHECK(*p.size_norm > 0.0);
  CHECK(*p.size_norm < 1.0);
  CHECK(breast.heads().head(DescriptorKind::birads).in_features() == 4 * 64);
  CHECK(p.logits.size() == 5);

  VisionModel busbra(schema::busbra_config(), {}, 1);
  const auto q = busbra.predict(samples[0].image);
  CHECK(q.logits.size() == 3);
  CHECK(q.logits.at(DescriptorKind::birads).cols() == 4);
  CHECK(q.logits.at(DescriptorKind::pathology).cols() == 2);
  CHECK(q.logits.at(DescriptorKind::histology).cols() == 11);
  CHECK(q.subtype_logits.empty());
  CHECK_FALSE(q.size_norm.has_value());
  CHECK(busbra.heads().head(DescriptorKind::birads).in_features() == 4 * 64);
}

TEST_CASE("zeroed_heads_give_uniform_softmax_and_log_c_loss") {
  const auto cfg = schema::breast_config();
  VisionModel model(cfg, {}, 9);
  for (auto& [k, lin] : const_cast<std::map<DescriptorKind, nn::Linear>&>(model.heads().heads())) {
    lin.weight().value.setZero();
    lin.bias().value.setZero();
  }
  for (auto& lin : model.heads().subtype_heads()) {
    lin.weight().value.setZero();
    lin.bias().value.setZero();
  }
  const auto samples = corpus::sample_corpus(cfg, 1, 6);
  Tape tape(false);
  const HeadVars hv = model.forward(tape, samples[0].image);
  for (const auto& [k, v] : hv.logits) CHECK(v.value().isZero());
  const TaskLabels y = make_labels(samples[0].descriptors, cfg, 10.0);
  const auto losses = task_losses(hv, y, cfg);
  CHECK(std::abs(losses.per_task.at(Task::birads).scalar() - std::log(6.0)) < 1e-12);
  CHECK(std::abs(losses.per_task.at(Task::birads).scalar() - 1.7918) < 1e-4);
  CHECK(std::abs(losses.per_task.at(Task::shape).scalar() - std::log(3.0)) < 1e-12);
  for (const auto& s : losses.subtypes) CHECK(std::abs(s.scalar() - std::log(2.0)) < 1e-12);
  CHECK(std::abs(losses.per_task.at(Task::margin).scalar() - std::log(2.0)) < 1e-12);
}

TEST_CASE("task_loss_hand_cases") {
  const auto cfg = schema::busbra_config();
  Tape tape(false);
  HeadVars hv;
  Matrix sharp = Matrix::Zero(1, 4);
  sharp(0, 2) = 20.0;
  hv.logits.emplace(DescriptorKind::birads, tape.constant(sharp));
  Matrix path = Matrix::Zero(1, 2);
  hv.logits.emplace(DescriptorKind::pathology, tape.constant(path));
  hv.logits.emplace(DescriptorKind::histology, tape.constant(Matrix::Zero(1, 11)));
  TaskLabels y;
  y.classes = {{DescriptorKind::birads, 2}, {DescriptorKind::pathology, 0}, {DescriptorKind::histology, 3}};
  const auto l = task_losses(hv, y, cfg);
  CHECK(l.per_task.at(Task::birads).scalar() < 1e-8);
  CHECK(std::abs(l.per_task.at(Task::pathology).scalar() - std::log(2.0)) < 1e-12);
  CHECK(std::abs(l.per_task.at(Task::histology).scalar() - std::log(11.0)) < 1e-12);
  y.classes.erase(DescriptorKind::pathology);
  CHECK(code_of([&] { task_losses(hv, y, cfg); }) == ErrorCode::missing_label);

  const auto bcfg = schema::breast_config();
  HeadVars sv;
  sv.size_norm = tape.scalar(0.4);
  TaskLabels sy;
  sy.size_norm = 0.25;
  schema::DatasetConfig size_only = bcfg;
  size_only.active_kinds = {DescriptorKind::size};
  CHECK(std::abs(task_losses(sv, sy, size_only).per_task.at(Task::size).scalar() - 0.15) < 1e-15);
}

TEST_CASE("make_labels_requires_every_active_task") {
  const auto cfg = schema::breast_config();
  schema::DescriptorSet ds;
  ds.set(DescriptorKind::shape, "oval");
  CHECK(code_of([&] { make_labels(ds, cfg, 10.0); }) == ErrorCode::missing_label);
  const auto samples = corpus::sample_corpus(cfg, 3, 11);
  for (const auto& s : samples) {
    const TaskLabels y = make_labels(s.descriptors, cfg, 10.0);
    CHECK(y.classes.size() == 5);
    CHECK(y.subtype_bits.size() == 4);
    CHECK(*y.size_norm == doctest::Approx(*s.descriptors.size_mm() / 10.0));
  }
}

TEST_CASE("margin_and_vision_loss_arithmetic") {
  const double zero[4] = {0, 0, 0, 0};
  CHECK(combined_margin_loss(0.0, zero) == 0.0);
  const double a[4] = {0.2, 0.2, 0.2, 0.2};
  CHECK(std::abs(combined_margin_loss(0.6, a) - 0.4) < 1e-15);
  const double b[4] = {0.4, 0.8, 1.2, 1.6};
  CHECK(combined_margin_loss(1.0, b) == 1.0);
  const double c[4] = {0.5, 0.25, 0.75, 1.0};
  CHECK(combined_margin_loss(1.5, c) == 0.5 * 1.5 + 0.125 * 2.5);

  const auto breast = schema::breast_config();
  std::map<Task, double> six;
  double v = 0.5;
  for (Task t : schema::active_tasks(breast)) {
    six[t] = v;
    v += 0.5;
  }
  CHECK(six.size() == 6);
  CHECK(vision_loss(six, breast) == 1.75);
  for (auto& [t, x] : six) x = 1.0;
  CHECK(vision_loss(six, breast) == 1.0);
  const auto busbra = schema::busbra_config();
  std::map<Task, double> three = {{Task::birads, 1.0}, {Task::pathology, 2.0}, {Task::histology, 3.0}};
  CHECK(vision_loss(three, busbra) == 2.0);
  CHECK(code_of([&] { vision_loss(three, breast); }) == ErrorCode::task_mismatch);
  three.erase(Task::histology);
  CHECK(code_of([&] { vision_loss(three, busbra); }) == ErrorCode::task_mismatch);
}

TEST_CASE("stage1_loss_gradients_match_finite_differences") {
  corpus::RenderConfig render;
  render.side = 16;
  for (const auto& cfg : {schema::breast_config(), schema::busbra_config()}) {
    const auto samples = corpus::sample_corpus(cfg, 2, 21, render);
    VisionModel model(cfg, micro_encoder(), 4);
    model.size_max = 8.0;
    const ParamList params = model.parameters();
    auto loss = [&](bool backprop) {
      double total = 0.0;
      for (const auto& s : samples) {
        Tape tape(backprop);
        const Var l = vision_loss(task_losses(model.forward(tape, s.image),
                                              make_labels(s.descriptors, cfg, model.size_max), cfg)
                                      .per_task,
                                  cfg);
        if (backprop) tape.backward(l, 0.5);
        total += 0.5 * l.scalar();
      }
      return total;
    };
    const auto res = testing::grad_check(params, loss);
    INFO(cfg.name << " worst " << res.worst);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("stage1_is_deterministic_and_checkpoints_reload_exactly") {
  const auto cfg = schema::breast_config();
  const auto samples = corpus::sample_corpus(cfg, 8, 31);
  const auto ptrs = pointers(samples);
  Stage1Hyper hp;
  hp.epochs = 2;
  hp.lr = 1e-3;
  hp.seed = 17;
  const auto a = train_stage1(ptrs, {}, cfg, hp);
  const auto b = train_stage1(ptrs, {}, cfg, hp);
  REQUIRE(a.log.size() == 2);
  CHECK(a.log.back().train_loss == b.log.back().train_loss);
  CHECK(nn::hash_parameters(a.model->parameters()) == nn::hash_parameters(b.model->parameters()));
  CHECK(a.model->size_max == *std::max_element(samples.begin(), samples.end(), [](const auto& x, const auto& y) {
                               return *x.descriptors.size_mm() < *y.descriptors.size_mm();
                             })->descriptors.size_mm());

  const auto path = std::filesystem::temp_directory_path() / "bustr_vision.ckpt";
  save_vision(*a.model, path);
  const auto loaded = load_vision(path);
  CHECK(loaded->size_max == a.model->size_max);
  for (const auto& s : samples) {
    const auto p = a.model->predict(s.image), q = loaded->predict(s.image);
    for (const auto& [k, m] : p.logits) CHECK(q.logits.at(k) == m);
    CHECK(*p.size_norm == *q.size_norm);
    CHECK(*p.size_norm >= 0.0);
    CHECK(*p.size_norm <= 1.0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("stage1_guards") {
  const auto cfg = schema::breast_config();
  const auto samples = corpus::sample_corpus(cfg, 8, 41);
  const auto ptrs = pointers(samples);
  Stage1Hyper hp;
  hp.lr = 10.0;
  hp.epochs = 20;
  CHECK(code_of([&] { train_stage1(ptrs, {}, cfg, hp); }) == ErrorCode::diverged_loss);
  const std::vector<const corpus::BusSample*> one = {ptrs[0]};
  CHECK(code_of([&] { train_stage1(one, {}, cfg, hp); }) == ErrorCode::too_few_samples);
}

TEST_CASE("decode_predictions_rules") {
  const auto cfg = schema::breast_config();
  DescriptorPredictions p;
  for (DescriptorKind k : {DescriptorKind::birads, DescriptorKind::shape, DescriptorKind::margin_main,
                           DescriptorKind::echogenicity, DescriptorKind::posterior}) {
    p.logits[k] = Matrix::Zero(1, static_cast<Eigen::Index>(cfg.vocabulary(k).size()));
  }
  for (int i = 0; i < 4; ++i) {
    Matrix m(1, 2);
    m << 0.0, 1.0;
    p.subtype_logits.push_back(m);
  }
  p.size_norm = 0.5;
  // ties go to index 0: circumscribed, so no subtypes survive
  auto ds = decode_predictions(p, cfg, 9.0);
  CHECK(ds.get(DescriptorKind::margin_main) == cfg.vocabulary(DescriptorKind::margin_main).at(0));
  CHECK(ds.subtypes().empty());
  CHECK(ds.size_mm() == 4.5);
  CHECK(ds.source == schema::DescriptorSource::predicted);
  p.logits[DescriptorKind::margin_main](0, *cfg.vocabulary(DescriptorKind::margin_main).index_of("non-circumscribed")) = 1;
  ds = decode_predictions(p, cfg, 9.0);
  CHECK(ds.subtypes().size() == 4);
  schema::validate_descriptors(ds, cfg);
}

TEST_CASE("augment_image_rules") {
  corpus::BusImage img;
  img.pixels = corpus::Pixels(4, 5);
  for (Eigen::Index i = 0; i < img.pixels.size(); ++i) img.pixels.data()[i] = static_cast<double>(i) / 20.0;
  Rng rng(1);
  CHECK(augment_image(img, -1, rng).pixels == img.pixels);
  int flips = 0;
  for (int trial = 0; trial < 64; ++trial) {
    const auto out = augment_image(img, 0, rng);
    const bool flipped = out.pixels != img.pixels;
    flips += flipped;
    if (flipped) CHECK(out.pixels == img.pixels.rowwise().reverse().eval());
  }
  CHECK(flips > 0);
  CHECK(flips < 64);
  for (int trial = 0; trial < 64; ++trial) {
    const auto out = augment_image(img, 2, rng);
    REQUIRE(out.rows() == 4);
    REQUIRE(out.cols() == 5);
    // every output pixel is some input pixel
    for (Eigen::Index i = 0; i < out.pixels.size(); ++i) {
      CHECK((img.pixels.array() == out.pixels.data()[i]).any());
    }
  }
  Rng a(7), b(7);
  CHECK(augment_image(img, 3, a).pixels == augment_image(img, 3, b).pixels);
}
