#include "doctest.h"

#include "bustr/error.hpp"
#include "bustr/nn/checkpoint.hpp"
#include "bustr/nn/layers.hpp"
#include "gradcheck.hpp"

#include <filesystem>

using namespace bustr;
using namespace bustr::nn;

namespace {

Parameter random_param(const std::string& name, int r, int c, Rng& rng, double sd = 0.7) {
  return Parameter(name, normal_matrix(r, c, sd, rng));
}

}  // namespace

TEST_CASE("elementwise_and_matrix_ops_match_finite_differences") {
  Rng rng(11);
  Parameter a = random_param("a", 3, 4, rng);
  Parameter b = random_param("b", 4, 5, rng);
  Parameter c = random_param("c", 3, 5, rng);
  Parameter row = random_param("row", 1, 5, rng);
  Parameter gamma = random_param("gamma", 1, 5, rng);
  Parameter beta = random_param("beta", 1, 5, rng);
  ParamList params{&a, &b, &c, &row, &gamma, &beta};
  const std::vector<int> targets{1, 4, 0};
  auto loss = [&](bool backprop) {
    Tape t(backprop);
    Var x = matmul(t.leaf(a), t.leaf(b));
    x = add_row(add(x, t.leaf(c)), t.leaf(row));
    x = layer_norm(gelu(x), t.leaf(gamma), t.leaf(beta));
    Var s = softmax_rows(matmul_bt(x, t.leaf(c)), true);
    Var y = cmul(sigmoid(x), matmul(s, x));
    Var ce = cross_entropy(y, targets);
    Var m = mean_rows(scale(y, 0.3));
    Var l = l1(slice_cols(m, 2, 1), 0.05);
    const Var parts[] = {ce, l};
    Var total = sum(parts);
    if (backprop) t.backward(total);
    return total.scalar();
  };
  const auto res = testing::grad_check(params, loss);
  INFO(res.worst);
  CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("gather_concat_and_alignment_gradients") {
  Rng rng(5);
  Parameter a = random_param("a", 4, 3, rng);
  Parameter b = random_param("b", 2, 3, rng);
  ParamList params{&a, &b};
  const std::vector<int> perm{3, 1, 0, 2, 1};
  Eigen::MatrixXi flat(2, 3);
  flat << 0, 5, 7, 11, 2, 2;
  auto loss = [&](bool backprop) {
    Tape t(backprop);
    const Var rows[] = {t.leaf(a), t.leaf(b)};
    Var cat = concat_rows(rows);
    Var g = gather_rows(cat, perm);
    const Var cols[] = {g, g};
    Var wide = concat_cols(cols);
    Var e = gather_elements(t.leaf(a), flat);
    Var al = cosine_alignment(slice_rows(wide, 0, 2), concat_cols(std::vector<Var>{e, e}));
    Var mx = max(al, scale(al, 0.5));
    if (backprop) t.backward(mx);
    return mx.scalar();
  };
  const auto res = testing::grad_check(params, loss);
  INFO(res.worst);
  CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("cross_entropy_closed_forms") {
  Tape t;
  Matrix uniform = Matrix::Zero(2, 6);
  const std::vector<int> tg{0, 3};
  CHECK(cross_entropy(t.constant(uniform), tg).scalar() == doctest::Approx(std::log(6.0)).epsilon(1e-12));
  CHECK(cross_entropy(t.constant(uniform), tg, Reduction::sum).scalar() ==
        doctest::Approx(2 * std::log(6.0)).epsilon(1e-12));
  Matrix sharp = Matrix::Zero(1, 3);
  sharp(0, 1) = 20.0;
  const std::vector<int> one{1};
  CHECK(cross_entropy(t.constant(sharp), one).scalar() < 1e-8);
}

TEST_CASE("frozen_parameters_receive_no_gradient") {
  Rng rng(2);
  Parameter w = random_param("w", 2, 2, rng);
  Parameter x = random_param("x", 1, 2, rng);
  w.frozen = true;
  w.zero_grad();
  x.zero_grad();
  Tape t;
  Var y = mean_rows(matmul(t.leaf(x), t.leaf(w)));
  Var l = l1(slice_cols(y, 0, 1), -100.0);
  t.backward(l);
  CHECK(w.grad.isZero(0.0));
  CHECK_FALSE(x.grad.isZero(0.0));
  Adam opt(0.1);
  bool threw = false;
  try {
    opt.step({&w});
  } catch (const Error& e) {
    threw = e.code() == ErrorCode::frozen_violation;
  }
  CHECK(threw);
}

TEST_CASE("adam_moves_against_gradient") {
  Parameter p("p", Matrix::Constant(1, 1, 1.0));
  p.grad(0, 0) = 2.0;
  Adam opt(0.1);
  opt.step({&p});
  CHECK(p.value(0, 0) == doctest::Approx(0.9).epsilon(1e-9));
}

TEST_CASE("checkpoint_round_trip_is_bit_exact_after_quantization") {
  Rng rng(9);
  Parameter a = random_param("enc.a", 3, 2, rng);
  Parameter b = random_param("enc.b", 1, 4, rng);
  ParamList params{&a, &b};
  quantize_to_float(params);
  const auto before = hash_parameters(params);
  const auto path = std::filesystem::temp_directory_path() / "bustr_ckpt_test.bin";
  write_checkpoint(path, {{"seed", 4}}, params);
  a.value.setZero();
  b.value.setZero();
  const auto file = read_checkpoint(path);
  CHECK(file.header.at("seed") == 4);
  load_parameters(file, params);
  CHECK(hash_parameters(params) == before);
  Parameter wrong("enc.a", Matrix::Zero(2, 2));
  bool threw = false;
  try {
    load_parameters(file, {&wrong});
  } catch (const Error& e) {
    threw = e.code() == ErrorCode::schema_mismatch;
  }
  CHECK(threw);
  std::filesystem::remove(path);
}
