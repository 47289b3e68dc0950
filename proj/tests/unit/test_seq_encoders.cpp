#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "tegke/errors.hpp"
#include "tegke/seq_encoders.hpp"

using namespace tegke;
using tegke::testing::fd_relative_error;
using tegke::testing::random_matrix;

TEST_SUITE("seq_encoders") {

TEST_CASE("state layout and pooling") {
  ParameterStore s(1);
  const BiGruEncoder enc = BiGruEncoder::create(s, "enc", 5, 8, ParamGroup::main);
  CHECK(enc.output_dim() == 8);
  std::mt19937_64 rng(1);
  const Matrix xs = random_matrix(4, 5, rng);
  ad::Tape t;
  const EncoderOutput out = enc.encode(t, t.constant(xs));
  CHECK(out.states.rows() == 4);
  CHECK(out.states.cols() == 8);
  CHECK((out.pooled.value() - out.states.value().colwise().mean()).cwiseAbs().maxCoeff() < 1e-15);

  // The forward half of row 0 is one step from zero; the backward half of
  // the last row likewise.
  const Matrix f0 = enc.forward_cell().step(t, t.constant(xs.row(0)), t.constant(Matrix::Zero(1, 4))).value();
  const Matrix b3 = enc.backward_cell().step(t, t.constant(xs.row(3)), t.constant(Matrix::Zero(1, 4))).value();
  CHECK((out.states.value().block(0, 0, 1, 4) - f0).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((out.states.value().block(3, 4, 1, 4) - b3).cwiseAbs().maxCoeff() < 1e-15);

  const EncoderOutput one = enc.encode(t, t.constant(xs.topRows(1)));
  CHECK(one.pooled.value() == one.states.value());
  CHECK_THROWS_AS(BiGruEncoder::create(s, "odd", 5, 7, ParamGroup::main), ShapeError);
}

TEST_CASE("two identical tokens pool to the mean of their states") {
  ParameterStore s(2);
  const BiGruEncoder enc = BiGruEncoder::create(s, "enc", 3, 6, ParamGroup::main);
  ad::Tape t;
  ad::Var table = t.constant((Matrix(6, 3) << Matrix::Zero(4, 3), 0.3, -0.2, 0.9, 1, 1, 1).finished());
  const std::vector<TokenId> ids = {4, 4};
  const EncoderOutput out = enc.encode_ids(t, table, ids, 2);
  const Matrix st = out.states.value();
  for (int j = 0; j < 6; ++j) CHECK(out.pooled.value()(0, j) == doctest::Approx(0.5 * (st(0, j) + st(1, j))));
}

TEST_CASE("padding after the true length changes nothing") {
  ParameterStore s(3);
  const BiGruEncoder enc = BiGruEncoder::create(s, "enc", 3, 6, ParamGroup::main);
  std::mt19937_64 rng(3);
  ad::Tape t;
  ad::Var table = t.constant(random_matrix(9, 3, rng));
  const std::vector<TokenId> a = {5, 7, 6, kPad, kPad}, b = {5, 7, 6, kPad, kPad, kPad, kPad}, c = {5, 7, 6};
  const Matrix pa = enc.encode_ids(t, table, a, 3).pooled.value();
  CHECK(pa == enc.encode_ids(t, table, b, 3).pooled.value());
  CHECK(pa == enc.encode_ids(t, table, c, 3).pooled.value());
  CHECK(pa == enc.encode_ids(t, table, c, 3).pooled.value());
  CHECK_THROWS_AS(enc.encode_ids(t, table, c, 4), ShapeError);
  CHECK_THROWS_AS(enc.encode_ids(t, table, c, 0), ShapeError);
}

TEST_CASE("gradient with respect to the inputs matches central differences") {
  ParameterStore s(4);
  const BiGruEncoder enc = BiGruEncoder::create(s, "enc", 4, 6, ParamGroup::main);
  std::mt19937_64 rng(4);
  Matrix xs = random_matrix(5, 4, rng);
  ad::Tape t;
  ad::Var leaf = t.leaf(xs);
  t.backward(ad::sum(enc.encode(t, leaf).pooled));
  const Matrix analytic = t.grad(leaf);
  auto f = [&] {
    ad::Tape tt;
    return enc.encode(tt, tt.constant(xs)).pooled.value().sum();
  };
  CHECK(fd_relative_error(f, xs, analytic) < 1e-4);
}

}  // TEST_SUITE
