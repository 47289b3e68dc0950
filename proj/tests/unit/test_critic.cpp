#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "tegke/critic.hpp"
#include "tegke/errors.hpp"

using namespace tegke;
using tegke::testing::fd_relative_error;
using tegke::testing::random_matrix;

namespace {

Matrix prob_rows(Eigen::Index n, Eigen::Index v, std::mt19937_64& rng) {
  Matrix m = random_matrix(n, v, rng, 2.0).array().exp();
  for (Eigen::Index i = 0; i < n; ++i) m.row(i) /= m.row(i).sum();
  return m;
}

struct Probe {
  Parameter w{"critic.w", ParamGroup::critic, {}, {}};
  Parameter b{"critic.b", ParamGroup::critic, Matrix::Zero(1, 1), {}};
  LinearProbeCritic critic{&w, &b};
  explicit Probe(Matrix weight) { w.value = std::move(weight); }
};

}  // namespace

TEST_SUITE("critic") {

TEST_CASE("zero network scores zero") {
  ParameterStore s(1);
  const CnnCritic c = CnnCritic::create(s, "critic", 6, 4, 3);
  c.embedding()->value.setZero();
  std::mt19937_64 rng(1);
  ad::Tape t;
  const std::vector<TokenId> topics = {4, 5};
  CHECK(c.score(t, topics, t.constant(prob_rows(7, 6, rng))).scalar() == 0.0);
}

TEST_CASE("scores are finite and short inputs are padded") {
  ParameterStore s(2);
  const CnnCritic c = CnnCritic::create(s, "critic", 6, 4, 3);
  std::mt19937_64 rng(2);
  ad::Tape t;
  const std::vector<TokenId> none, one = {4};
  const std::vector<TokenId> real_ids = {4, 5, 2};
  CHECK(std::isfinite(c.score(t, none, t.constant(prob_rows(1, 6, rng))).scalar()));
  CHECK(std::isfinite(c.score(t, one, t.constant(one_hot_rows(real_ids, 6))).scalar()));
  CHECK(std::isfinite(c.score(t, one, t.constant(prob_rows(30, 6, rng))).scalar()));
  CHECK_THROWS_AS(c.score(t, none, t.constant(Matrix::Zero(0, 6))), ShapeError);
  CHECK_THROWS_AS(c.score(t, one, t.constant(Matrix::Zero(2, 5))), ShapeError);
}

TEST_CASE("linear probe scores and penalties") {
  Probe unit((Matrix(2, 3) << 0.6, 0, 0, 0, 0.8, 0).finished());
  const Matrix v = (Matrix(2, 3) << 1, 2, 3, 4, 5, 6).finished();
  const std::vector<TokenId> topics = {0};
  ad::Tape t;
  CHECK(unit.critic.score(t, topics, t.constant(v)).scalar() == doctest::Approx(0.6 + 4.0));
  std::mt19937_64 rng(3);
  const Matrix a = prob_rows(2, 3, rng), g = prob_rows(2, 3, rng);
  CHECK(gradient_penalty(t, unit.critic, topics, a, g, 0.3).scalar() == doctest::Approx(0.0).epsilon(1e-15));

  Probe twice(2.0 * unit.w.value);
  ad::Tape t2;
  CHECK(gradient_penalty(t2, twice.critic, topics, a, g, 0.7).scalar() == doctest::Approx(1.0).epsilon(1e-15));
  const CriticLoss l = critic_loss(t2, twice.critic, topics, a, a, 0.5, 10.0);
  CHECK(l.loss.scalar() == doctest::Approx(10.0).epsilon(1e-14));

  // D(gen) = 1, D(real) = 3 under a unit-norm probe.
  Probe e1((Matrix(1, 2) << 1, 0).finished());
  ad::Tape t3;
  const CriticLoss ld = critic_loss(t3, e1.critic, topics, (Matrix(1, 2) << 3, 0).finished(),
                                    (Matrix(1, 2) << 1, 0).finished(), 0.4, 10.0);
  CHECK(ld.score_gen.scalar() == 1.0);
  CHECK(ld.score_real.scalar() == 3.0);
  CHECK(ld.loss.scalar() == doctest::Approx(-2.0).epsilon(1e-15));
  CHECK(critic_loss(t3, unit.critic, topics, a, a, 0.5, 10.0).loss.scalar() == doctest::Approx(0.0));
  CHECK_THROWS_AS(gradient_penalty(t3, unit.critic, topics, a, g, 1.5), ValidationError);
}

TEST_CASE("alpha = 1 interpolates to the real essay") {
  ParameterStore s(4);
  const CnnCritic c = CnnCritic::create(s, "critic", 6, 4, 3);
  std::mt19937_64 rng(4);
  const Matrix real = prob_rows(6, 6, rng), gen = prob_rows(6, 6, rng), other = prob_rows(6, 6, rng);
  const std::vector<TokenId> topics = {4};
  ad::Tape t;
  CHECK(gradient_penalty(t, c, topics, real, gen, 1.0).scalar() ==
        gradient_penalty(t, c, topics, real, other, 1.0).scalar());
  CHECK(gradient_penalty(t, c, topics, real, gen, 0.2).scalar() >= 0.0);
}

TEST_CASE("adversarial generator loss") {
  ad::Tape t;
  CHECK(generator_adv_loss(t.scalar_constant(2.0), t.scalar_constant(-10.0), 10.0).scalar() == 98.0);
  CHECK(generator_adv_loss(t.scalar_constant(2.0), t.scalar_constant(-10.0), 0.0).scalar() == -2.0);
}

TEST_CASE("input gradient matches backpropagation and central differences") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    ParameterStore s(static_cast<std::uint64_t>(10 + trial));
    const CnnCritic c = CnnCritic::create(s, "critic", 5, 3, 4);
    for (Parameter* p : s.all()) p->value = random_matrix(p->value.rows(), p->value.cols(), rng);
    Matrix rows = prob_rows(4 + trial, 5, rng);
    const std::vector<TokenId> topics = {3, 4};
    ad::Tape t;
    ad::Var leaf = t.leaf(rows);
    t.backward(c.score(t, topics, leaf));
    const Matrix explicit_grad = c.input_gradient(t, topics, t.constant(rows)).value();
    CHECK((explicit_grad - t.grad(leaf)).cwiseAbs().maxCoeff() < 1e-12);
    auto f = [&] {
      ad::Tape tt;
      return c.score(tt, topics, tt.constant(rows)).scalar();
    };
    CHECK(fd_relative_error(f, rows, t.grad(leaf)) < 1e-4);
  }
}

TEST_CASE("critic loss gradient reaches every critic parameter correctly") {
  std::mt19937_64 rng(6);
  ParameterStore s(6);
  const CnnCritic c = CnnCritic::create(s, "critic", 5, 3, 4);
  for (Parameter* p : s.all()) p->value = random_matrix(p->value.rows(), p->value.cols(), rng);
  const Matrix real = one_hot_rows(std::vector<TokenId>{4, 2, 3, 4, 2, 2}, 5), gen = prob_rows(6, 5, rng);
  const std::vector<TokenId> topics = {3};
  auto f = [&] {
    ad::Tape tt;
    return critic_loss(tt, c, topics, real, gen, 0.35, 10.0).loss.scalar();
  };
  s.zero_grad();
  ad::Tape t;
  t.backward(critic_loss(t, c, topics, real, gen, 0.35, 10.0).loss);
  for (Parameter* p : s.all()) CHECK(fd_relative_error(f, p->value, Matrix(p->grad)) < 1e-4);
}

TEST_CASE("a generator step against a frozen linear critic raises its score") {
  std::mt19937_64 rng(7);
  Probe probe(random_matrix(3, 4, rng));
  Parameter gen{"gen", ParamGroup::main, random_matrix(3, 4, rng), {}};
  const std::vector<TokenId> topics;
  auto score = [&] {
    ad::Tape t;
    return probe.critic.score(t, topics, t.constant(gen.value)).scalar();
  };
  const double before = score();
  gen.zero_grad();
  ad::Tape t;
  t.freeze(ParamGroup::critic);
  t.backward(generator_adv_loss(probe.critic.score(t, topics, t.param(gen)), t.scalar_constant(0.0), 10.0));
  CHECK(probe.w.grad.size() == 0);
  gen.value -= 0.01 * gen.grad;
  CHECK(score() > before);
}

}  // TEST_SUITE
