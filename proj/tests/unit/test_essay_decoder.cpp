#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "synthetic.hpp"
#include "tegke/errors.hpp"
#include "tegke/essay_decoder.hpp"
#include "tegke/model.hpp"

using namespace tegke;
using tegke::testing::fd_relative_error;
using tegke::testing::random_matrix;

namespace {

const EssayDecoder::Dims kDims{3, 2, 4, 3, 6, 7};

struct Fixture {
  ParameterStore store{17};
  EssayDecoder dec = EssayDecoder::create(store, "dec", kDims, ParamGroup::main);
  std::mt19937_64 rng{17};
  Matrix words = random_matrix(7, 3, rng);
  Matrix topics = random_matrix(2, 4, rng);
  Matrix nodes = random_matrix(3, 3, rng);
  Matrix x_enc = random_matrix(1, 4, rng);
  Matrix z1 = random_matrix(1, 2, rng);
  Matrix z2 = random_matrix(1, 2, rng);

  Fixture() {
    for (Parameter* p : store.all()) p->value = random_matrix(p->value.rows(), p->value.cols(), rng, 0.8);
  }
  DecoderInputs inputs(ad::Tape& t) const {
    return {t.constant(words), t.constant(topics), t.constant(nodes), t.constant(x_enc), t.constant(z1),
            t.constant(z2)};
  }
};

}  // namespace

TEST_SUITE("essay_decoder") {

TEST_CASE("initial state is the concatenation") {
  ParameterStore s(1);
  const EssayDecoder dec = EssayDecoder::create(s, "d", {2, 1, 2, 2, 3, 5}, ParamGroup::main);
  ad::Tape t;
  const Matrix s0 = dec.init_state(t.constant((Matrix(1, 2) << 1, 2).finished()),
                                   t.constant(Matrix::Constant(1, 1, 3.0)))
                        .s.value();
  CHECK(s0 == (Matrix(1, 3) << 1, 2, 3).finished());
  CHECK(dec.init_state(t.constant(Matrix::Zero(1, 2)), t.constant(Matrix::Zero(1, 1))).s.value().isZero());
  CHECK_THROWS_AS(dec.init_state(t.constant(Matrix::Zero(1, 3)), t.constant(Matrix::Zero(1, 1))), ShapeError);
  CHECK_THROWS_AS(EssayDecoder::create(s, "bad", {2, 2, 2, 2, 3, 5}, ParamGroup::main), ShapeError);
}

TEST_CASE("softmax examples") {
  ad::Tape t;
  const Matrix w = ad::softmax_rows(t.constant((Matrix(1, 2) << std::log(3.0), 0.0).finished())).value();
  CHECK(w(0, 0) == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(w(0, 1) == doctest::Approx(0.25).epsilon(1e-14));
  const Matrix p = ad::softmax_rows(t.constant((Matrix(1, 3) << 1, 0, 0).finished())).value();
  CHECK(p(0, 0) == doctest::Approx(0.5761).epsilon(1e-4));
  CHECK(p(0, 1) == doctest::Approx(0.2119).epsilon(1e-3));
  CHECK(p(0, 2) == doctest::Approx(0.2119).epsilon(1e-3));
}

TEST_CASE("attention examples and invariants") {
  Fixture f;
  ad::Tape t;
  const DecoderState prev{t.constant(random_matrix(1, 6, f.rng))};
  const Matrix same = Matrix::Constant(3, 4, 0.3);
  const Attention a = f.dec.attend(t, prev, t.constant(same), AttentionTarget::topic);
  for (int i = 0; i < 3; ++i) CHECK(a.weights.value()(0, i) == doctest::Approx(1.0 / 3));
  CHECK((a.context.value() - same.topRows(1)).cwiseAbs().maxCoeff() < 1e-15);

  const Matrix single = random_matrix(1, 3, f.rng);
  const Attention b = f.dec.attend(t, prev, t.constant(single), AttentionTarget::graph);
  CHECK(b.weights.value()(0, 0) == 1.0);
  CHECK((b.context.value() - single).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS(f.dec.attend(t, prev, t.constant(Matrix::Zero(0, 3)), AttentionTarget::graph), ShapeError);

  for (int trial = 0; trial < 30; ++trial) {
    const Matrix keys = random_matrix(5, 4, f.rng, 2.0);
    const DecoderState s{t.constant(random_matrix(1, 6, f.rng))};
    const Attention r = f.dec.attend(t, s, t.constant(keys), AttentionTarget::topic);
    CHECK(r.weights.value().sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.weights.value().minCoeff() >= 0.0);
    CHECK((r.context.value().array() <= keys.colwise().maxCoeff().array() + 1e-12).all());
    CHECK((r.context.value().array() >= keys.colwise().minCoeff().array() - 1e-12).all());
  }
}

TEST_CASE("decode step rows are distributions") {
  Fixture f;
  ad::Tape t;
  const DecoderState s{t.constant(random_matrix(1, 6, f.rng))};
  auto step = [&] {
    return f.dec.decode_step(t, s, t.constant(random_matrix(1, 3, f.rng)), t.constant(f.z2),
                             t.constant(random_matrix(1, 4, f.rng)), t.constant(random_matrix(1, 3, f.rng)));
  };
  CHECK(step().prob_row.value().sum() == doctest::Approx(1.0).epsilon(1e-12));
  f.dec.output().weight->value.setZero();
  f.dec.output().bias->value.setZero();
  ad::Tape t2;
  const DecoderState s2{t2.constant(s.s.value())};
  const DecodeStep z = f.dec.decode_step(t2, s2, t2.constant(random_matrix(1, 3, f.rng)), t2.constant(f.z2),
                                         t2.constant(random_matrix(1, 4, f.rng)), t2.constant(random_matrix(1, 3, f.rng)));
  for (int i = 0; i < 7; ++i) CHECK(z.prob_row.value()(0, i) == doctest::Approx(1.0 / 7));
}

TEST_CASE("uniform rows give n ln|V|") {
  ParameterStore s(2);
  const EssayDecoder dec = EssayDecoder::create(s, "d", {2, 1, 2, 2, 3, 4}, ParamGroup::main);
  dec.output().weight->value.setZero();
  dec.output().bias->value.setZero();
  std::mt19937_64 rng(2);
  ad::Tape t;
  const DecoderInputs in{t.constant(random_matrix(4, 2, rng)), t.constant(random_matrix(2, 2, rng)),
                         t.constant(random_matrix(2, 2, rng)), t.constant(random_matrix(1, 2, rng)),
                         t.constant(random_matrix(1, 1, rng)), t.constant(random_matrix(1, 1, rng))};
  const std::vector<TokenId> ins = {kBos, 3, 2}, outs = {3, 2, kEos};
  CHECK(dec.teacher_forced(t, in, ins, outs).l_rec.scalar() == doctest::Approx(3 * std::log(4.0)).epsilon(1e-12));
  CHECK(3 * std::log(4.0) == doctest::Approx(4.1589).epsilon(1e-4));
}

TEST_CASE("perfect prediction gives zero loss") {
  ParameterStore s(3);
  const EssayDecoder dec = EssayDecoder::create(s, "d", {2, 1, 2, 2, 3, 4}, ParamGroup::main);
  dec.output().weight->value.setZero();
  dec.output().bias->value << -800, -800, -800, 800;
  std::mt19937_64 rng(3);
  ad::Tape t;
  const DecoderInputs in{t.constant(random_matrix(4, 2, rng)), t.constant(random_matrix(2, 2, rng)),
                         t.constant(random_matrix(2, 2, rng)), t.constant(random_matrix(1, 2, rng)),
                         t.constant(random_matrix(1, 1, rng)), t.constant(random_matrix(1, 1, rng))};
  const std::vector<TokenId> ins = {kBos, 3}, outs = {3, 3};
  CHECK(dec.teacher_forced(t, in, ins, outs).l_rec.scalar() == 0.0);
}

TEST_CASE("teacher forcing agrees with a step-by-step cross-entropy") {
  Fixture f;
  const std::vector<TokenId> ins = {kBos, 5, 4, 6}, outs = {5, 4, 6, kEos};
  ad::Tape t;
  const DecoderInputs in = f.inputs(t);
  const TeacherForcedOutput tf = f.dec.teacher_forced(t, in, ins, outs);

  DecoderState s = f.dec.init_state(in.x_enc, in.z1);
  double nll = 0.0;
  for (std::size_t k = 0; k < ins.size(); ++k) {
    const Attention ax = f.dec.attend(t, s, in.topic_states, AttentionTarget::topic);
    const Attention ag = f.dec.attend(t, s, in.graph_nodes, AttentionTarget::graph);
    const DecodeStep st =
        f.dec.decode_step(t, s, t.constant(f.words.row(ins[k])), in.z2, ax.context, ag.context);
    s = st.state;
    const RowVector logits = st.logits.value().row(0);
    double denom = 0.0;
    for (Eigen::Index j = 0; j < logits.size(); ++j) denom += std::exp(logits(j));
    nll += -(logits(outs[k]) - std::log(denom));
    CHECK((tf.trace.prob_rows.row(static_cast<Eigen::Index>(k)) - st.prob_row.value()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(tf.trace.attention.topic_weights[k].sum() == doctest::Approx(1.0));
    CHECK(tf.trace.attention.graph_weights[k].sum() == doctest::Approx(1.0));
  }
  CHECK(tf.l_rec.scalar() == doctest::Approx(nll).epsilon(1e-10));
  CHECK(tf.trace.prob_rows.rows() == 4);
  CHECK_THROWS_AS(f.dec.teacher_forced(t, in, ins, std::vector<TokenId>{5}), ShapeError);
}

TEST_CASE("reconstruction loss gradient matches central differences") {
  Fixture f;
  const std::vector<TokenId> ins = {kBos, 5, 4}, outs = {5, 4, kEos};
  auto loss = [&](ad::Tape& t, const DecoderInputs& in) { return f.dec.teacher_forced(t, in, ins, outs).l_rec; };
  auto fval = [&] {
    ad::Tape t;
    return loss(t, f.inputs(t)).scalar();
  };
  f.store.zero_grad();
  ad::Tape t;
  DecoderInputs in = f.inputs(t);
  in.topic_states = t.leaf(f.topics);
  in.graph_nodes = t.leaf(f.nodes);
  in.z2 = t.leaf(f.z2);
  t.backward(loss(t, in));
  CHECK(fd_relative_error(fval, f.topics, t.grad(in.topic_states)) < 1e-4);
  CHECK(fd_relative_error(fval, f.nodes, t.grad(in.graph_nodes)) < 1e-4);
  CHECK(fd_relative_error(fval, f.z2, t.grad(in.z2)) < 1e-4);
  for (Parameter* p : f.store.all()) CHECK(fd_relative_error(fval, p->value, Matrix(p->grad)) < 1e-4);
}

TEST_CASE("greedy picks skip PAD and BOS and break ties low") {
  CHECK(greedy_pick((RowVector(5) << 0.9, 0.9, 0.05, 0.05, 0.0).finished()) == 2);
  CHECK(greedy_pick((RowVector(5) << 0.1, 0.1, 0.2, 0.3, 0.3).finished()) == 3);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const TokenId k = sample_pick((RowVector(5) << 0.4, 0.4, 0.0, 0.1, 0.1).finished(), rng);
    CHECK((k == 3 || k == 4));
  }
}

TEST_CASE("generation respects the length limit and is deterministic") {
  Fixture f;
  for (DecodeMode mode : {DecodeMode::greedy, DecodeMode::sample}) {
    for (int max_len : {1, 4, 12}) {
      ad::Tape t1, t2;
      std::mt19937_64 r1(5), r2(5);
      const DecoderTrace a = f.dec.generate(t1, f.inputs(t1), mode, max_len, r1);
      const DecoderTrace b = f.dec.generate(t2, f.inputs(t2), mode, max_len, r2);
      CHECK(a.token_ids == b.token_ids);
      CHECK(a.prob_rows == b.prob_rows);
      CHECK(static_cast<int>(a.token_ids.size()) <= max_len);
      CHECK(a.prob_rows.rows() == static_cast<Eigen::Index>(a.token_ids.size()));
      for (TokenId id : a.token_ids) CHECK((id != kPad && id != kBos));
      for (std::size_t k = 0; k + 1 < a.token_ids.size(); ++k) CHECK(a.token_ids[k] != kEos);
    }
  }
  CHECK(parse_decode_mode("sample") == DecodeMode::sample);
  CHECK_THROWS_AS(parse_decode_mode("beam"), ValidationError);
}

TEST_CASE("attention export shapes") {
  const TrainConfig cfg = tegke::testing::micro_config();
  const Vocabulary vocab({"a", "b", "c"});
  const std::vector<std::string> topics = {"a", "b"};
  TopicGraph one;
  one.nodes = {{"a", 0}};
  one.topic_indices = {0};
  TegkeModel model(cfg, vocab, RelationVocabulary());
  const std::vector<TokenId> ids = {4, 5};
  const DecoderTrace tr = model.generate(ids, one, DecodeMode::greedy, 6, 3);
  const auto dump = export_attention(tr, one, vocab, topics);
  REQUIRE(dump["tokens"].size() == tr.token_ids.size());
  CHECK(dump["topic_attention"].size() == tr.token_ids.size());
  CHECK(dump["graph_nodes"].size() == 1);
  for (const auto& row : dump["graph_attention"]) CHECK(row[0].get<double>() == 1.0);
  for (const auto& row : dump["topic_attention"]) {
    REQUIRE(row.size() == 2);
    CHECK(row[0].get<double>() + row[1].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
  }
  const DecoderTrace again = model.generate(ids, one, DecodeMode::greedy, 6, 3);
  CHECK(again.token_ids == tr.token_ids);
}

}  // TEST_SUITE
