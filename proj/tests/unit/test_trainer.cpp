#include <doctest.h>

#include <fstream>

#include "harness.hpp"
#include "tegke/errors.hpp"
#include "tempdir.hpp"

using namespace tegke;
using tegke::testing::TempDir;
using tegke::testing::toy_setup;

namespace {

TrainConfig small_config() {
  TrainConfig c = tegke::testing::micro_config();
  c.batch = 2;
  c.n_critic = 2;
  c.epochs_stage1 = 2;
  c.epochs_stage2 = 1;
  c.lr_stage2 = 1e-3;
  c.lr_critic = 1e-3;
  c.clip_norm = 5.0;
  return c;
}

std::vector<StepLog> run(const tegke::testing::ToySetup& s, int stage_limit, std::int64_t stop = 0,
                         const std::filesystem::path& dir = {}) {
  TegkeModel model(s.config, s.vocab, s.relations);
  Trainer trainer(model, s.data);
  std::vector<StepLog> logs;
  TrainOptions opts;
  opts.on_step = [&](const StepLog& l) { logs.push_back(l); };
  opts.checkpoint_dir = dir;
  opts.stop_after_step = stop;
  trainer.train_stage1(opts);
  if (stage_limit >= 2) trainer.train_stage2(opts);
  return logs;
}

bool same_logs(const std::vector<StepLog>& a, const std::vector<StepLog>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (step_log_json(a[i]) != step_log_json(b[i])) return false;
  return true;
}

std::map<std::string, Matrix> params_of(const TegkeModel& m) {
  std::map<std::string, Matrix> out;
  for (const Parameter* p : m.params().all()) out[p->name] = p->value;
  return out;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("zero epochs leave the initialisation untouched") {
  TrainConfig c = small_config();
  c.epochs_stage1 = 0;
  c.epochs_stage2 = 0;
  const auto s = toy_setup(6, 1, c);
  TegkeModel model(c, s->vocab, s->relations);
  const auto before = params_of(model);
  Trainer trainer(model, s->data);
  trainer.train_stage1();
  trainer.train_stage2();
  CHECK(params_of(model) == before);
  CHECK(trainer.stage() == 2);
  CHECK(trainer.stage_complete());
  TegkeModel fresh(c, s->vocab, s->relations);
  CHECK(params_of(fresh) == before);
}

TEST_CASE("transfer and reconstruction losses reach disjoint groups") {
  const auto s = toy_setup(4, 2, small_config());
  TegkeModel model(s->config, s->vocab, s->relations);
  const EncodedPair& e = s->data.encoded[0];
  std::vector<TokenId> in{kBos}, out(e.essay_ids);
  in.insert(in.end(), e.essay_ids.begin(), e.essay_ids.end());
  out.push_back(kEos);
  std::mt19937_64 rng(1);
  const RowVector e1 = standard_normal(s->config.d_z, rng), e2 = standard_normal(s->config.d_z, rng);

  auto grad_norm_of = [&](ParamGroup g) {
    double n = 0.0;
    for (Parameter* p : model.params().group(g)) n += p->grad.size() ? p->grad.squaredNorm() : 0.0;
    return n;
  };
  model.params().zero_grad();
  {
    ad::Tape t;
    t.freeze(ParamGroup::critic);
    t.backward(model.forward_teacher(t, e.topic_ids, in, out, s->data.graphs[0], e1, e2).l_trans);
  }
  CHECK(grad_norm_of(ParamGroup::main) == 0.0);
  CHECK(grad_norm_of(ParamGroup::student) > 0.0);

  model.params().zero_grad();
  {
    ad::Tape t;
    t.freeze(ParamGroup::critic);
    t.backward(model.forward_teacher(t, e.topic_ids, in, out, s->data.graphs[0], e1, e2).l_rec);
  }
  CHECK(grad_norm_of(ParamGroup::student) == 0.0);
  CHECK(grad_norm_of(ParamGroup::main) > 0.0);
  CHECK(grad_norm_of(ParamGroup::critic) == 0.0);
}

TEST_CASE("optimizer steps change only their own groups") {
  const auto s = toy_setup(6, 3, small_config());
  TegkeModel model(s->config, s->vocab, s->relations);
  Trainer trainer(model, s->data);
  auto snapshot = [&](ParamGroup g) {
    std::map<std::string, Matrix> out;
    for (Parameter* p : model.params().group(g)) out[p->name] = p->value;
    return out;
  };
  const auto critic0 = snapshot(ParamGroup::critic), main0 = snapshot(ParamGroup::main),
             student0 = snapshot(ParamGroup::student);
  TrainOptions one;
  one.stop_after_step = 1;
  trainer.train_stage1(one);
  CHECK(snapshot(ParamGroup::critic) == critic0);
  CHECK(snapshot(ParamGroup::main) != main0);
  CHECK(snapshot(ParamGroup::student) != student0);
  CHECK(trainer.step() == 1);
  CHECK_FALSE(trainer.stage_complete());
  CHECK(trainer.optimizers().at("main").steps() == 1);
  CHECK(trainer.optimizers().count("critic") == 0);
}

TEST_CASE("identical seeds give identical loss sequences in both stages") {
  const auto s = toy_setup(6, 4, small_config());
  const auto a = run(*s, 2), b = run(*s, 2);
  CHECK(a.size() == 9);
  CHECK(same_logs(a, b));
  for (const StepLog& l : a) {
    CHECK(std::isfinite(l.l_rec));
    CHECK(std::isfinite(l.l_trans));
    CHECK(l.l_d.has_value() == (l.stage == 2));
  }
  auto other = toy_setup(6, 4, [] {
    TrainConfig c = small_config();
    c.seed = 99;
    return c;
  }());
  CHECK_FALSE(same_logs(a, run(*other, 2)));
}

TEST_CASE("resuming reproduces the uninterrupted trajectory") {
  TrainConfig c = small_config();
  c.epochs_stage1 = 4;  // 12 steps
  const auto s = toy_setup(6, 5, c);
  const auto full = run(*s, 2);

  TempDir dir;
  const auto head = run(*s, 1, 4, dir.path());
  REQUIRE(head.size() == 4);
  const Checkpoint ck = load_checkpoint(dir / "latest.ckpt", s->vocab.digest());
  CHECK(ck.stage == 1);
  CHECK(ck.step == 4);
  CHECK_FALSE(ck.stage_complete);

  auto model = model_from_checkpoint(ck);
  TrainingData data = s->data;
  Trainer trainer(*model, data);
  trainer.restore(ck);
  std::vector<StepLog> tail;
  TrainOptions opts;
  opts.on_step = [&](const StepLog& l) { tail.push_back(l); };
  trainer.train_stage1(opts);

  // Resume stage 2 half way as well.
  opts.stop_after_step = 2;
  opts.checkpoint_dir = dir.path();
  trainer.train_stage2(opts);
  const Checkpoint mid = load_checkpoint(dir / "latest.ckpt");
  CHECK(mid.stage == 2);
  auto model2 = model_from_checkpoint(mid);
  Trainer trainer2(*model2, data);
  trainer2.restore(mid);
  opts.stop_after_step = 0;
  trainer2.train_stage2(opts);

  std::vector<StepLog> joined = head;
  joined.insert(joined.end(), tail.begin(), tail.end());
  CHECK(same_logs(joined, full));
  CHECK(std::filesystem::exists(dir / "stage2.ckpt"));
}

TEST_CASE("stage two needs a finished stage one") {
  const auto s = toy_setup(4, 6, small_config());
  TegkeModel model(s->config, s->vocab, s->relations);
  Trainer trainer(model, s->data);
  CHECK_THROWS_AS(trainer.train_stage2(), ValidationError);
}

TEST_CASE("non-finite losses abort with diagnostics") {
  const auto s = toy_setup(4, 7, small_config());
  TegkeModel model(s->config, s->vocab, s->relations);
  model.decoder().output().bias->value(0, 5) = std::numeric_limits<double>::quiet_NaN();
  Trainer trainer(model, s->data);
  try {
    trainer.train_stage1();
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("stage 1 step 1") != std::string::npos);
    CHECK(msg.find("l_rec") != std::string::npos);
  }
}

TEST_CASE("checkpoints round-trip bit for bit") {
  const auto s = toy_setup(6, 8, small_config());
  TegkeModel model(s->config, s->vocab, s->relations);
  Trainer trainer(model, s->data);
  TrainOptions opts;
  opts.stop_after_step = 3;
  trainer.train_stage1(opts);
  Checkpoint ck = trainer.checkpoint();
  ck.arrays["param/extra"] = (Matrix(1, 2) << -0.0, std::numeric_limits<double>::denorm_min()).finished();

  TempDir dir;
  save_checkpoint(dir / "a.ckpt", ck);
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  CHECK(back == ck);
  CHECK(back.config.d_dec == ck.config.d_dec);
  CHECK(back.optimizer_steps == ck.optimizer_steps);
  CHECK(std::signbit(back.arrays.at("param/extra")(0, 0)));
  save_checkpoint(dir / "b.ckpt", back);
  CHECK(tegke::testing::read_file(dir / "a.ckpt") == tegke::testing::read_file(dir / "b.ckpt"));

  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", std::string("0000000000000000")), ValidationError);

  // Digest in the header no longer matches the stored vocabulary.
  std::string bytes = tegke::testing::read_file(dir / "a.ckpt");
  const std::string digest = ck.vocab_digest;
  const auto pos = bytes.find(digest);
  REQUIRE(pos != std::string::npos);
  bytes[pos] = bytes[pos] == 'f' ? 'e' : 'f';
  std::ofstream(dir / "tampered.ckpt", std::ios::binary) << bytes;
  CHECK_THROWS_AS(load_checkpoint(dir / "tampered.ckpt"), ValidationError);

  const std::string whole = tegke::testing::read_file(dir / "a.ckpt");
  std::ofstream(dir / "short.ckpt", std::ios::binary) << whole.substr(0, whole.size() - 8);
  CHECK_THROWS(load_checkpoint(dir / "short.ckpt"));
  std::ofstream(dir / "junk.ckpt", std::ios::binary) << "not a checkpoint";
  CHECK_THROWS(load_checkpoint(dir / "junk.ckpt"));
}

TEST_CASE("critic updates lower the objective on fixed samples") {
  TrainConfig c = small_config();
  c.lr_critic = 1e-4;
  const auto s = toy_setup(6, 9, c);
  TegkeModel model(c, s->vocab, s->relations);
  const std::vector<std::size_t> idx = {0, 1, 2};
  const auto samples = critic_samples(model, s->data, idx, 3);
  REQUIRE(samples.size() == 3);
  CHECK(samples[0].real.rows() == samples[0].generated.rows());
  Adam opt = make_critic_optimizer(model);
  CHECK(opt.settings().beta1 == 0.5);
  CHECK(opt.settings().beta2 == 0.9);
  double prev = critic_objective(model, samples);
  for (int k = 0; k < 5; ++k) {
    const double before = critic_update(model, samples, opt);
    CHECK(before == doctest::Approx(prev).epsilon(1e-12));
    prev = critic_objective(model, samples);
    CHECK(prev < before);
  }
}

TEST_CASE("step logs use nulls for absent losses") {
  const auto j = step_log_json({1, 3, 0.5, 0.25, std::nullopt, std::nullopt});
  CHECK(j["stage"] == 1);
  CHECK(j["step"] == 3);
  CHECK(j["l_d"].is_null());
  CHECK(j["l_adv"].is_null());
  CHECK(step_log_json({2, 1, 0.5, 0.25, 1.0, 2.0})["l_adv"] == 2.0);
}

TEST_CASE("full-model gradients match central differences") {
  const auto err = tegke::testing::full_model_gradient_errors(1);
  CHECK(err.l_rec < 1e-4);
  CHECK(err.l_trans < 1e-4);
  CHECK(err.l_d < 1e-4);
  CHECK(err.l_adv < 1e-4);
}

}  // TEST_SUITE
