#include "tegke/trainer.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "tegke/errors.hpp"

namespace tegke {
namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kShuffleStream = 0x10;
constexpr std::uint64_t kNoiseStream = 0x20;
constexpr std::uint64_t kAlphaStream = 0x30;

std::vector<Parameter*> group_of(TegkeModel& model, ParamGroup g) { return model.params().group(g); }

AdamSettings settings_with_lr(double lr) {
  AdamSettings s;
  s.lr = lr;
  return s;
}

AdamSettings critic_settings(const TrainConfig& config) {
  AdamSettings s;
  s.lr = config.lr_critic;
  s.beta1 = 0.5;
  s.beta2 = 0.9;
  return s;
}

std::string array_key(const std::string& optimizer, char moment, const std::string& param) {
  return "adam/" + optimizer + "/" + moment + "/" + param;
}

void require_finite(double value, const char* what, int stage, std::int64_t step, std::size_t sample,
                    const StepLog& partial) {
  if (std::isfinite(value)) return;
  std::ostringstream msg;
  msg << "non-finite " << what << " at stage " << stage << " step " << step << " (corpus sample " << sample
      << "): " << step_log_json(partial).dump();
  throw TrainingError(msg.str());
}

Matrix real_rows(const TegkeModel& model, std::span<const TokenId> essay_out) {
  return one_hot_rows(essay_out, static_cast<Eigen::Index>(model.vocab().size()));
}

}  // namespace

TopicGraph isolated_graph(std::span<const std::string> topics) {
  TopicGraph g;
  for (const auto& t : topics) {
    bool seen = false;
    for (const auto& n : g.nodes) seen = seen || n.token == t;
    if (seen) continue;
    g.topic_indices.push_back(static_cast<int>(g.nodes.size()));
    g.nodes.push_back({t, 0});
  }
  return g;
}

TrainingData make_training_data(std::vector<TopicEssayPair> pairs, std::vector<TopicGraph> graphs,
                                const Vocabulary& vocab) {
  if (pairs.size() != graphs.size())
    throw ValidationError("corpus has " + std::to_string(pairs.size()) + " pairs but " +
                          std::to_string(graphs.size()) + " graphs");
  TrainingData d;
  for (const auto& p : pairs) d.encoded.push_back(encode_pair(p, vocab));
  d.pairs = std::move(pairs);
  d.graphs = std::move(graphs);
  return d;
}

std::vector<TopicGraph> graphs_for(const TrainConfig& config, std::span<const TopicEssayPair> pairs) {
  std::vector<TopicGraph> graphs;
  graphs.reserve(pairs.size());
  if (!config.graph_dir.empty()) {
    for (std::size_t i = 0; i < pairs.size(); ++i) graphs.push_back(load_graph(graph_cache_path(config.graph_dir, i)));
  } else if (!config.triples.empty()) {
    const TripleStore store = load_triples(config.triples);
    for (const auto& p : pairs) graphs.push_back(extract_topic_graph(store, p.topics, config.hops_max, config.per_hop));
  } else {
    for (const auto& p : pairs) graphs.push_back(isolated_graph(p.topics));
  }
  return graphs;
}

TrainingData load_training_data(const TrainConfig& config, const Vocabulary& vocab) {
  if (config.corpus.empty()) throw ValidationError("no corpus configured");
  auto pairs = load_corpus(config.corpus);
  if (pairs.empty()) throw ValidationError("corpus " + config.corpus + " is empty");
  validate_corpus(pairs, config.length_bounds());
  auto graphs = graphs_for(config, pairs);
  return make_training_data(std::move(pairs), std::move(graphs), vocab);
}

std::unique_ptr<TegkeModel> build_model(const TrainConfig& config, const Vocabulary& vocab,
                                        const RelationVocabulary& relations) {
  auto model = std::make_unique<TegkeModel>(config, vocab, relations);
  if (!config.pretrained_embeddings.empty())
    load_pretrained_embeddings(config.pretrained_embeddings, vocab, model->embeddings().word_vectors->value);
  return model;
}

void load_parameters(TegkeModel& model, const Checkpoint& checkpoint) {
  for (Parameter* p : model.params().all()) {
    auto it = checkpoint.arrays.find("param/" + p->name);
    if (it == checkpoint.arrays.end()) throw ValidationError("checkpoint lacks parameter '" + p->name + "'");
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw ValidationError("checkpoint parameter '" + p->name + "' has the wrong shape");
    p->value = it->second;
  }
}

std::unique_ptr<TegkeModel> model_from_checkpoint(const Checkpoint& checkpoint) {
  const std::vector<std::string>& tokens = checkpoint.vocab_tokens;
  Vocabulary vocab(std::vector<std::string>(tokens.begin() + kNumSpecials, tokens.end()));
  auto model = std::make_unique<TegkeModel>(checkpoint.config, std::move(vocab),
                                            RelationVocabulary(checkpoint.relations));
  load_parameters(*model, checkpoint);
  return model;
}

nlohmann::json step_log_json(const StepLog& log) {
  nlohmann::json j;
  j["step"] = log.step;
  j["stage"] = log.stage;
  j["l_rec"] = log.l_rec;
  j["l_trans"] = log.l_trans;
  j["l_d"] = log.l_d ? nlohmann::json(*log.l_d) : nlohmann::json(nullptr);
  j["l_adv"] = log.l_adv ? nlohmann::json(*log.l_adv) : nlohmann::json(nullptr);
  return j;
}

Adam make_critic_optimizer(TegkeModel& model) {
  return Adam("critic", group_of(model, ParamGroup::critic), critic_settings(model.config()));
}

double critic_objective(const TegkeModel& model, std::span<const CriticSample> samples) {
  if (samples.empty()) throw ValidationError("critic objective needs at least one sample");
  double total = 0.0;
  for (const auto& s : samples) {
    ad::Tape tape;
    tape.set_no_grad(true);
    total += critic_loss(tape, model.critic(), s.topics, s.real, s.generated, s.alpha, model.config().lambda_gp)
                 .loss.scalar();
  }
  return total / static_cast<double>(samples.size());
}

double critic_update(TegkeModel& model, std::span<const CriticSample> samples, Adam& optimizer) {
  if (samples.empty()) throw ValidationError("critic update needs at least one sample");
  for (Parameter* p : group_of(model, ParamGroup::critic)) p->zero_grad();
  const double inv = 1.0 / static_cast<double>(samples.size());
  double total = 0.0;
  for (const auto& s : samples) {
    ad::Tape tape;
    CriticLoss cl = critic_loss(tape, model.critic(), s.topics, s.real, s.generated, s.alpha,
                                model.config().lambda_gp);
    total += cl.loss.scalar();
    tape.backward(ad::scale(cl.loss, inv));
  }
  optimizer.step();
  return total * inv;
}

std::vector<CriticSample> critic_samples(const TegkeModel& model, const TrainingData& data,
                                         std::span<const std::size_t> indices, std::uint64_t seed) {
  std::vector<CriticSample> out;
  for (std::size_t i : indices) {
    const EncodedPair& e = data.encoded.at(i);
    std::vector<TokenId> in{kBos}, target(e.essay_ids);
    in.insert(in.end(), e.essay_ids.begin(), e.essay_ids.end());
    target.push_back(kEos);
    std::mt19937_64 rng(derive_seed(seed, kNoiseStream, 0, i));
    const RowVector eps1 = standard_normal(model.config().d_z, rng);
    const RowVector eps2 = standard_normal(model.config().d_z, rng);
    std::mt19937_64 alpha_rng(derive_seed(seed, kAlphaStream, 0, i));
    ad::Tape tape;
    tape.set_no_grad(true);
    TrainingForward f = model.forward_teacher(tape, e.topic_ids, in, target, data.graphs.at(i), eps1, eps2);
    out.push_back({e.topic_ids, real_rows(model, target), f.decoded.prob_rows.value(),
                   std::uniform_real_distribution<double>(0.0, 1.0)(alpha_rng)});
  }
  return out;
}

CorpusLosses evaluate_losses(const TegkeModel& model, const TrainingData& data, std::uint64_t seed) {
  CorpusLosses out;
  double nll = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < data.encoded.size(); ++i) {
    const EncodedPair& e = data.encoded[i];
    std::vector<TokenId> in{kBos}, target(e.essay_ids);
    in.insert(in.end(), e.essay_ids.begin(), e.essay_ids.end());
    target.push_back(kEos);
    std::mt19937_64 rng(derive_seed(seed, kNoiseStream, 0, i));
    const RowVector eps1 = standard_normal(model.config().d_z, rng);
    const RowVector eps2 = standard_normal(model.config().d_z, rng);
    ad::Tape tape;
    tape.set_no_grad(true);
    TrainingForward f = model.forward_teacher(tape, e.topic_ids, in, target, data.graphs[i], eps1, eps2);
    nll += f.l_rec.scalar();
    tokens += target.size();
    out.kl_z1 += gaussian_kl_value(f.student.z1.mu.value(), f.student.z1.log_var.value(), f.teacher.z1.mu.value(),
                                   f.teacher.z1.log_var.value());
    out.kl_z2 += gaussian_kl_value(f.student.z2.mu.value(), f.student.z2.log_var.value(), f.teacher.z2.mu.value(),
                                   f.teacher.z2.log_var.value());
  }
  const double n = static_cast<double>(data.encoded.size());
  out.l_rec_per_token = nll / static_cast<double>(tokens);
  out.kl_z1 /= n;
  out.kl_z2 /= n;
  out.l_trans = out.kl_z1 + out.kl_z2;
  return out;
}

Trainer::Trainer(TegkeModel& model, const TrainingData& data) : model_(model), data_(data) {
  if (data.encoded.empty()) throw ValidationError("training data is empty");
  if (data.graphs.size() != data.encoded.size()) throw ValidationError("training data lacks graphs");
}

std::int64_t Trainer::batches_per_epoch() const {
  const auto n = static_cast<std::int64_t>(data_.encoded.size());
  const auto b = static_cast<std::int64_t>(model_.config().batch);
  return (n + b - 1) / b;
}

void Trainer::begin_stage(int stage) {
  const TrainConfig& c = model_.config();
  stage_ = stage;
  step_ = 0;
  complete_ = false;
  optimizers_.clear();
  const double lr = stage == 1 ? c.lr_stage1 : c.lr_stage2;
  optimizers_.emplace("main", Adam("main", group_of(model_, ParamGroup::main), settings_with_lr(lr)));
  optimizers_.emplace("student", Adam("student", group_of(model_, ParamGroup::student), settings_with_lr(lr)));
  if (stage == 2) optimizers_.emplace("critic", make_critic_optimizer(model_));
}

RowVector Trainer::noise(std::uint64_t slot, std::size_t sample) const {
  std::mt19937_64 rng(derive_seed(model_.config().seed, kNoiseStream + static_cast<std::uint64_t>(stage_),
                                  static_cast<std::uint64_t>(step_), sample * 2 + slot));
  return standard_normal(model_.config().d_z, rng);
}

StepLog Trainer::stage1_step(const Batch& batch) {
  model_.params().zero_grad();
  std::size_t tokens = 0;
  for (std::size_t r = 0; r < batch.size(); ++r) tokens += batch.essay_lengths[r];
  const double per_token = 1.0 / static_cast<double>(tokens);
  const double per_sample = 1.0 / static_cast<double>(batch.size());

  StepLog log{1, step_ + 1, 0.0, 0.0, std::nullopt, std::nullopt};
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const std::size_t idx = batch.sample_indices[r];
    ad::Tape tape;
    tape.freeze(ParamGroup::critic);
    TrainingForward f = model_.forward_teacher(tape, batch.topics_of(r), batch.essay_in_of(r),
                                               batch.essay_out_of(r), data_.graphs[idx], noise(0, idx), noise(1, idx));
    log.l_rec += f.l_rec.scalar() * per_token;
    log.l_trans += f.l_trans.scalar() * per_sample;
    require_finite(f.l_rec.scalar(), "reconstruction loss", 1, log.step, idx, log);
    require_finite(f.l_trans.scalar(), "transfer loss", 1, log.step, idx, log);
    tape.backward(ad::scale(ad::add(f.l_rec, f.l_trans), per_sample));
  }
  const double clip = model_.config().clip_norm;
  clip_grad_norm(group_of(model_, ParamGroup::main), clip);
  clip_grad_norm(group_of(model_, ParamGroup::student), clip);
  optimizers_.at("main").step();
  optimizers_.at("student").step();
  return log;
}

StepLog Trainer::stage2_step(const Batch& batch) {
  const TrainConfig& c = model_.config();
  std::size_t tokens = 0;
  for (std::size_t r = 0; r < batch.size(); ++r) tokens += batch.essay_lengths[r];
  const double per_token = 1.0 / static_cast<double>(tokens);
  const double per_sample = 1.0 / static_cast<double>(batch.size());
  StepLog log{2, step_ + 1, 0.0, 0.0, 0.0, 0.0};

  // Generator forward passes (teacher latents); their probability rows are
  // what the critic is trained against this step.
  std::vector<std::unique_ptr<ad::Tape>> tapes;
  std::vector<TrainingForward> forwards;
  std::vector<CriticSample> samples;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const std::size_t idx = batch.sample_indices[r];
    auto tape = std::make_unique<ad::Tape>();
    tape->freeze(ParamGroup::critic);
    const std::vector<TokenId> target = batch.essay_out_of(r);
    TrainingForward f = model_.forward_teacher(*tape, batch.topics_of(r), batch.essay_in_of(r), target,
                                               data_.graphs[idx], noise(0, idx), noise(1, idx));
    require_finite(f.l_rec.scalar(), "reconstruction loss", 2, log.step, idx, log);
    samples.push_back({batch.topics_of(r), real_rows(model_, target), f.decoded.prob_rows.value(), 0.0});
    forwards.push_back(std::move(f));
    tapes.push_back(std::move(tape));
  }

  Adam& critic_opt = optimizers_.at("critic");
  for (int k = 0; k < c.n_critic; ++k) {
    for (std::size_t r = 0; r < batch.size(); ++r) {
      std::mt19937_64 rng(derive_seed(c.seed, kAlphaStream, static_cast<std::uint64_t>(step_),
                                      static_cast<std::uint64_t>(k) * data_.encoded.size() + batch.sample_indices[r]));
      samples[r].alpha = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    }
    const double l_d = critic_update(model_, samples, critic_opt);
    require_finite(l_d, "critic loss", 2, log.step, batch.sample_indices.front(), log);
    log.l_d = l_d;
  }

  model_.params().zero_grad();
  double adv = 0.0;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const std::size_t idx = batch.sample_indices[r];
    ad::Tape& tape = *tapes[r];
    TrainingForward& f = forwards[r];
    ad::Var score = model_.critic().score(tape, samples[r].topics, f.decoded.prob_rows);
    ad::Var l_adv = ad::scale(generator_adv_loss(score, ad::neg(f.l_rec), c.beta), per_sample);
    adv += l_adv.scalar();
    log.l_rec += f.l_rec.scalar() * per_token;
    log.l_trans += f.l_trans.scalar() * per_sample;
    require_finite(l_adv.scalar(), "adversarial loss", 2, log.step, idx, log);
    require_finite(f.l_trans.scalar(), "transfer loss", 2, log.step, idx, log);
    tape.backward(ad::add(l_adv, ad::scale(f.l_trans, per_sample)));
  }
  log.l_adv = adv;
  clip_grad_norm(group_of(model_, ParamGroup::main), c.clip_norm);
  clip_grad_norm(group_of(model_, ParamGroup::student), c.clip_norm);
  optimizers_.at("main").step();
  optimizers_.at("student").step();
  return log;
}

void Trainer::run_stage(int stage, int epochs, const TrainOptions& options) {
  const TrainConfig& c = model_.config();
  const std::int64_t per_epoch = batches_per_epoch();
  const std::int64_t total = static_cast<std::int64_t>(epochs) * per_epoch;
  std::int64_t cached_epoch = -1;
  std::vector<Batch> batches;
  while (step_ < total) {
    if (options.stop_after_step > 0 && step_ >= options.stop_after_step) {
      save_to(options.checkpoint_dir, "latest.ckpt");
      return;
    }
    const std::int64_t epoch = step_ / per_epoch;
    if (epoch != cached_epoch) {
      batches = make_batches(data_.encoded, static_cast<std::size_t>(c.batch),
                             derive_seed(c.seed, kShuffleStream + static_cast<std::uint64_t>(stage),
                                         static_cast<std::uint64_t>(epoch)));
      cached_epoch = epoch;
    }
    const Batch& batch = batches[static_cast<std::size_t>(step_ % per_epoch)];
    StepLog log = stage == 1 ? stage1_step(batch) : stage2_step(batch);
    ++step_;
    if (options.on_step) options.on_step(log);
    if (c.checkpoint_every > 0 && step_ % c.checkpoint_every == 0) save_to(options.checkpoint_dir, "latest.ckpt");
  }
  complete_ = true;
  save_to(options.checkpoint_dir, "stage" + std::to_string(stage) + ".ckpt");
  save_to(options.checkpoint_dir, "latest.ckpt");
}

void Trainer::train_stage1(const TrainOptions& options) {
  if (stage_ > 1 || (stage_ == 1 && complete_)) return;
  if (stage_ == 0) begin_stage(1);
  run_stage(1, model_.config().epochs_stage1, options);
}

void Trainer::train_stage2(const TrainOptions& options) {
  if (stage_ == 0 || (stage_ == 1 && !complete_))
    throw ValidationError("stage 2 starts from a completed stage-1 checkpoint");
  if (stage_ == 2 && complete_) return;
  if (stage_ == 1) begin_stage(2);
  run_stage(2, model_.config().epochs_stage2, options);
}

void Trainer::save_to(const std::filesystem::path& dir, const std::string& name) const {
  if (dir.empty()) return;
  save_checkpoint(dir / name, checkpoint());
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ck;
  ck.config = model_.config();
  ck.vocab_tokens = model_.vocab().tokens();
  ck.vocab_digest = model_.vocab().digest();
  ck.relations = model_.relations().known();
  ck.stage = stage_;
  ck.step = step_;
  ck.stage_complete = complete_;
  for (const Parameter* p : model_.params().all()) ck.arrays.emplace("param/" + p->name, p->value);
  for (const auto& [label, opt] : optimizers_) {
    ck.optimizer_steps[label] = opt.steps();
    for (const auto& [name, m] : opt.state()) {
      ck.arrays.emplace(array_key(label, 'm', name), m.m);
      ck.arrays.emplace(array_key(label, 'v', name), m.v);
    }
  }
  return ck;
}

void Trainer::restore(const Checkpoint& ck) {
  if (ck.vocab_digest != model_.vocab().digest())
    throw ValidationError("checkpoint vocabulary " + ck.vocab_digest + " does not match the model's " +
                          model_.vocab().digest());
  if (ck.stage < 0 || ck.stage > 2) throw ValidationError("checkpoint has an unknown stage marker");
  load_parameters(model_, ck);
  optimizers_.clear();
  stage_ = ck.stage;
  if (ck.stage > 0) {
    begin_stage(ck.stage);
    for (auto& [label, opt] : optimizers_) {
      auto steps = ck.optimizer_steps.find(label);
      if (steps == ck.optimizer_steps.end()) throw ValidationError("checkpoint lacks optimizer '" + label + "'");
      std::map<std::string, Adam::Moments> state;
      for (const auto& [name, unused] : opt.state()) {
        auto m = ck.arrays.find(array_key(label, 'm', name));
        auto v = ck.arrays.find(array_key(label, 'v', name));
        if (m == ck.arrays.end() || v == ck.arrays.end())
          throw ValidationError("checkpoint lacks optimizer state for '" + name + "'");
        state[name] = {m->second, v->second};
      }
      opt.restore(steps->second, std::move(state));
    }
  }
  step_ = ck.step;
  complete_ = ck.stage_complete;
}

}  // namespace tegke
