#pragma once

// Two-stage training: reconstruction plus transfer, then adversarial plus
// transfer. All randomness is drawn from streams derived from the config
// seed and the (stage, step, sample) position, so a run resumed from a
// checkpoint follows the same trajectory as an uninterrupted one.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tegke/checkpoint.hpp"
#include "tegke/model.hpp"

namespace tegke {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainingData {
  std::vector<TopicEssayPair> pairs;
  std::vector<EncodedPair> encoded;
  std::vector<TopicGraph> graphs;  // one per pair
};

// Topic nodes only, no edges.
TopicGraph isolated_graph(std::span<const std::string> topics);

TrainingData make_training_data(std::vector<TopicEssayPair> pairs, std::vector<TopicGraph> graphs,
                                const Vocabulary& vocab);

// Per-sample graphs from the cache directory when set, else extracted from the
// triple file, else topic-only graphs.
std::vector<TopicGraph> graphs_for(const TrainConfig& config, std::span<const TopicEssayPair> pairs);

// Reads config.corpus, checks lengths, and attaches graphs.
TrainingData load_training_data(const TrainConfig& config, const Vocabulary& vocab);

// Fresh model; copies pretrained word vectors when the config names a file.
std::unique_ptr<TegkeModel> build_model(const TrainConfig& config, const Vocabulary& vocab,
                                        const RelationVocabulary& relations);
std::unique_ptr<TegkeModel> model_from_checkpoint(const Checkpoint& checkpoint);
void load_parameters(TegkeModel& model, const Checkpoint& checkpoint);

struct StepLog {
  int stage = 0;
  std::int64_t step = 0;
  double l_rec = 0.0;  // per token
  double l_trans = 0.0;  // per sample
  std::optional<double> l_d;
  std::optional<double> l_adv;
};

// {step, stage, l_rec, l_trans, l_d, l_adv}; absent losses are null.
nlohmann::json step_log_json(const StepLog& log);

struct TrainOptions {
  std::int64_t stop_after_step = 0;  // leave the stage unfinished after this many steps; 0 runs it out
  std::filesystem::path checkpoint_dir;
  std::function<void(const StepLog&)> on_step;
};

// Fixed inputs for one critic evaluation.
struct CriticSample {
  std::vector<TokenId> topics;
  Matrix real;       // one-hot essay + EOS rows
  Matrix generated;  // teacher-forced probability rows, same shape
  double alpha = 0.5;
};

// Critic Adam: lr_critic with betas (0.5, 0.9).
Adam make_critic_optimizer(TegkeModel& model);
double critic_objective(const TegkeModel& model, std::span<const CriticSample> samples);
// One critic update on the batch mean; returns the objective before the step.
double critic_update(TegkeModel& model, std::span<const CriticSample> samples, Adam& optimizer);
// Teacher-forced generations for `indices` under noise drawn from `seed`.
std::vector<CriticSample> critic_samples(const TegkeModel& model, const TrainingData& data,
                                         std::span<const std::size_t> indices, std::uint64_t seed);

struct CorpusLosses {
  double l_rec_per_token = 0.0;
  double l_trans = 0.0;  // mean per sample
  double kl_z1 = 0.0;
  double kl_z2 = 0.0;
};

// Teacher-latent losses over the whole corpus without updating anything.
CorpusLosses evaluate_losses(const TegkeModel& model, const TrainingData& data, std::uint64_t seed);

class Trainer {
 public:
  Trainer(TegkeModel& model, const TrainingData& data);

  void train_stage1(const TrainOptions& options = {});
  void train_stage2(const TrainOptions& options = {});

  Checkpoint checkpoint() const;
  // Loads parameters, progress and (for an unfinished stage) optimizer state.
  void restore(const Checkpoint& checkpoint);

  int stage() const { return stage_; }
  std::int64_t step() const { return step_; }
  bool stage_complete() const { return complete_; }
  std::int64_t batches_per_epoch() const;
  const std::map<std::string, Adam>& optimizers() const { return optimizers_; }

 private:
  void begin_stage(int stage);
  StepLog stage1_step(const Batch& batch);
  StepLog stage2_step(const Batch& batch);
  void run_stage(int stage, int epochs, const TrainOptions& options);
  void save_to(const std::filesystem::path& dir, const std::string& name) const;
  RowVector noise(std::uint64_t slot, std::size_t sample) const;

  TegkeModel& model_;
  const TrainingData& data_;
  int stage_ = 0;
  std::int64_t step_ = 0;
  bool complete_ = false;
  std::map<std::string, Adam> optimizers_;
};

}  // namespace tegke
