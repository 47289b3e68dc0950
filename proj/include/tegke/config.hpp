#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "tegke/data.hpp"

namespace tegke {

// Every hyperparameter of the model and both training stages. Defaults are
// the full-scale settings; desk-scale runs override dimensions and epochs.
struct TrainConfig {
  // dimensions
  int d_emb = 200;
  int d_enc = 512;  // concatenated bidirectional size, d_enc / 2 per direction
  int d_dec = 1024;
  int d_z = 512;
  int d_g = 200;
  int gcn_layers = 2;
  int critic_emb = 200;
  int critic_filters = 100;

  // data
  int vocab_max = 50000;
  int batch = 32;
  int hops_max = 5;
  int per_hop = 40;
  int max_len = 100;
  int essay_len_min = 50;
  int essay_len_max = 100;
  std::string length_check = "warn";  // off | warn | error

  // optimisation
  double lambda_gp = 10.0;
  double beta = 10.0;
  double lr_stage1 = 1e-3;
  double lr_stage2 = 1e-4;
  double lr_critic = 1e-4;
  int n_critic = 5;
  int epochs_stage1 = 10;
  int epochs_stage2 = 2;
  double clip_norm = 5.0;  // 0 disables clipping
  int checkpoint_every = 0;  // steps; 0 writes only stage checkpoints
  std::uint64_t seed = 1;

  // paths
  std::string corpus;
  std::string vocab;
  std::string graph_dir;
  std::string triples;
  std::string pretrained_embeddings;

  // Throws ValidationError on non-positive sizes or incompatible dimensions.
  void validate() const;
  LengthBounds length_bounds() const;

  template <class Self, class Visitor>
  static void visit(Self& c, Visitor&& v) {
    v("d_emb", c.d_emb);
    v("d_enc", c.d_enc);
    v("d_dec", c.d_dec);
    v("d_z", c.d_z);
    v("d_g", c.d_g);
    v("gcn_layers", c.gcn_layers);
    v("critic_emb", c.critic_emb);
    v("critic_filters", c.critic_filters);
    v("vocab_max", c.vocab_max);
    v("batch", c.batch);
    v("hops_max", c.hops_max);
    v("per_hop", c.per_hop);
    v("max_len", c.max_len);
    v("essay_len_min", c.essay_len_min);
    v("essay_len_max", c.essay_len_max);
    v("length_check", c.length_check);
    v("lambda_gp", c.lambda_gp);
    v("beta", c.beta);
    v("lr_stage1", c.lr_stage1);
    v("lr_stage2", c.lr_stage2);
    v("lr_critic", c.lr_critic);
    v("n_critic", c.n_critic);
    v("epochs_stage1", c.epochs_stage1);
    v("epochs_stage2", c.epochs_stage2);
    v("clip_norm", c.clip_norm);
    v("checkpoint_every", c.checkpoint_every);
    v("seed", c.seed);
    v("corpus", c.corpus);
    v("vocab", c.vocab);
    v("graph_dir", c.graph_dir);
    v("triples", c.triples);
    v("pretrained_embeddings", c.pretrained_embeddings);
  }

  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json config_to_json(const TrainConfig& config);
// Unknown keys are rejected; missing keys keep their defaults.
TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path);

}  // namespace tegke
