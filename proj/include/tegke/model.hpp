#pragma once

// The full generator (encoders, latent networks, graph encoder, decoder)
// plus the critic, sharing one parameter store.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tegke/config.hpp"
#include "tegke/critic.hpp"
#include "tegke/data.hpp"
#include "tegke/essay_decoder.hpp"
#include "tegke/graph_encoder.hpp"
#include "tegke/kgraph.hpp"
#include "tegke/latent_bridge.hpp"
#include "tegke/seq_encoders.hpp"

namespace tegke {

// Relation names known to the relation embedding table. Id 0 stands for
// relations never seen during training.
class RelationVocabulary {
 public:
  static constexpr const char* kUnknown = "<unk_rel>";

  RelationVocabulary();
  explicit RelationVocabulary(const std::vector<std::string>& names);
  static RelationVocabulary from_graphs(std::span<const TopicGraph> graphs);

  std::size_t size() const { return names_.size(); }
  int id(const std::string& name) const;
  // Names without the reserved unknown entry.
  std::vector<std::string> known() const { return {names_.begin() + 1, names_.end()}; }

 private:
  std::vector<std::string> names_;
};

struct TrainingForward {
  EncoderOutput topics;
  EncoderOutput essay;
  LatentParams teacher;
  LatentParams student;
  LatentSample z1;
  LatentSample z2;
  ad::Var graph_nodes;
  TeacherForcedOutput decoded;
  ad::Var l_rec;
  ad::Var l_trans;
};

class TegkeModel {
 public:
  TegkeModel(const TrainConfig& config, Vocabulary vocab, RelationVocabulary relations);

  const TrainConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const RelationVocabulary& relations() const { return relations_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  EmbeddingTable embeddings() const { return {words_, relation_vectors_}; }
  const BiGruEncoder& topic_encoder() const { return topic_encoder_; }
  const BiGruEncoder& essay_encoder() const { return essay_encoder_; }
  const LatentNetwork& teacher() const { return teacher_; }
  const LatentNetwork& student() const { return student_; }
  const GraphEncoder& graph_encoder() const { return graph_encoder_; }
  const EssayDecoder& decoder() const { return decoder_; }
  const CnnCritic& critic() const { return critic_; }

  EncoderOutput encode_sequence(ad::Tape& tape, std::span<const TokenId> ids, std::size_t length,
                                EncoderId which) const;
  // Node word vectors and relation vectors through the graph encoder.
  ad::Var encode_graph(ad::Tape& tape, const TopicGraph& graph) const;

  // Teacher-latent pass used by both training stages. The student sees a
  // detached x_enc so L_trans reaches only student parameters.
  TrainingForward forward_teacher(ad::Tape& tape, std::span<const TokenId> topic_ids,
                                  std::span<const TokenId> essay_in, std::span<const TokenId> essay_out,
                                  const TopicGraph& graph, const RowVector& eps1, const RowVector& eps2) const;

  // Student latents drawn from `seed`, then free-running decoding.
  DecoderTrace generate(std::span<const TokenId> topic_ids, const TopicGraph& graph, DecodeMode mode, int max_len,
                        std::uint64_t seed) const;
  // Same, decoding with teacher latents (needs the essay), used for diagnostics.
  DecoderTrace generate_with_teacher(std::span<const TokenId> topic_ids, std::span<const TokenId> essay,
                                     const TopicGraph& graph, DecodeMode mode, int max_len,
                                     std::uint64_t seed) const;

 private:
  TrainConfig config_;
  Vocabulary vocab_;
  RelationVocabulary relations_;
  ParameterStore store_;
  Parameter* words_ = nullptr;
  Parameter* relation_vectors_ = nullptr;
  BiGruEncoder topic_encoder_;
  BiGruEncoder essay_encoder_;
  LatentNetwork teacher_;
  LatentNetwork student_;
  GraphEncoder graph_encoder_;
  EssayDecoder decoder_;
  CnnCritic critic_;
};

RowVector standard_normal(Eigen::Index n, std::mt19937_64& rng);

// {"topics", "tokens", "topic_attention", "graph_nodes", "graph_attention"}
nlohmann::json export_attention(const DecoderTrace& trace, const TopicGraph& graph, const Vocabulary& vocab,
                                std::span<const std::string> topics);

// Generated tokens up to (excluding) EOS.
std::vector<std::string> essay_tokens(const DecoderTrace& trace, const Vocabulary& vocab);

}  // namespace tegke
