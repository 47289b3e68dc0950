#include "tegke/model.hpp"

#include <algorithm>
#include <random>
#include <set>

#include "tegke/errors.hpp"

namespace tegke {

RelationVocabulary::RelationVocabulary() : names_{kUnknown} {}

RelationVocabulary::RelationVocabulary(const std::vector<std::string>& names) : RelationVocabulary() {
  for (const auto& n : names) {
    if (n == kUnknown || std::find(names_.begin(), names_.end(), n) != names_.end())
      throw ValidationError("duplicate relation name '" + n + "'");
    names_.push_back(n);
  }
}

RelationVocabulary RelationVocabulary::from_graphs(std::span<const TopicGraph> graphs) {
  std::set<std::string> names;
  for (const auto& g : graphs) names.insert(g.relations.begin(), g.relations.end());
  return RelationVocabulary(std::vector<std::string>(names.begin(), names.end()));
}

int RelationVocabulary::id(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  return it == names_.end() ? 0 : static_cast<int>(it - names_.begin());
}

TegkeModel::TegkeModel(const TrainConfig& config, Vocabulary vocab, RelationVocabulary relations)
    : config_(config), vocab_(std::move(vocab)), relations_(std::move(relations)), store_(config.seed) {
  config_.validate();
  const Eigen::Index v = static_cast<Eigen::Index>(vocab_.size());
  words_ = &store_.create("embed.words", v, config_.d_emb, ParamGroup::main, Init::uniform_embedding);
  relation_vectors_ = &store_.create("embed.relations", static_cast<Eigen::Index>(relations_.size()), config_.d_g,
                                     ParamGroup::main, Init::uniform_embedding);
  topic_encoder_ = BiGruEncoder::create(store_, "topic_enc", config_.d_emb, config_.d_enc, ParamGroup::main);
  essay_encoder_ = BiGruEncoder::create(store_, "essay_enc", config_.d_emb, config_.d_enc, ParamGroup::main);
  teacher_ = LatentNetwork::create(store_, "teacher", 2 * config_.d_enc, config_.d_z, ParamGroup::main);
  student_ = LatentNetwork::create(store_, "student", config_.d_enc, config_.d_z, ParamGroup::student);
  graph_encoder_ = GraphEncoder::create(store_, "graph", config_.d_g, config_.gcn_layers, ParamGroup::main);
  decoder_ = EssayDecoder::create(store_, "decoder",
                                  {config_.d_emb, config_.d_z, config_.d_enc, config_.d_g, config_.d_dec, v},
                                  ParamGroup::main);
  critic_ = CnnCritic::create(store_, "critic", v, config_.critic_emb, config_.critic_filters);
}

EncoderOutput TegkeModel::encode_sequence(ad::Tape& tape, std::span<const TokenId> ids, std::size_t length,
                                          EncoderId which) const {
  const BiGruEncoder& enc = which == EncoderId::topic ? topic_encoder_ : essay_encoder_;
  return enc.encode_ids(tape, tape.param(*words_), ids, length);
}

ad::Var TegkeModel::encode_graph(ad::Tape& tape, const TopicGraph& graph) const {
  if (graph.nodes.empty()) throw ValidationError("topic graph has no nodes");
  std::vector<int> word_ids, rel_ids;
  for (const auto& n : graph.nodes) word_ids.push_back(vocab_.id(n.token));
  for (const auto& r : graph.relations) rel_ids.push_back(relations_.id(r));
  ad::Var h0 = ad::gather_rows(tape.param(*words_), word_ids);
  ad::Var r0 = ad::gather_rows(tape.param(*relation_vectors_), rel_ids);
  return graph_encoder_.encode(tape, graph, h0, r0);
}

TrainingForward TegkeModel::forward_teacher(ad::Tape& tape, std::span<const TokenId> topic_ids,
                                            std::span<const TokenId> essay_in, std::span<const TokenId> essay_out,
                                            const TopicGraph& graph, const RowVector& eps1,
                                            const RowVector& eps2) const {
  if (essay_in.size() < 2 || essay_in.size() != essay_out.size())
    throw ShapeError("essay input/output rows must be equally long and hold at least one token");
  TrainingForward f;
  f.topics = encode_sequence(tape, topic_ids, topic_ids.size(), EncoderId::topic);
  // The essay encoder reads the essay tokens without BOS.
  f.essay = encode_sequence(tape, essay_in.subspan(1), essay_in.size() - 1, EncoderId::essay);
  f.teacher = teacher_params(tape, teacher_, f.topics.pooled, f.essay.pooled);
  f.student = student_params(tape, student_, tape.constant(f.topics.pooled.value()));
  f.z1 = sample(f.teacher.z1, tape.constant(eps1), LatentSource::teacher, LatentSlot::z1);
  f.z2 = sample(f.teacher.z2, tape.constant(eps2), LatentSource::teacher, LatentSlot::z2);
  f.graph_nodes = encode_graph(tape, graph);
  DecoderInputs in{tape.param(*words_), f.topics.states, f.graph_nodes, f.topics.pooled, f.z1.z, f.z2.z};
  f.decoded = decoder_.teacher_forced(tape, in, essay_in, essay_out);
  f.l_rec = f.decoded.l_rec;
  f.l_trans = transfer_loss(tape, f.student, f.teacher);
  return f;
}

RowVector standard_normal(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  RowVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

DecoderTrace TegkeModel::generate(std::span<const TokenId> topic_ids, const TopicGraph& graph, DecodeMode mode,
                                  int max_len, std::uint64_t seed) const {
  if (topic_ids.empty()) throw ValidationError("generation needs at least one topic");
  ad::Tape tape;
  tape.set_no_grad(true);
  std::mt19937_64 rng(seed);
  EncoderOutput topics = encode_sequence(tape, topic_ids, topic_ids.size(), EncoderId::topic);
  LatentParams latent = student_params(tape, student_, topics.pooled);
  const RowVector eps1 = standard_normal(config_.d_z, rng);
  const RowVector eps2 = standard_normal(config_.d_z, rng);
  LatentSample z1 = sample(latent.z1, tape.constant(eps1), LatentSource::student, LatentSlot::z1);
  LatentSample z2 = sample(latent.z2, tape.constant(eps2), LatentSource::student, LatentSlot::z2);
  ad::Var nodes = encode_graph(tape, graph);
  DecoderInputs in{tape.param(*words_), topics.states, nodes, topics.pooled, z1.z, z2.z};
  return decoder_.generate(tape, in, mode, max_len, rng);
}

DecoderTrace TegkeModel::generate_with_teacher(std::span<const TokenId> topic_ids, std::span<const TokenId> essay,
                                               const TopicGraph& graph, DecodeMode mode, int max_len,
                                               std::uint64_t seed) const {
  ad::Tape tape;
  tape.set_no_grad(true);
  std::mt19937_64 rng(seed);
  EncoderOutput topics = encode_sequence(tape, topic_ids, topic_ids.size(), EncoderId::topic);
  EncoderOutput body = encode_sequence(tape, essay, essay.size(), EncoderId::essay);
  LatentParams latent = teacher_params(tape, teacher_, topics.pooled, body.pooled);
  const RowVector eps1 = standard_normal(config_.d_z, rng);
  const RowVector eps2 = standard_normal(config_.d_z, rng);
  LatentSample z1 = sample(latent.z1, tape.constant(eps1), LatentSource::teacher, LatentSlot::z1);
  LatentSample z2 = sample(latent.z2, tape.constant(eps2), LatentSource::teacher, LatentSlot::z2);
  ad::Var nodes = encode_graph(tape, graph);
  DecoderInputs in{tape.param(*words_), topics.states, nodes, topics.pooled, z1.z, z2.z};
  return decoder_.generate(tape, in, mode, max_len, rng);
}

nlohmann::json export_attention(const DecoderTrace& trace, const TopicGraph& graph, const Vocabulary& vocab,
                                std::span<const std::string> topics) {
  using nlohmann::json;
  json j;
  j["topics"] = std::vector<std::string>(topics.begin(), topics.end());
  j["tokens"] = decode_ids(trace.token_ids, vocab);
  j["topic_attention"] = json::array();
  for (const auto& row : trace.attention.topic_weights)
    j["topic_attention"].push_back(std::vector<double>(row.data(), row.data() + row.size()));
  j["graph_nodes"] = json::array();
  for (const auto& n : graph.nodes) j["graph_nodes"].push_back(n.token);
  j["graph_attention"] = json::array();
  for (const auto& row : trace.attention.graph_weights)
    j["graph_attention"].push_back(std::vector<double>(row.data(), row.data() + row.size()));
  return j;
}

std::vector<std::string> essay_tokens(const DecoderTrace& trace, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (TokenId id : trace.token_ids) {
    if (id == kEos) break;
    out.push_back(vocab.token(id));
  }
  return out;
}

}  // namespace tegke
