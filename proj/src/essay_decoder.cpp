#include "tegke/essay_decoder.hpp"

#include "tegke/errors.hpp"

namespace tegke {

DecodeMode parse_decode_mode(const std::string& text) {
  if (text == "greedy") return DecodeMode::greedy;
  if (text == "sample") return DecodeMode::sample;
  throw ValidationError("decode mode must be 'greedy' or 'sample', got '" + text + "'");
}

EssayDecoder EssayDecoder::create(ParameterStore& store, const std::string& name, const Dims& dims,
                                  ParamGroup group) {
  if (dims.d_enc + dims.d_z != dims.d_dec) throw ShapeError("decoder size must equal d_enc + d_z");
  EssayDecoder d;
  d.dims_ = dims;
  d.cell_ = GruCell::create(store, name + ".gru", dims.d_emb + dims.d_z + dims.d_enc + dims.d_g, dims.d_dec, group);
  d.att_topic_ = Affine::create(store, name + ".att_topic", dims.d_dec, dims.d_enc, group);
  d.att_graph_ = Affine::create(store, name + ".att_graph", dims.d_dec, dims.d_g, group);
  d.out_ = Affine::create(store, name + ".out", dims.d_dec, dims.vocab, group);
  return d;
}

DecoderState EssayDecoder::init_state(ad::Var x_enc, ad::Var z1) const {
  if (x_enc.rows() != 1 || z1.rows() != 1 || x_enc.cols() + z1.cols() != dims_.d_dec)
    throw ShapeError("initial state needs |x_enc| + |z1| = " + std::to_string(dims_.d_dec));
  const ad::Var parts[2] = {x_enc, z1};
  return {ad::concat_cols(parts)};
}

Attention EssayDecoder::attend(ad::Tape& tape, const DecoderState& prev, ad::Var keys,
                               AttentionTarget which) const {
  if (keys.rows() == 0) throw ShapeError("attention needs at least one key");
  const Affine& proj = which == AttentionTarget::topic ? att_topic_ : att_graph_;
  if (keys.cols() != proj.out_dim()) throw ShapeError("attention keys have the wrong width");
  ad::Var query = ad::tanh(proj(tape, prev.s));
  ad::Var scores = ad::transpose(ad::matmul(keys, ad::transpose(query)));
  ad::Var weights = ad::softmax_rows(scores);
  return {weights, ad::matmul(weights, keys)};
}

DecodeStep EssayDecoder::decode_step(ad::Tape& tape, const DecoderState& prev, ad::Var prev_embedding,
                                     ad::Var z2, ad::Var c_x, ad::Var c_g) const {
  const ad::Var parts[4] = {prev_embedding, z2, c_x, c_g};
  ad::Var input = ad::concat_cols(parts);
  if (input.cols() != cell_.input_dim()) throw ShapeError("decoder step input has the wrong width");
  DecodeStep step;
  step.state = {cell_.step(tape, input, prev.s)};
  step.logits = out_(tape, step.state.s);
  step.prob_row = ad::softmax_rows(step.logits);
  return step;
}

TeacherForcedOutput EssayDecoder::teacher_forced(ad::Tape& tape, const DecoderInputs& in,
                                                 std::span<const TokenId> inputs,
                                                 std::span<const TokenId> targets) const {
  if (inputs.size() != targets.size() || inputs.empty())
    throw ShapeError("teacher forcing needs equally long, non-empty input and target rows");
  ad::Var embedded = ad::gather_rows(in.word_table, inputs);
  DecoderState state = init_state(in.x_enc, in.z1);

  TeacherForcedOutput out;
  std::vector<ad::Var> states;
  states.reserve(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Attention ax = attend(tape, state, in.topic_states, AttentionTarget::topic);
    Attention ag = attend(tape, state, in.graph_nodes, AttentionTarget::graph);
    const ad::Var parts[4] = {ad::slice_rows(embedded, static_cast<Eigen::Index>(t), 1), in.z2, ax.context,
                              ag.context};
    state = {cell_.step(tape, ad::concat_cols(parts), state.s)};
    states.push_back(state.s);
    out.trace.attention.topic_weights.push_back(ax.weights.value().row(0));
    out.trace.attention.graph_weights.push_back(ag.weights.value().row(0));
    out.trace.states.push_back(state.s.value().row(0));
  }
  ad::Var logits = out_(tape, ad::concat_rows(states));
  out.prob_rows = ad::softmax_rows(logits);
  ad::Var log_probs = ad::log_softmax_rows(logits);
  out.l_rec = ad::neg(ad::sum(ad::pick_per_row(log_probs, targets)));
  out.trace.prob_rows = out.prob_rows.value();
  out.trace.token_ids.assign(targets.begin(), targets.end());
  return out;
}

TokenId greedy_pick(const RowVector& probs) {
  TokenId best = -1;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (i == kPad || i == kBos) continue;
    if (best < 0 || probs[i] > probs[best]) best = static_cast<TokenId>(i);
  }
  if (best < 0) throw ShapeError("vocabulary has no emittable token");
  return best;
}

TokenId sample_pick(const RowVector& probs, std::mt19937_64& rng) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i)
    if (i != kPad && i != kBos) total += probs[i];
  if (!(total > 0.0)) return greedy_pick(probs);
  // 53 random bits mapped to [0, total)
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
  double acc = 0.0;
  TokenId last = -1;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (i == kPad || i == kBos || probs[i] <= 0.0) continue;
    acc += probs[i];
    last = static_cast<TokenId>(i);
    if (u < acc) return last;
  }
  return last;
}

DecoderTrace EssayDecoder::generate(ad::Tape& tape, const DecoderInputs& in, DecodeMode mode, int max_len,
                                    std::mt19937_64& rng) const {
  if (max_len < 1) throw ValidationError("max_len must be at least 1");
  DecoderTrace trace;
  trace.prob_rows.resize(0, dims_.vocab);
  std::vector<RowVector> rows;
  DecoderState state = init_state(in.x_enc, in.z1);
  TokenId prev = kBos;
  for (int t = 0; t < max_len; ++t) {
    Attention ax = attend(tape, state, in.topic_states, AttentionTarget::topic);
    Attention ag = attend(tape, state, in.graph_nodes, AttentionTarget::graph);
    const int ids[1] = {prev};
    DecodeStep step = decode_step(tape, state, ad::gather_rows(in.word_table, ids), in.z2, ax.context, ag.context);
    state = step.state;
    const RowVector probs = step.prob_row.value().row(0);
    const TokenId next = mode == DecodeMode::greedy ? greedy_pick(probs) : sample_pick(probs, rng);
    rows.push_back(probs);
    trace.token_ids.push_back(next);
    trace.states.push_back(state.s.value().row(0));
    trace.attention.topic_weights.push_back(ax.weights.value().row(0));
    trace.attention.graph_weights.push_back(ag.weights.value().row(0));
    if (next == kEos) break;
    prev = next;
  }
  trace.prob_rows.resize(static_cast<Eigen::Index>(rows.size()), dims_.vocab);
  for (std::size_t i = 0; i < rows.size(); ++i) trace.prob_rows.row(static_cast<Eigen::Index>(i)) = rows[i];
  return trace;
}

}  // namespace tegke
