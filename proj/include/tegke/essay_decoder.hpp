#pragma once

// GRU essay decoder with attention over topic states and graph nodes.

#include <random>
#include <span>
#include <string>
#include <vector>

#include "tegke/data.hpp"
#include "tegke/nn.hpp"

namespace tegke {

struct DecoderState {
  ad::Var s;  // 1 x d_dec
};

struct AttentionRecord {
  std::vector<RowVector> topic_weights;  // one row per step, length m
  std::vector<RowVector> graph_weights;  // one row per step, length |V|
};

struct DecoderTrace {
  Matrix prob_rows;  // steps x |vocab|
  std::vector<TokenId> token_ids;
  std::vector<RowVector> states;
  AttentionRecord attention;
};

enum class AttentionTarget { topic, graph };

struct Attention {
  ad::Var weights;  // 1 x keys
  ad::Var context;  // 1 x d_key
};

struct DecodeStep {
  DecoderState state;
  ad::Var logits;    // 1 x |vocab|
  ad::Var prob_row;  // softmax(logits)
};

struct TeacherForcedOutput {
  ad::Var prob_rows;  // steps x |vocab|, the soft essay fed to the critic
  ad::Var l_rec;      // summed token negative log-likelihood
  DecoderTrace trace;
};

enum class DecodeMode { greedy, sample };

DecodeMode parse_decode_mode(const std::string& text);

// Context the decoder conditions on for one sample.
struct DecoderInputs {
  ad::Var word_table;    // |vocab| x d_emb
  ad::Var topic_states;  // m x d_enc
  ad::Var graph_nodes;   // |V| x d_g
  ad::Var x_enc;         // 1 x d_enc
  ad::Var z1;            // 1 x d_z
  ad::Var z2;            // 1 x d_z
};

class EssayDecoder {
 public:
  struct Dims {
    Eigen::Index d_emb, d_z, d_enc, d_g, d_dec, vocab;
  };

  EssayDecoder() = default;
  static EssayDecoder create(ParameterStore& store, const std::string& name, const Dims& dims, ParamGroup group);

  const Dims& dims() const { return dims_; }
  const Affine& topic_attention() const { return att_topic_; }
  const Affine& graph_attention() const { return att_graph_; }
  const Affine& output() const { return out_; }
  const GruCell& cell() const { return cell_; }

  // s0 = [x_enc ; z1]
  DecoderState init_state(ad::Var x_enc, ad::Var z1) const;

  // e_i = tanh(s_prev W + b) . k_i, weights = softmax(e), context = sum_i weights_i k_i
  Attention attend(ad::Tape& tape, const DecoderState& prev, ad::Var keys, AttentionTarget which) const;

  // s_t = GRU(s_{t-1}, [e(y_{t-1}) ; z2 ; c_x ; c_g]),  p = softmax(s_t W_o + b_o)
  DecodeStep decode_step(ad::Tape& tape, const DecoderState& prev, ad::Var prev_embedding, ad::Var z2,
                         ad::Var c_x, ad::Var c_g) const;

  // Ground-truth inputs (BOS + essay) predicting targets (essay + EOS).
  TeacherForcedOutput teacher_forced(ad::Tape& tape, const DecoderInputs& in, std::span<const TokenId> inputs,
                                     std::span<const TokenId> targets) const;

  // Starts from BOS and feeds back its own choices until EOS or max_len
  // steps. PAD and BOS are never emitted.
  DecoderTrace generate(ad::Tape& tape, const DecoderInputs& in, DecodeMode mode, int max_len,
                        std::mt19937_64& rng) const;

 private:
  Dims dims_{};
  GruCell cell_;
  Affine att_topic_;
  Affine att_graph_;
  Affine out_;
};

// Lowest id among the maxima, skipping PAD and BOS.
TokenId greedy_pick(const RowVector& probs);
TokenId sample_pick(const RowVector& probs, std::mt19937_64& rng);

}  // namespace tegke
