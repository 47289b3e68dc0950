#include "tegke/seq_encoders.hpp"

#include <vector>

#include "tegke/errors.hpp"

namespace tegke {

BiGruEncoder BiGruEncoder::create(ParameterStore& store, const std::string& name, Eigen::Index d_in,
                                  Eigen::Index d_enc, ParamGroup group) {
  if (d_enc % 2 != 0) throw ShapeError("bidirectional encoder size must be even");
  BiGruEncoder e;
  e.forward_ = GruCell::create(store, name + ".fwd", d_in, d_enc / 2, group);
  e.backward_ = GruCell::create(store, name + ".bwd", d_in, d_enc / 2, group);
  return e;
}

EncoderOutput BiGruEncoder::encode(ad::Tape& tape, ad::Var inputs) const {
  const Eigen::Index steps = inputs.rows();
  if (steps == 0) throw ShapeError("cannot encode an empty sequence");
  const Eigen::Index h = forward_.hidden_dim();

  ad::Var fwd_in = forward_.project_inputs(tape, inputs);
  ad::Var bwd_in = backward_.project_inputs(tape, inputs);

  std::vector<ad::Var> fwd(static_cast<std::size_t>(steps)), bwd(static_cast<std::size_t>(steps));
  ad::Var state = tape.constant(Matrix::Zero(1, h));
  for (Eigen::Index t = 0; t < steps; ++t) {
    state = forward_.step_projected(tape, ad::slice_rows(fwd_in, t, 1), state);
    fwd[static_cast<std::size_t>(t)] = state;
  }
  state = tape.constant(Matrix::Zero(1, h));
  for (Eigen::Index t = steps; t-- > 0;) {
    state = backward_.step_projected(tape, ad::slice_rows(bwd_in, t, 1), state);
    bwd[static_cast<std::size_t>(t)] = state;
  }
  const ad::Var halves[2] = {ad::concat_rows(fwd), ad::concat_rows(bwd)};
  EncoderOutput out;
  out.states = ad::concat_cols(halves);
  out.pooled = ad::mean_rows(out.states);
  return out;
}

EncoderOutput BiGruEncoder::encode_ids(ad::Tape& tape, ad::Var word_table, std::span<const TokenId> ids,
                                       std::size_t length) const {
  if (length == 0 || length > ids.size())
    throw ShapeError("sequence length " + std::to_string(length) + " does not fit " +
                     std::to_string(ids.size()) + " ids");
  return encode(tape, ad::gather_rows(word_table, ids.first(length)));
}

}  // namespace tegke
