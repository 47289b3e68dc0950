#pragma once

#include <span>
#include <string>

#include "tegke/data.hpp"
#include "tegke/nn.hpp"

namespace tegke {

struct EncoderOutput {
  ad::Var states;  // T x d_enc, row i = [forward_i ; backward_i]
  ad::Var pooled;  // 1 x d_enc, mean of the rows of `states`
};

enum class EncoderId { topic, essay };

// Bidirectional GRU; each direction carries d_enc / 2 units and starts from a
// zero state.
class BiGruEncoder {
 public:
  BiGruEncoder() = default;
  static BiGruEncoder create(ParameterStore& store, const std::string& name, Eigen::Index d_in,
                             Eigen::Index d_enc, ParamGroup group);

  EncoderOutput encode(ad::Tape& tape, ad::Var inputs) const;
  // Embeds the first `length` ids of a possibly padded row and encodes them.
  EncoderOutput encode_ids(ad::Tape& tape, ad::Var word_table, std::span<const TokenId> ids,
                           std::size_t length) const;

  Eigen::Index output_dim() const { return 2 * forward_.hidden_dim(); }
  const GruCell& forward_cell() const { return forward_; }
  const GruCell& backward_cell() const { return backward_; }

 private:
  GruCell forward_;
  GruCell backward_;
};

}  // namespace tegke
