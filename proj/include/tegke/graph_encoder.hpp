#pragma once

// Compositional relational graph convolution over a TopicGraph followed by a
// gate that blends the last layer with the input word embeddings.

#include <string>
#include <vector>

#include "tegke/kgraph.hpp"
#include "tegke/nn.hpp"

namespace tegke {

struct GraphStates {
  ad::Var nodes;      // |V| x d_g
  ad::Var relations;  // |R| x d_g, graph-local relation order
};

struct GcnLayerParams {
  Parameter* w_in = nullptr;    // messages along original relations
  Parameter* w_out = nullptr;   // messages along reversed relations
  Parameter* w_loop = nullptr;  // node's own state
  Parameter* w_rel = nullptr;   // relation update
};

class GraphEncoder {
 public:
  GraphEncoder() = default;
  static GraphEncoder create(ParameterStore& store, const std::string& name, Eigen::Index d_g, int layers,
                             ParamGroup group);

  int layers() const { return static_cast<int>(layers_.size()); }
  const GcnLayerParams& layer_params(int l) const { return layers_.at(static_cast<std::size_t>(l)); }
  Parameter* gate_weight() const { return gate_; }

  // One round of message passing. Node v averages, over every edge (u, r, v)
  // ending at it, W_in (h_u + h_r) for original relations or
  // W_out (h_u - h_r) for reversed ones, then h'_v = ReLU(o_v + W_loop h_v).
  // Relations move to W_rel h_r.
  GraphStates layer(ad::Tape& tape, const GraphStates& states, const TopicGraph& graph, int l) const;

  // g = sigmoid([h_L ; h_0] W_gate);  h = g * h_L + (1 - g) * h_0
  ad::Var gate_combine(ad::Tape& tape, ad::Var h_last, ad::Var h_first) const;

  // All layers then the gate. `h0` holds the nodes' word vectors and `r0`
  // the vectors of graph.relations in order.
  ad::Var encode(ad::Tape& tape, const TopicGraph& graph, ad::Var h0, ad::Var r0) const;

 private:
  std::vector<GcnLayerParams> layers_;
  Parameter* gate_ = nullptr;  // 2 d_g x d_g, no bias
};

}  // namespace tegke
