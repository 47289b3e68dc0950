#include "tegke/graph_encoder.hpp"

#include "tegke/errors.hpp"

namespace tegke {

GraphEncoder GraphEncoder::create(ParameterStore& store, const std::string& name, Eigen::Index d_g,
                                  int layers, ParamGroup group) {
  GraphEncoder g;
  for (int l = 0; l < layers; ++l) {
    const std::string prefix = name + ".layer" + std::to_string(l);
    GcnLayerParams p;
    p.w_in = &store.create(prefix + ".w_in", d_g, d_g, group, Init::xavier_uniform);
    p.w_out = &store.create(prefix + ".w_out", d_g, d_g, group, Init::xavier_uniform);
    p.w_loop = &store.create(prefix + ".w_loop", d_g, d_g, group, Init::xavier_uniform);
    p.w_rel = &store.create(prefix + ".w_rel", d_g, d_g, group, Init::xavier_uniform);
    g.layers_.push_back(p);
  }
  g.gate_ = &store.create(name + ".gate.w", 2 * d_g, d_g, group, Init::xavier_uniform);
  return g;
}

GraphStates GraphEncoder::layer(ad::Tape& tape, const GraphStates& states, const TopicGraph& graph,
                                int l) const {
  if (l < 0 || l >= layers()) throw std::out_of_range("graph layer index out of range");
  graph.check();
  const GcnLayerParams& p = layers_[static_cast<std::size_t>(l)];
  const Eigen::Index n = static_cast<Eigen::Index>(graph.nodes.size());
  if (states.nodes.rows() != n) throw ShapeError("node state rows do not match the graph");
  if (states.relations.rows() != static_cast<Eigen::Index>(graph.relations.size()))
    throw ShapeError("relation state rows do not match the graph");

  std::vector<int> heads[2], rels[2], tails[2];
  for (const GraphEdge& e : graph.edges) {
    const int k = graph.is_reversed(e.relation) ? 1 : 0;
    heads[k].push_back(e.head);
    rels[k].push_back(e.relation);
    tails[k].push_back(e.tail);
  }

  std::vector<ad::Var> messages;
  std::vector<int> targets;
  for (int k = 0; k < 2; ++k) {
    if (heads[k].empty()) continue;
    ad::Var hu = ad::gather_rows(states.nodes, heads[k]);
    ad::Var hr = ad::gather_rows(states.relations, rels[k]);
    ad::Var composed = k == 0 ? ad::add(hu, hr) : ad::sub(hu, hr);
    messages.push_back(ad::matmul(composed, tape.param(k == 0 ? *p.w_in : *p.w_out)));
    targets.insert(targets.end(), tails[k].begin(), tails[k].end());
  }

  ad::Var self = ad::matmul(states.nodes, tape.param(*p.w_loop));
  ad::Var pre = self;
  if (!messages.empty()) pre = ad::add(ad::scatter_mean_rows(ad::concat_rows(messages), targets, n), self);

  GraphStates next;
  next.nodes = ad::relu(pre);
  next.relations = ad::matmul(states.relations, tape.param(*p.w_rel));
  return next;
}

ad::Var GraphEncoder::gate_combine(ad::Tape& tape, ad::Var h_last, ad::Var h_first) const {
  if (h_last.rows() != h_first.rows() || h_last.cols() != h_first.cols())
    throw ShapeError("gate inputs differ in shape");
  const ad::Var both[2] = {h_last, h_first};
  ad::Var gate = ad::sigmoid(ad::matmul(ad::concat_cols(both), tape.param(*gate_)));
  return ad::add(h_first, ad::mul(gate, ad::sub(h_last, h_first)));
}

ad::Var GraphEncoder::encode(ad::Tape& tape, const TopicGraph& graph, ad::Var h0, ad::Var r0) const {
  GraphStates states{h0, r0};
  for (int l = 0; l < layers(); ++l) states = layer(tape, states, graph, l);
  return gate_combine(tape, states.nodes, h0);
}

}  // namespace tegke
