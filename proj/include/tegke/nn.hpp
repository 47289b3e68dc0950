#pragma once

// Parameter storage, initialisation, Adam, and the two building blocks shared
// by several modules: affine maps and gated recurrent cells.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tegke/autodiff.hpp"

namespace tegke {

enum class Init { zeros, xavier_uniform, uniform_embedding };

// Owns every learnable array by stable name. Pointers handed out by create()
// and get() stay valid for the store's lifetime.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 1) : seed_(seed) {}

  Parameter& create(const std::string& name, Eigen::Index rows, Eigen::Index cols, ParamGroup group,
                    Init init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  std::vector<Parameter*> group(ParamGroup g);
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  void zero_grad();

  std::size_t size() const { return params_.size(); }

 private:
  std::uint64_t seed_;
  std::map<std::string, std::unique_ptr<Parameter>> params_;
};

// Seeded stream derived from a base seed and a label; independent of how many
// other streams have been drawn.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);
std::uint64_t hash_name(const std::string& name);

struct AdamSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::string label, std::vector<Parameter*> params, AdamSettings settings);

  // Applies one update from the accumulated gradients. Parameters without
  // gradient storage are treated as having zero gradient.
  void step();
  const std::string& label() const { return label_; }
  const AdamSettings& settings() const { return settings_; }
  std::int64_t steps() const { return steps_; }

  // Moment estimates keyed by parameter name, for checkpointing.
  struct Moments {
    Matrix m;
    Matrix v;
  };
  const std::map<std::string, Moments>& state() const { return state_; }
  void restore(std::int64_t steps, std::map<std::string, Moments> state);

 private:
  std::string label_;
  std::vector<Parameter*> params_;
  AdamSettings settings_;
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> state_;
};

// Rescales the gradients of `params` so their joint L2 norm is at most
// `max_norm`; returns the norm before clipping.
double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm);
double grad_norm(const std::vector<Parameter*>& params);

// y = x W + b, with W stored (in x out).
struct Affine {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;  // may be null

  static Affine create(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
                       ParamGroup group, bool with_bias = true);
  ad::Var operator()(ad::Tape& tape, ad::Var x) const;
  Eigen::Index in_dim() const { return weight->value.rows(); }
  Eigen::Index out_dim() const { return weight->value.cols(); }
};

// Gated recurrent unit:
//   r = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
//   u = sigmoid(x W_iu + b_iu + h W_hu + b_hu)
//   n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
//   h' = (1 - u) * n + u * h
// Gate blocks are packed column-wise in the order [r | u | n].
struct GruCell {
  Parameter* w_input = nullptr;   // in x 3h
  Parameter* w_hidden = nullptr;  // h x 3h
  Parameter* b_input = nullptr;   // 1 x 3h
  Parameter* b_hidden = nullptr;  // 1 x 3h

  static GruCell create(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index hidden,
                        ParamGroup group);
  Eigen::Index hidden_dim() const { return w_hidden->value.rows(); }
  Eigen::Index input_dim() const { return w_input->value.rows(); }

  // Input projection for every row of `xs` at once (rows x 3h).
  ad::Var project_inputs(ad::Tape& tape, ad::Var xs) const;
  // One step given a precomputed projected input row (1 x 3h).
  ad::Var step_projected(ad::Tape& tape, ad::Var projected_x, ad::Var h) const;
  ad::Var step(ad::Tape& tape, ad::Var x, ad::Var h) const;
};

}  // namespace tegke
