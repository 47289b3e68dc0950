#pragma once

// Wasserstein critic over (topics, essay rows) and the adversarial losses.
//
// Essay rows are one-hot for real essays and probability rows for generated
// ones. The gradient penalty needs the critic's gradient with respect to its
// input rows as a differentiable expression of the critic parameters, so
// every critic exposes input_gradient() alongside score().

#include <span>
#include <string>
#include <vector>

#include "tegke/data.hpp"
#include "tegke/nn.hpp"

namespace tegke {

class DifferentiableCritic {
 public:
  virtual ~DifferentiableCritic() = default;
  // 1 x 1 score for topics `topic_ids` and essay rows (n x |vocab|).
  virtual ad::Var score(ad::Tape& tape, std::span<const TokenId> topic_ids, ad::Var essay_rows) const = 0;
  // d score / d essay_rows (n x |vocab|), built from tape operations so that it
  // can itself be differentiated with respect to the critic parameters.
  virtual ad::Var input_gradient(ad::Tape& tape, std::span<const TokenId> topic_ids,
                                 ad::Var essay_rows) const = 0;
};

// Soft-embeds every row with a critic-owned matrix, prepends the topic rows,
// runs 1-D convolutions with ReLU and max-over-time pooling per width, and
// maps the pooled features to an unbounded scalar.
class CnnCritic : public DifferentiableCritic {
 public:
  static constexpr int kWidths[3] = {3, 4, 5};
  static constexpr int kMinRows = 5;

  CnnCritic() = default;
  static CnnCritic create(ParameterStore& store, const std::string& name, Eigen::Index vocab, Eigen::Index d_emb,
                          Eigen::Index filters);

  ad::Var score(ad::Tape& tape, std::span<const TokenId> topic_ids, ad::Var essay_rows) const override;
  ad::Var input_gradient(ad::Tape& tape, std::span<const TokenId> topic_ids, ad::Var essay_rows) const override;

  Parameter* embedding() const { return embed_; }
  Parameter* conv_weight(int k) const { return conv_w_[k]; }
  Parameter* conv_bias(int k) const { return conv_b_[k]; }
  Parameter* out_weight() const { return out_w_; }
  Parameter* out_bias() const { return out_b_; }
  Eigen::Index filters() const { return conv_b_[0]->value.cols(); }

 private:
  struct Forward {
    ad::Var padded;                 // T x d, topics then essay then zero rows
    std::vector<ad::Var> pre_act;   // per width: (T - w + 1) x filters
    ad::Var score;
  };
  Forward forward(ad::Tape& tape, std::span<const TokenId> topic_ids, ad::Var essay_rows) const;

  Parameter* embed_ = nullptr;             // |vocab| x d
  Parameter* conv_w_[3] = {};              // (w d) x filters
  Parameter* conv_b_[3] = {};              // 1 x filters
  Parameter* out_w_ = nullptr;             // 3 filters x 1
  Parameter* out_b_ = nullptr;             // 1 x 1
};

// D(x, v) = <W, v> + b with a fixed-shape W; gradient with respect to v is W.
class LinearProbeCritic : public DifferentiableCritic {
 public:
  LinearProbeCritic(Parameter* weight, Parameter* bias) : weight_(weight), bias_(bias) {}
  ad::Var score(ad::Tape& tape, std::span<const TokenId> topic_ids, ad::Var essay_rows) const override;
  ad::Var input_gradient(ad::Tape& tape, std::span<const TokenId> topic_ids, ad::Var essay_rows) const override;

 private:
  Parameter* weight_;
  Parameter* bias_;
};

// (|| grad_v D(x, v) at v = alpha y_real + (1 - alpha) y_gen ||_2 - 1)^2
ad::Var gradient_penalty(ad::Tape& tape, const DifferentiableCritic& critic, std::span<const TokenId> topic_ids,
                         const Matrix& y_real, const Matrix& y_gen, double alpha);

struct CriticLoss {
  ad::Var loss;  // D(gen) - D(real) + lambda * penalty
  ad::Var score_real;
  ad::Var score_gen;
  ad::Var penalty;
};

CriticLoss critic_loss(ad::Tape& tape, const DifferentiableCritic& critic, std::span<const TokenId> topic_ids,
                       const Matrix& y_real, const Matrix& y_gen, double alpha, double lambda);

// -score_gen - beta * log_likelihood
ad::Var generator_adv_loss(ad::Var score_gen, ad::Var log_likelihood, double beta);

// One-hot rows for a token sequence.
Matrix one_hot_rows(std::span<const TokenId> ids, Eigen::Index vocab);

}  // namespace tegke
