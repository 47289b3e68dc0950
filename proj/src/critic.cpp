#include "tegke/critic.hpp"

#include "tegke/errors.hpp"

namespace tegke {

CnnCritic CnnCritic::create(ParameterStore& store, const std::string& name, Eigen::Index vocab,
                            Eigen::Index d_emb, Eigen::Index filters) {
  CnnCritic c;
  c.embed_ = &store.create(name + ".embed", vocab, d_emb, ParamGroup::critic, Init::uniform_embedding);
  for (int k = 0; k < 3; ++k) {
    const std::string conv = name + ".conv" + std::to_string(kWidths[k]);
    c.conv_w_[k] = &store.create(conv + ".w", kWidths[k] * d_emb, filters, ParamGroup::critic, Init::xavier_uniform);
    c.conv_b_[k] = &store.create(conv + ".b", 1, filters, ParamGroup::critic, Init::zeros);
  }
  c.out_w_ = &store.create(name + ".out.w", 3 * filters, 1, ParamGroup::critic, Init::xavier_uniform);
  c.out_b_ = &store.create(name + ".out.b", 1, 1, ParamGroup::critic, Init::zeros);
  return c;
}

CnnCritic::Forward CnnCritic::forward(ad::Tape& tape, std::span<const TokenId> topic_ids,
                                      ad::Var essay_rows) const {
  ad::Var table = tape.param(*embed_);
  if (essay_rows.cols() != table.rows())
    throw ShapeError("critic rows have " + std::to_string(essay_rows.cols()) + " columns, vocabulary is " +
                     std::to_string(table.rows()));
  std::vector<ad::Var> parts;
  if (!topic_ids.empty()) parts.push_back(ad::gather_rows(table, topic_ids));
  if (essay_rows.rows() > 0) parts.push_back(ad::matmul(essay_rows, table));
  if (parts.empty()) throw ShapeError("critic input is empty");

  Forward f;
  f.padded = ad::pad_rows(ad::concat_rows(parts), kMinRows);
  std::vector<ad::Var> pooled;
  for (int k = 0; k < 3; ++k) {
    ad::Var windows = ad::unfold_rows(f.padded, kWidths[k]);
    ad::Var pre = ad::add_bias(ad::matmul(windows, tape.param(*conv_w_[k])), tape.param(*conv_b_[k]));
    f.pre_act.push_back(pre);
    pooled.push_back(ad::max_rows(ad::relu(pre)));
  }
  f.score = ad::add(ad::matmul(ad::concat_cols(pooled), tape.param(*out_w_)), tape.param(*out_b_));
  return f;
}

ad::Var CnnCritic::score(ad::Tape& tape, std::span<const TokenId> topic_ids, ad::Var essay_rows) const {
  return forward(tape, topic_ids, essay_rows).score;
}

ad::Var CnnCritic::input_gradient(ad::Tape& tape, std::span<const TokenId> topic_ids, ad::Var essay_rows) const {
  Forward f = forward(tape, topic_ids, essay_rows);
  const Eigen::Index rows = f.padded.rows();
  const Eigen::Index nf = filters();
  ad::Var out_w = tape.param(*out_w_);
  ad::Var d_embedded;
  for (int k = 0; k < 3; ++k) {
    // The pooled feature of filter j is ReLU(pre(t*, j)) at its first maximal
    // row t*; it passes gradient only when that pre-activation is positive.
    const Matrix& pre = f.pre_act[static_cast<std::size_t>(k)].value();
    Matrix route = Matrix::Zero(pre.rows(), nf);
    for (Eigen::Index j = 0; j < nf; ++j) {
      Eigen::Index best = 0;
      for (Eigen::Index t = 1; t < pre.rows(); ++t)
        if (std::max(pre(t, j), 0.0) > std::max(pre(best, j), 0.0)) best = t;
      if (pre(best, j) > 0.0) route(best, j) = 1.0;
    }
    ad::Var head = ad::transpose(ad::slice_rows(out_w, k * nf, nf));
    ad::Var d_pre = ad::mul_rows(tape.constant(std::move(route)), head);
    ad::Var d_windows = ad::matmul(d_pre, ad::transpose(tape.param(*conv_w_[k])));
    ad::Var d_rows = ad::fold_rows(d_windows, kWidths[k], rows);
    d_embedded = d_embedded.valid() ? ad::add(d_embedded, d_rows) : d_rows;
  }
  const Eigen::Index m = static_cast<Eigen::Index>(topic_ids.size());
  ad::Var d_essay = ad::slice_rows(d_embedded, m, essay_rows.rows());
  return ad::matmul(d_essay, ad::transpose(tape.param(*embed_)));
}

ad::Var LinearProbeCritic::score(ad::Tape& tape, std::span<const TokenId>, ad::Var essay_rows) const {
  ad::Var w = tape.param(*weight_);
  if (w.rows() != essay_rows.rows() || w.cols() != essay_rows.cols())
    throw ShapeError("linear probe weight does not match the essay rows");
  return ad::add(ad::sum(ad::mul(w, essay_rows)), tape.param(*bias_));
}

ad::Var LinearProbeCritic::input_gradient(ad::Tape& tape, std::span<const TokenId>, ad::Var essay_rows) const {
  ad::Var w = tape.param(*weight_);
  if (w.rows() != essay_rows.rows() || w.cols() != essay_rows.cols())
    throw ShapeError("linear probe weight does not match the essay rows");
  return w;
}

ad::Var gradient_penalty(ad::Tape& tape, const DifferentiableCritic& critic, std::span<const TokenId> topic_ids,
                         const Matrix& y_real, const Matrix& y_gen, double alpha) {
  if (y_real.rows() != y_gen.rows() || y_real.cols() != y_gen.cols())
    throw ShapeError("real and generated essays differ in shape");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("interpolation weight must lie in [0, 1]");
  ad::Var mixed = tape.constant(alpha * y_real + (1.0 - alpha) * y_gen);
  ad::Var grad = critic.input_gradient(tape, topic_ids, mixed);
  ad::Var norm = ad::sqrt(ad::sum(ad::square(grad)));
  return ad::square(ad::add_scalar(norm, -1.0));
}

CriticLoss critic_loss(ad::Tape& tape, const DifferentiableCritic& critic, std::span<const TokenId> topic_ids,
                       const Matrix& y_real, const Matrix& y_gen, double alpha, double lambda) {
  CriticLoss out;
  out.score_real = critic.score(tape, topic_ids, tape.constant(y_real));
  out.score_gen = critic.score(tape, topic_ids, tape.constant(y_gen));
  out.penalty = gradient_penalty(tape, critic, topic_ids, y_real, y_gen, alpha);
  out.loss = ad::add(ad::sub(out.score_gen, out.score_real), ad::scale(out.penalty, lambda));
  return out;
}

ad::Var generator_adv_loss(ad::Var score_gen, ad::Var log_likelihood, double beta) {
  return ad::sub(ad::neg(score_gen), ad::scale(log_likelihood, beta));
}

Matrix one_hot_rows(std::span<const TokenId> ids, Eigen::Index vocab) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(ids.size()), vocab);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) throw ShapeError("token id outside the vocabulary");
    out(static_cast<Eigen::Index>(i), ids[i]) = 1.0;
  }
  return out;
}

}  // namespace tegke
