#include "tegke/latent_bridge.hpp"

#include <cmath>

#include "tegke/errors.hpp"

namespace tegke {

GaussianHead GaussianHead::create(ParameterStore& store, const std::string& name, Eigen::Index in,
                                  Eigen::Index d_z, ParamGroup group) {
  return {Affine::create(store, name + ".mu", in, d_z, group),
          Affine::create(store, name + ".log_var", in, d_z, group)};
}

GaussianParams GaussianHead::operator()(ad::Tape& tape, ad::Var input) const {
  return {mu(tape, input), log_var(tape, input)};
}

LatentNetwork LatentNetwork::create(ParameterStore& store, const std::string& name, Eigen::Index in,
                                    Eigen::Index d_z, ParamGroup group) {
  LatentNetwork n;
  n.z1_ = GaussianHead::create(store, name + ".z1", in, d_z, group);
  n.z2_ = GaussianHead::create(store, name + ".z2", in, d_z, group);
  return n;
}

LatentParams LatentNetwork::operator()(ad::Tape& tape, ad::Var input) const {
  if (input.rows() != 1 || input.cols() != input_dim())
    throw ShapeError("latent network expects a 1 x " + std::to_string(input_dim()) + " input");
  return {z1_(tape, input), z2_(tape, input)};
}

LatentParams teacher_params(ad::Tape& tape, const LatentNetwork& teacher, ad::Var x_enc, ad::Var y_enc) {
  if (!y_enc.valid()) throw std::logic_error("the teacher network needs the essay summary y_enc");
  const ad::Var parts[2] = {x_enc, y_enc};
  return teacher(tape, ad::concat_cols(parts));
}

LatentParams student_params(ad::Tape& tape, const LatentNetwork& student, ad::Var x_enc) {
  return student(tape, x_enc);
}

LatentSample sample(const GaussianParams& params, ad::Var eps, LatentSource source, LatentSlot slot) {
  if (eps.rows() != params.mu.rows() || eps.cols() != params.mu.cols())
    throw ShapeError("noise vector does not match the latent size");
  ad::Var sigma = ad::exp(ad::scale(params.log_var, 0.5));
  return {ad::add(params.mu, ad::mul(sigma, eps)), source, slot};
}

ad::Var gaussian_kl(ad::Tape& tape, const GaussianParams& student, const GaussianParams& teacher) {
  if (student.mu.cols() != teacher.mu.cols()) throw ShapeError("student and teacher latent sizes differ");
  // 0.5 (lv_t - lv_s) + (exp(lv_s) + (mu_s - mu_t)^2) / (2 exp(lv_t)) - 0.5
  ad::Var mu_t = tape.constant(teacher.mu.value());
  ad::Var lv_t = tape.constant(teacher.log_var.value());
  ad::Var inv_var_t = tape.constant((-teacher.log_var.value().array()).exp().matrix());
  ad::Var log_ratio = ad::scale(ad::sub(lv_t, student.log_var), 0.5);
  ad::Var spread = ad::add(ad::exp(student.log_var), ad::square(ad::sub(student.mu, mu_t)));
  ad::Var per_dim = ad::add(log_ratio, ad::add_scalar(ad::scale(ad::mul(spread, inv_var_t), 0.5), -0.5));
  return ad::sum(per_dim);
}

ad::Var transfer_loss(ad::Tape& tape, const LatentParams& student, const LatentParams& teacher) {
  return ad::add(gaussian_kl(tape, student.z1, teacher.z1), gaussian_kl(tape, student.z2, teacher.z2));
}

double gaussian_kl_value(const RowVector& mu_s, const RowVector& lv_s, const RowVector& mu_t,
                         const RowVector& lv_t) {
  if (mu_s.size() != mu_t.size() || lv_s.size() != lv_t.size() || mu_s.size() != lv_s.size())
    throw ShapeError("KL operands differ in size");
  double total = 0.0;
  for (Eigen::Index i = 0; i < mu_s.size(); ++i) {
    const double diff = mu_s[i] - mu_t[i];
    total += 0.5 * (lv_t[i] - lv_s[i]) + (std::exp(lv_s[i]) + diff * diff) / (2.0 * std::exp(lv_t[i])) - 0.5;
  }
  return total;
}

}  // namespace tegke
