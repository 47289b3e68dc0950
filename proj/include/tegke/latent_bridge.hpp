#pragma once

// Teacher and student latent networks, reparametrized sampling, and the KL
// loss that pulls the student towards the teacher.

#include <string>

#include "tegke/nn.hpp"

namespace tegke {

struct GaussianParams {
  ad::Var mu;       // 1 x d_z
  ad::Var log_var;  // 1 x d_z
};

struct LatentParams {
  GaussianParams z1;
  GaussianParams z2;
};

enum class LatentSource { teacher, student };
enum class LatentSlot { z1, z2 };

struct LatentSample {
  ad::Var z;
  LatentSource source = LatentSource::teacher;
  LatentSlot slot = LatentSlot::z1;
};

// One affine map to the mean and one to the log-variance.
struct GaussianHead {
  Affine mu;
  Affine log_var;

  static GaussianHead create(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index d_z,
                             ParamGroup group);
  GaussianParams operator()(ad::Tape& tape, ad::Var input) const;
};

// Two heads, one per latent slot.
class LatentNetwork {
 public:
  LatentNetwork() = default;
  static LatentNetwork create(ParameterStore& store, const std::string& name, Eigen::Index in,
                              Eigen::Index d_z, ParamGroup group);
  LatentParams operator()(ad::Tape& tape, ad::Var input) const;
  Eigen::Index input_dim() const { return z1_.mu.in_dim(); }
  Eigen::Index latent_dim() const { return z1_.mu.out_dim(); }
  const GaussianHead& head(LatentSlot slot) const { return slot == LatentSlot::z1 ? z1_ : z2_; }

 private:
  GaussianHead z1_;
  GaussianHead z2_;
};

// Conditioned on [x_enc ; y_enc]. Requires the essay summary.
LatentParams teacher_params(ad::Tape& tape, const LatentNetwork& teacher, ad::Var x_enc, ad::Var y_enc);
// Conditioned on x_enc alone.
LatentParams student_params(ad::Tape& tape, const LatentNetwork& student, ad::Var x_enc);

// z = mu + exp(0.5 log_var) * eps
LatentSample sample(const GaussianParams& params, ad::Var eps, LatentSource source, LatentSlot slot);

// KL(N(student) || N(teacher)) summed over dimensions, closed form for
// diagonal Gaussians. The teacher enters as a constant.
ad::Var gaussian_kl(ad::Tape& tape, const GaussianParams& student, const GaussianParams& teacher);
// Sum of the per-slot divergences.
ad::Var transfer_loss(ad::Tape& tape, const LatentParams& student, const LatentParams& teacher);

// Plain numeric form of the same divergence.
double gaussian_kl_value(const RowVector& mu_student, const RowVector& log_var_student,
                         const RowVector& mu_teacher, const RowVector& log_var_teacher);

}  // namespace tegke
