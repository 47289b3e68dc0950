#include "tegke/nn.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "tegke/errors.hpp"

namespace tegke {

std::uint64_t hash_name(const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = splitmix(base);
  h = splitmix(h ^ a);
  h = splitmix(h ^ b);
  return splitmix(h ^ c);
}

Parameter& ParameterStore::create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                                  ParamGroup group, Init init) {
  if (params_.count(name)) throw std::logic_error("parameter '" + name + "' created twice");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->group = group;
  p->value.setZero(rows, cols);
  std::mt19937_64 rng(derive_seed(seed_, hash_name(name)));
  switch (init) {
    case Init::zeros:
      break;
    case Init::xavier_uniform: {
      const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = dist(rng);
      break;
    }
    case Init::uniform_embedding: {
      std::uniform_real_distribution<double> dist(-0.1, 0.1);
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = dist(rng);
      break;
    }
  }
  p->zero_grad();
  Parameter& ref = *p;
  params_.emplace(name, std::move(p));
  return ref;
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return *it->second;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return *it->second;
}

std::vector<Parameter*> ParameterStore::group(ParamGroup g) {
  std::vector<Parameter*> out;
  for (auto& [name, p] : params_)
    if (p->group == g) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& [name, p] : params_) out.push_back(p.get());
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& [name, p] : params_) p->zero_grad();
}

Adam::Adam(std::string label, std::vector<Parameter*> params, AdamSettings settings)
    : label_(std::move(label)), params_(std::move(params)), settings_(settings) {
  for (Parameter* p : params_)
    state_[p->name] = {Matrix::Zero(p->value.rows(), p->value.cols()),
                       Matrix::Zero(p->value.rows(), p->value.cols())};
}

void Adam::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(settings_.beta1, t);
  const double c2 = 1.0 - std::pow(settings_.beta2, t);
  for (Parameter* p : params_) {
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) p->zero_grad();
    Moments& s = state_.at(p->name);
    s.m = settings_.beta1 * s.m + (1.0 - settings_.beta1) * p->grad;
    s.v = settings_.beta2 * s.v + (1.0 - settings_.beta2) * p->grad.cwiseProduct(p->grad);
    p->value.array() -=
        settings_.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + settings_.eps);
  }
}

void Adam::restore(std::int64_t steps, std::map<std::string, Moments> state) {
  for (Parameter* p : params_) {
    auto it = state.find(p->name);
    if (it == state.end()) throw ValidationError("optimizer state lacks parameter '" + p->name + "'");
    if (it->second.m.rows() != p->value.rows() || it->second.m.cols() != p->value.cols() ||
        it->second.v.rows() != p->value.rows() || it->second.v.cols() != p->value.cols())
      throw ValidationError("optimizer state for '" + p->name + "' has the wrong shape");
  }
  steps_ = steps;
  for (Parameter* p : params_) state_[p->name] = std::move(state.at(p->name));
}

double grad_norm(const std::vector<Parameter*>& params) {
  double sq = 0.0;
  for (const Parameter* p : params)
    if (p->grad.size() > 0) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Parameter* p : params)
      if (p->grad.size() > 0) p->grad *= s;
  }
  return norm;
}

Affine Affine::create(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
                      ParamGroup group, bool with_bias) {
  Affine a;
  a.weight = &store.create(name + ".w", in, out, group, Init::xavier_uniform);
  if (with_bias) a.bias = &store.create(name + ".b", 1, out, group, Init::zeros);
  return a;
}

ad::Var Affine::operator()(ad::Tape& tape, ad::Var x) const {
  ad::Var y = ad::matmul(x, tape.param(*weight));
  return bias ? ad::add_bias(y, tape.param(*bias)) : y;
}

GruCell GruCell::create(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index hidden,
                        ParamGroup group) {
  GruCell c;
  c.w_input = &store.create(name + ".w_input", in, 3 * hidden, group, Init::xavier_uniform);
  c.w_hidden = &store.create(name + ".w_hidden", hidden, 3 * hidden, group, Init::xavier_uniform);
  c.b_input = &store.create(name + ".b_input", 1, 3 * hidden, group, Init::zeros);
  c.b_hidden = &store.create(name + ".b_hidden", 1, 3 * hidden, group, Init::zeros);
  return c;
}

ad::Var GruCell::project_inputs(ad::Tape& tape, ad::Var xs) const {
  if (xs.cols() != input_dim())
    throw ShapeError("GRU input has " + std::to_string(xs.cols()) + " columns, expected " +
                     std::to_string(input_dim()));
  return ad::add_bias(ad::matmul(xs, tape.param(*w_input)), tape.param(*b_input));
}

ad::Var GruCell::step_projected(ad::Tape& tape, ad::Var px, ad::Var h) const {
  const Eigen::Index d = hidden_dim();
  ad::Var ph = ad::add_bias(ad::matmul(h, tape.param(*w_hidden)), tape.param(*b_hidden));
  ad::Var r = ad::sigmoid(ad::add(ad::slice_cols(px, 0, d), ad::slice_cols(ph, 0, d)));
  ad::Var u = ad::sigmoid(ad::add(ad::slice_cols(px, d, d), ad::slice_cols(ph, d, d)));
  ad::Var n = ad::tanh(ad::add(ad::slice_cols(px, 2 * d, d), ad::mul(r, ad::slice_cols(ph, 2 * d, d))));
  // h' = n + u * (h - n)
  return ad::add(n, ad::mul(u, ad::sub(h, n)));
}

ad::Var GruCell::step(ad::Tape& tape, ad::Var x, ad::Var h) const {
  return step_projected(tape, project_inputs(tape, x), h);
}

}  // namespace tegke
