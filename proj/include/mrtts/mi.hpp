#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mrtts/nn.hpp"

namespace mrtts {

// Mean over dimensions of squared differences between two equal-length rows.
double mse(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Donsker-Varadhan objective: mean(joint) - log(mean(exp(marginal))), the
// exponential computed shift-by-max. A constant statistics function gives
// exactly 0.
double dv_objective(const Eigen::VectorXd& joint_scores, const Eigen::VectorXd& marginal_scores);
nn::Var dv_objective_var(const nn::Var& joint_scores, const nn::Var& marginal_scores);

struct MITrainingConfig {
  Eigen::Index input_dim = 256;  // per-variable width; statistics net sees 2x this
  std::vector<Eigen::Index> hidden = {256, 256};
  double learning_rate = 5e-4;
  int inner_steps = 1;
  std::uint64_t seed = 99;
  bool use_adam = true;  // plain ascent available for the textbook update rule
};

// Statistics network trained to maximize the DV bound on batches of
// (predicted, target) embedding pairs. Marginal pairs are built by a seeded
// cycle shuffle of the target half, so no pair keeps its own partner.
class MIEstimator {
 public:
  explicit MIEstimator(const MITrainingConfig& cfg);

  // One training call: inner_steps ascent steps on the DV objective.
  // Returns the post-update objective value. Batches are (b x dim) each.
  double update(const nn::Matrix& predicted, const nn::Matrix& target);

  // DV estimate with current parameters; no update. Pure per (batch, state).
  double estimate(const nn::Matrix& predicted, const nn::Matrix& target) const;

  // Graph-building estimate: gradients flow into `predicted` (a b x dim graph
  // var); this network's parameters and the target batch stay constant.
  nn::Var estimate_var(const nn::Var& predicted, const nn::Matrix& target) const;

  long step_count() const { return step_count_; }
  const MITrainingConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }

 private:
  std::vector<int> marginal_permutation(Eigen::Index b, long salt) const;
  nn::Var scores(const nn::Var& predicted, const nn::Var& target, bool detach_params) const;

  MITrainingConfig cfg_;
  nn::ParamStore store_;
  nn::MLP net_;
  nn::Adam adam_;
  long step_count_ = 0;
};

struct ConstraintFlags {
  bool use_mse = false;
  bool use_mi = false;
};

struct StyleConstraintResult {
  nn::Var loss;     // l_s as a graph node (NULL-free: always valid, possibly constant 0)
  double mse_term;  // 0 when gated off
  double mi_term;   // 0 when gated off
};

// L_s = [use_mse]*MSE(E, E') - [use_mi]*MI(E, E'). Gradients reach only the
// predicted batch; the target batch is a constant and the estimator is frozen
// within the evaluation.
StyleConstraintResult style_constraint_loss(const nn::Var& predicted_batch,
                                            const nn::Matrix& target_batch,
                                            const MIEstimator* estimator, ConstraintFlags flags);

// Correlated-Gaussian benchmark: draws `samples` pairs with correlation rho,
// trains an estimator, returns the converged DV estimate (analytic MI is
// -0.5*ln(1-rho^2)).
struct GaussianBenchmarkResult {
  double estimate = 0.0;
  double analytic = 0.0;
};
GaussianBenchmarkResult mi_gaussian_benchmark(double rho, int samples, int train_steps,
                                              int batch_size, std::uint64_t seed);

}  // namespace mrtts
