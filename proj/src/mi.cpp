#include "mrtts/mi.hpp"

#include <cmath>
#include <random>

#include "mrtts/errors.hpp"
#include "mrtts/util.hpp"

namespace mrtts {

using namespace ad;

double mse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size())
    throw DimensionMismatchError("mse of " + std::to_string(a.size()) + " vs " +
                                 std::to_string(b.size()));
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

double dv_objective(const Eigen::VectorXd& joint_scores, const Eigen::VectorXd& marginal_scores) {
  if (joint_scores.size() < 1 || marginal_scores.size() < 1)
    throw PreconditionError("dv_objective needs non-empty score vectors");
  if (!joint_scores.allFinite() || !marginal_scores.allFinite())
    throw NonFiniteError("dv_objective scores");
  const double m = marginal_scores.maxCoeff();
  const double lme =
      m + std::log((marginal_scores.array() - m).exp().sum() /
                   static_cast<double>(marginal_scores.size()));
  return joint_scores.mean() - lme;
}

Var dv_objective_var(const Var& joint_scores, const Var& marginal_scores) {
  if (!joint_scores->value.allFinite() || !marginal_scores->value.allFinite())
    throw NonFiniteError("dv_objective scores");
  return sub(mean_all(joint_scores), logmeanexp_all(marginal_scores));
}

MIEstimator::MIEstimator(const MITrainingConfig& cfg)
    : cfg_(cfg), adam_(cfg.learning_rate) {
  if (cfg.learning_rate <= 0.0) throw PreconditionError("MI learning rate must be > 0");
  if (cfg.inner_steps < 1) throw PreconditionError("inner_steps must be >= 1");
  std::mt19937_64 rng(cfg.seed);
  net_ = nn::MLP(store_, "mi.net", 2 * cfg.input_dim, cfg.hidden, 1, nn::MLP::Activation::Elu,
                 rng, /*zero_init_output=*/true);
}

std::vector<int> MIEstimator::marginal_permutation(Eigen::Index b, long salt) const {
  // cycle shuffle: uniform over cyclic permutations, so never a fixed point
  std::mt19937_64 rng(derive_seed(cfg_.seed, "marginal-perm:" + std::to_string(salt)));
  std::vector<int> perm(static_cast<std::size_t>(b));
  for (Eigen::Index i = 0; i < b; ++i) perm[static_cast<std::size_t>(i)] = static_cast<int>(i);
  for (Eigen::Index i = b - 1; i >= 1; --i) {
    std::uniform_int_distribution<Eigen::Index> dist(0, i - 1);
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(dist(rng))]);
  }
  return perm;
}

Var MIEstimator::scores(const Var& predicted, const Var& target, bool detach_params) const {
  return net_.forward(concat_cols(predicted, target), detach_params);
}

namespace {

void check_batch(const nn::Matrix& predicted, const nn::Matrix& target, Eigen::Index dim) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols())
    throw DimensionMismatchError("predicted/target batches disagree");
  if (predicted.cols() != dim)
    throw DimensionMismatchError("batch width " + std::to_string(predicted.cols()) +
                                 ", estimator expects " + std::to_string(dim));
  if (predicted.rows() < 2) throw BatchTooSmallError(static_cast<std::size_t>(predicted.rows()));
  if (!predicted.allFinite() || !target.allFinite()) throw NonFiniteError("estimator batch");
}

nn::Matrix permute_rows(const nn::Matrix& m, const std::vector<int>& perm) {
  nn::Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(perm[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

double MIEstimator::update(const nn::Matrix& predicted, const nn::Matrix& target) {
  check_batch(predicted, target, cfg_.input_dim);
  for (int s = 0; s < cfg_.inner_steps; ++s) {
    ++step_count_;
    auto perm = marginal_permutation(predicted.rows(), step_count_);
    Var pred = constant(predicted);
    Var joint = scores(pred, constant(target), false);
    Var marginal = scores(pred, constant(permute_rows(target, perm)), false);
    Var objective = dv_objective_var(joint, marginal);
    backward(neg(objective));  // ascend the bound
    if (cfg_.use_adam) {
      adam_.step(store_);
    } else {
      nn::sgd_step(store_, cfg_.learning_rate);
    }
  }
  return estimate(predicted, target);
}

double MIEstimator::estimate(const nn::Matrix& predicted, const nn::Matrix& target) const {
  check_batch(predicted, target, cfg_.input_dim);
  auto perm = marginal_permutation(predicted.rows(), step_count_);
  Var pred = constant(predicted);
  Var joint = scores(pred, constant(target), true);
  Var marginal = scores(pred, constant(permute_rows(target, perm)), true);
  return dv_objective_var(joint, marginal)->scalar();
}

Var MIEstimator::estimate_var(const Var& predicted, const nn::Matrix& target) const {
  check_batch(predicted->value, target, cfg_.input_dim);
  auto perm = marginal_permutation(target.rows(), step_count_);
  Var joint = scores(predicted, constant(target), true);
  Var marginal = scores(predicted, constant(permute_rows(target, perm)), true);
  return dv_objective_var(joint, marginal);
}

StyleConstraintResult style_constraint_loss(const Var& predicted_batch,
                                            const nn::Matrix& target_batch,
                                            const MIEstimator* estimator, ConstraintFlags flags) {
  if (predicted_batch->value.rows() != target_batch.rows() ||
      predicted_batch->value.cols() != target_batch.cols())
    throw DimensionMismatchError("constraint batches disagree");

  StyleConstraintResult out;
  Var mse_v, mi_v;
  if (flags.use_mse) {
    Var diff = sub(predicted_batch, constant(target_batch));
    mse_v = mean_all(mul(diff, diff));
    out.mse_term = mse_v->scalar();
  }
  if (flags.use_mi) {
    if (!estimator) throw ConfigMismatchError("MI constraint requires an estimator");
    mi_v = estimator->estimate_var(predicted_batch, target_batch);
    out.mi_term = mi_v->scalar();
  }
  if (mse_v && mi_v) out.loss = sub(mse_v, mi_v);
  else if (mse_v) out.loss = mse_v;
  else if (mi_v) out.loss = neg(mi_v);
  else out.loss = constant(nn::Matrix::Zero(1, 1));
  out.mse_term = flags.use_mse ? out.mse_term : 0.0;
  out.mi_term = flags.use_mi ? out.mi_term : 0.0;
  return out;
}

GaussianBenchmarkResult mi_gaussian_benchmark(double rho, int samples, int train_steps,
                                              int batch_size, std::uint64_t seed) {
  if (rho < 0.0 || rho >= 1.0) throw PreconditionError("rho must be in [0, 1)");
  if (samples < batch_size || batch_size < 2)
    throw PreconditionError("need samples >= batch_size >= 2");

  std::mt19937_64 rng(derive_seed(seed, "gaussian-pairs"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  nn::Matrix x(samples, 1), y(samples, 1);
  const double noise = std::sqrt(1.0 - rho * rho);
  for (int i = 0; i < samples; ++i) {
    double xi = gauss(rng);
    x(i, 0) = xi;
    y(i, 0) = rho * xi + noise * gauss(rng);
  }

  MITrainingConfig cfg;
  cfg.input_dim = 1;
  cfg.hidden = {128, 128};
  cfg.learning_rate = 1e-3;
  cfg.seed = derive_seed(seed, "gaussian-net");
  MIEstimator est(cfg);

  std::mt19937_64 batch_rng(derive_seed(seed, "gaussian-batches"));
  std::uniform_int_distribution<int> pick(0, samples - 1);
  nn::Matrix bx(batch_size, 1), by(batch_size, 1);
  for (int step = 0; step < train_steps; ++step) {
    for (int i = 0; i < batch_size; ++i) {
      int j = pick(batch_rng);
      bx(i, 0) = x(j, 0);
      by(i, 0) = y(j, 0);
    }
    est.update(bx, by);
  }

  // full-sample estimate; the tail average over a few extra updates smooths
  // minibatch noise without moving the converged value
  double acc = 0.0;
  const int rounds = 8;
  for (int r = 0; r < rounds; ++r) {
    for (int i = 0; i < batch_size; ++i) {
      int j = pick(batch_rng);
      bx(i, 0) = x(j, 0);
      by(i, 0) = y(j, 0);
    }
    est.update(bx, by);
    acc += est.estimate(x, y);
  }

  GaussianBenchmarkResult out;
  out.estimate = acc / rounds;
  out.analytic = -0.5 * std::log(1.0 - rho * rho);
  return out;
}

}  // namespace mrtts
