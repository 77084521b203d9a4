#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "man/loss_variant.hpp"
#include "man/rng.hpp"

// Exact discrete-support counterpart of multinomial adversarial training:
// the optimal discriminator, the divergences it induces on the shared
// extractor's domain loss, and an independent brute-force minimizer used to
// certify the closed forms numerically.
namespace man::divergence {

// Probability vector over a finite support {0, ..., S-1}.
class DiscreteDistribution {
 public:
  // Throws DataError on negative entries or a sum further than 1e-12 from 1.
  explicit DiscreteDistribution(std::vector<double> probs);

  std::size_t support_size() const { return probs_.size(); }
  std::span<const double> probs() const { return probs_; }
  double operator[](std::size_t f) const { return probs_[f]; }

 private:
  std::vector<double> probs_;
};

// One simplex row of domain probabilities per support point: table(f, i) = D_i(f).
class TabularDiscriminator {
 public:
  TabularDiscriminator(std::size_t support, std::size_t domains);

  std::size_t support_size() const { return support_; }
  std::size_t num_domains() const { return domains_; }
  double operator()(std::size_t f, std::size_t i) const { return table_[f * domains_ + i]; }
  std::span<double> row(std::size_t f) { return {table_.data() + f * domains_, domains_}; }
  std::span<const double> row(std::size_t f) const {
    return {table_.data() + f * domains_, domains_};
  }

 private:
  std::size_t support_;
  std::size_t domains_;
  std::vector<double> table_;
};

// P-bar = (1/N) sum_i P_i.
DiscreteDistribution centroid(std::span<const DiscreteDistribution> dists);

// D*_i(f) = P_i(f) / sum_j P_j(f). Rows where every P_j(f) = 0 carry no mass
// under any P_i and are set uniform.
TabularDiscriminator optimal_discriminator(std::span<const DiscreteDistribution> dists);

// The discriminator objective summed over domains:
//   NLL: -sum_i E_{P_i}[log D_i]        L2: sum_i E_{P_i}[sum_j (D_j - 1{i=j})^2]
double discriminator_objective(std::span<const DiscreteDistribution> dists,
                               const TabularDiscriminator& table, LossVariant variant);

struct BruteForceOptions {
  std::size_t max_iterations = 1'000'000;
  double residual_tolerance = 1e-10;
  double initial_step = 0.5;  // largest step ever tried
};

// Minimizes discriminator_objective over all tables with simplex rows by
// projected gradient descent, one support point at a time, starting from the
// uniform table. Each iteration tries twice the last accepted step (capped at
// initial_step) and halves it until the objective decreases sufficiently
// (Armijo). Stops when the projected
// gradient residual max|D - proj(D - grad)| drops below the tolerance.
// Throws ConvergenceError (naming the row and residual) otherwise.
TabularDiscriminator brute_force_discriminator(std::span<const DiscreteDistribution> dists,
                                               LossVariant variant,
                                               const BruteForceOptions& options = {});

// Euclidean projection onto the probability simplex.
std::vector<double> project_to_simplex(std::span<const double> v);

// sum p log(p / q), with 0 log 0 = 0. When q is zero where p is positive the
// result is +inf if allow_infinite, otherwise a DataError.
double kl_divergence(const DiscreteDistribution& p, const DiscreteDistribution& q,
                     bool allow_infinite = false);

// Average KL divergence of each distribution to the centroid.
double generalized_jsd(std::span<const DiscreteDistribution> dists);

// sum (p - q)^2 / q; DataError when q = 0 where p != q.
double neyman_chi2(const DiscreteDistribution& p, const DiscreteDistribution& q);

double total_variation(const DiscreteDistribution& p, const DiscreteDistribution& q);

// The shared extractor's domain loss with the discriminator at its optimum,
// evaluated by explicit summation over the support:
//   NLL: -J_D(D*)          L2: sum_i E_{P_i}[sum_j (D*_j - 1/N)^2]
double shared_domain_loss_at_optimum(std::span<const DiscreteDistribution> dists,
                                     LossVariant variant);

// Divergence form of the same quantity:
//   NLL: -N log N + sum_i KL(P_i || P-bar)      L2: (1/N) sum_i chi2(P_i || P-bar)
double divergence_form(std::span<const DiscreteDistribution> dists, LossVariant variant);

// Global minimum of the domain loss: -N log N (NLL) or 0 (L2).
double optimum_bound(std::size_t num_domains, LossVariant variant);

struct TheoremCheck {
  double lhs = 0.0;        // shared_domain_loss_at_optimum
  double rhs = 0.0;        // divergence_form
  double gap = 0.0;        // |lhs - rhs|
  double bound = 0.0;      // optimum_bound
  double max_tv = 0.0;     // max_i TV(P_i, P-bar)
  bool identity_holds = false;
  bool bound_holds = false;  // lhs >= bound - tol, equality iff identical
  bool pass = false;
};

// Checks lhs == rhs within tol (strict), lhs >= bound - tol, and that lhs
// sits at the bound exactly when all distributions coincide.
TheoremCheck verify_theorem(std::span<const DiscreteDistribution> dists, LossVariant variant,
                            double tol);

// N random distributions over a common support of size S. Each entry is an
// exponential draw, zeroed with probability zero_fraction (at least one entry
// stays positive), then normalized.
std::vector<DiscreteDistribution> random_instance(Rng& rng, std::size_t n, std::size_t s,
                                                  double zero_fraction = 0.1);

}  // namespace man::divergence
