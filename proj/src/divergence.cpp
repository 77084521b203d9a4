#include "man/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include "man/errors.hpp"

namespace man::divergence {
namespace {

void check_family(std::span<const DiscreteDistribution> dists, const char* what) {
  if (dists.size() < 2) {
    throw DataError(std::string(what) + ": need at least 2 distributions, got " +
                    std::to_string(dists.size()));
  }
  const std::size_t s = dists[0].support_size();
  for (std::size_t i = 1; i < dists.size(); ++i) {
    if (dists[i].support_size() != s) {
      throw DimensionError(std::string(what) + ": distribution " + std::to_string(i) +
                           " has support " + std::to_string(dists[i].support_size()) +
                           ", expected " + std::to_string(s));
    }
  }
}

void check_pair(const DiscreteDistribution& p, const DiscreteDistribution& q, const char* what) {
  if (p.support_size() != q.support_size()) {
    throw DimensionError(std::string(what) + ": supports of size " +
                         std::to_string(p.support_size()) + " and " +
                         std::to_string(q.support_size()));
  }
}

// Change in the per-row objective (domain masses normalized to q) when the
// row moves from d to c. The multiplier term mu * sum(c - d) is zero on the
// exact simplex; including it keeps rounding in sum(c) and sum(d) from
// swamping the change near the optimum.
double row_objective_change(std::span<const double> d, std::span<const double> c,
                            std::span<const double> q, LossVariant variant, double mu) {
  double total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double step = c[i] - d[i];
    if (variant == LossVariant::kNll) {
      if (q[i] != 0.0) {
        if (c[i] <= 0.0) return std::numeric_limits<double>::infinity();
        total -= q[i] * std::log1p(step / d[i]);
      }
    } else {
      // sum_j d_j^2 - 2 q_j d_j, the row objective up to a constant
      total += step * (c[i] + d[i] - 2.0 * q[i]);
    }
    total += mu * step;
  }
  return total;
}

void row_gradient(std::span<const double> d, std::span<const double> q, LossVariant variant,
                  std::span<double> g) {
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (variant == LossVariant::kNll) {
      g[i] = q[i] == 0.0 ? 0.0 : -q[i] / d[i];
    } else {
      g[i] = 2.0 * (d[i] - q[i]);
    }
  }
}

double residual(std::span<const double> d, std::span<const double> g) {
  std::vector<double> shifted(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) shifted[i] = d[i] - g[i];
  const auto proj = project_to_simplex(shifted);
  double r = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) r = std::max(r, std::abs(d[i] - proj[i]));
  return r;
}

}  // namespace

DiscreteDistribution::DiscreteDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw DataError("distribution over an empty support");
  double sum = 0.0;
  for (std::size_t f = 0; f < probs_.size(); ++f) {
    if (!(probs_[f] >= 0.0) || !std::isfinite(probs_[f])) {
      throw DataError("distribution entry " + std::to_string(f) + " is " +
                      std::to_string(probs_[f]));
    }
    sum += probs_[f];
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "distribution sums to " << sum;
    throw DataError(msg.str());
  }
}

TabularDiscriminator::TabularDiscriminator(std::size_t support, std::size_t domains)
    : support_(support), domains_(domains), table_(support * domains, 1.0 / domains) {}

DiscreteDistribution centroid(std::span<const DiscreteDistribution> dists) {
  check_family(dists, "centroid");
  const std::size_t s = dists[0].support_size();
  std::vector<double> mean(s, 0.0);
  for (const auto& p : dists) {
    for (std::size_t f = 0; f < s; ++f) mean[f] += p[f];
  }
  for (double& m : mean) m /= static_cast<double>(dists.size());
  return DiscreteDistribution(std::move(mean));
}

TabularDiscriminator optimal_discriminator(std::span<const DiscreteDistribution> dists) {
  check_family(dists, "optimal_discriminator");
  const std::size_t s = dists[0].support_size();
  const std::size_t n = dists.size();
  TabularDiscriminator table(s, n);
  for (std::size_t f = 0; f < s; ++f) {
    double mass = 0.0;
    for (const auto& p : dists) mass += p[f];
    if (mass == 0.0) continue;  // stays uniform
    auto row = table.row(f);
    for (std::size_t i = 0; i < n; ++i) row[i] = dists[i][f] / mass;
  }
  return table;
}

double discriminator_objective(std::span<const DiscreteDistribution> dists,
                               const TabularDiscriminator& table, LossVariant variant) {
  check_family(dists, "discriminator_objective");
  const std::size_t s = dists[0].support_size();
  const std::size_t n = dists.size();
  if (table.support_size() != s || table.num_domains() != n) {
    throw DimensionError("discriminator_objective: table is " +
                         std::to_string(table.support_size()) + "x" +
                         std::to_string(table.num_domains()) + ", distributions are " +
                         std::to_string(s) + "x" + std::to_string(n));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < s; ++f) {
      const double p = dists[i][f];
      if (p == 0.0) continue;
      if (variant == LossVariant::kNll) {
        total -= p * std::log(table(f, i));
      } else {
        double sq = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double diff = table(f, j) - (i == j ? 1.0 : 0.0);
          sq += diff * diff;
        }
        total += p * sq;
      }
    }
  }
  return total;
}

std::vector<double> project_to_simplex(std::span<const double> v) {
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    cumulative += sorted[k];
    const double t = (cumulative - 1.0) / static_cast<double>(k + 1);
    if (sorted[k] - t > 0.0) theta = t;
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - theta, 0.0);
  return out;
}

TabularDiscriminator brute_force_discriminator(std::span<const DiscreteDistribution> dists,
                                               LossVariant variant,
                                               const BruteForceOptions& options) {
  check_family(dists, "brute_force_discriminator");
  const std::size_t s = dists[0].support_size();
  const std::size_t n = dists.size();
  TabularDiscriminator table(s, n);

  std::vector<double> q(n), g(n), candidate_in(n);
  for (std::size_t f = 0; f < s; ++f) {
    double mass = 0.0;
    for (const auto& p : dists) mass += p[f];
    if (mass == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) q[i] = dists[i][f] / mass;

    auto d = table.row(f);
    double r = 0.0;
    double step = options.initial_step;
    bool converged = false;
    for (std::size_t t = 1; t <= options.max_iterations; ++t) {
      row_gradient(d, q, variant, g);
      r = residual(d, g);
      if (r < options.residual_tolerance) {
        converged = true;
        break;
      }
      double mu = 0.0;
      for (std::size_t i = 0; i < n; ++i) mu -= d[i] * g[i];
      step = std::min(options.initial_step, 2.0 * step);
      for (int halvings = 0; halvings < 80; ++halvings, step *= 0.5) {
        for (std::size_t i = 0; i < n; ++i) candidate_in[i] = d[i] - step * g[i];
        auto candidate = project_to_simplex(candidate_in);
        double decrease = 0.0;
        for (std::size_t i = 0; i < n; ++i) decrease += (g[i] + mu) * (candidate[i] - d[i]);
        if (row_objective_change(d, candidate, q, variant, mu) <= 1e-4 * decrease) {
          std::copy(candidate.begin(), candidate.end(), d.begin());
          break;
        }
      }
    }
    if (!converged) {
      std::ostringstream msg;
      msg << "brute_force_discriminator (" << to_string(variant) << "): support point " << f
          << " did not converge in " << options.max_iterations
          << " iterations, residual " << r;
      throw ConvergenceError(msg.str());
    }
  }
  return table;
}

double kl_divergence(const DiscreteDistribution& p, const DiscreteDistribution& q,
                     bool allow_infinite) {
  check_pair(p, q, "kl_divergence");
  double total = 0.0;
  for (std::size_t f = 0; f < p.support_size(); ++f) {
    if (p[f] == 0.0) continue;
    if (q[f] == 0.0) {
      if (allow_infinite) return std::numeric_limits<double>::infinity();
      throw DataError("kl_divergence: q is zero at support point " + std::to_string(f) +
                      " where p = " + std::to_string(p[f]));
    }
    total += p[f] * std::log(p[f] / q[f]);
  }
  return total;
}

double generalized_jsd(std::span<const DiscreteDistribution> dists) {
  const auto mean = centroid(dists);
  double total = 0.0;
  for (const auto& p : dists) total += kl_divergence(p, mean);
  return total / static_cast<double>(dists.size());
}

double neyman_chi2(const DiscreteDistribution& p, const DiscreteDistribution& q) {
  check_pair(p, q, "neyman_chi2");
  double total = 0.0;
  for (std::size_t f = 0; f < p.support_size(); ++f) {
    const double diff = p[f] - q[f];
    if (diff == 0.0) continue;
    if (q[f] == 0.0) {
      throw DataError("neyman_chi2: q is zero at support point " + std::to_string(f) +
                      " where p = " + std::to_string(p[f]));
    }
    total += diff * diff / q[f];
  }
  return total;
}

double total_variation(const DiscreteDistribution& p, const DiscreteDistribution& q) {
  check_pair(p, q, "total_variation");
  double total = 0.0;
  for (std::size_t f = 0; f < p.support_size(); ++f) total += std::abs(p[f] - q[f]);
  return 0.5 * total;
}

double shared_domain_loss_at_optimum(std::span<const DiscreteDistribution> dists,
                                     LossVariant variant) {
  check_family(dists, "shared_domain_loss_at_optimum");
  const auto opt = optimal_discriminator(dists);
  const std::size_t s = dists[0].support_size();
  const std::size_t n = dists.size();
  const double uniform = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < s; ++f) {
      const double p = dists[i][f];
      if (p == 0.0) continue;
      if (variant == LossVariant::kNll) {
        total += p * std::log(opt(f, i));
      } else {
        double sq = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double diff = opt(f, j) - uniform;
          sq += diff * diff;
        }
        total += p * sq;
      }
    }
  }
  return total;
}

double divergence_form(std::span<const DiscreteDistribution> dists, LossVariant variant) {
  const auto mean = centroid(dists);
  const double n = static_cast<double>(dists.size());
  double total = 0.0;
  if (variant == LossVariant::kNll) {
    for (const auto& p : dists) total += kl_divergence(p, mean);
    return -n * std::log(n) + total;
  }
  for (const auto& p : dists) total += neyman_chi2(p, mean);
  return total / n;
}

double optimum_bound(std::size_t num_domains, LossVariant variant) {
  const double n = static_cast<double>(num_domains);
  return variant == LossVariant::kNll ? -n * std::log(n) : 0.0;
}

TheoremCheck verify_theorem(std::span<const DiscreteDistribution> dists, LossVariant variant,
                            double tol) {
  TheoremCheck out;
  out.lhs = shared_domain_loss_at_optimum(dists, variant);
  out.rhs = divergence_form(dists, variant);
  out.gap = std::abs(out.lhs - out.rhs);
  out.bound = optimum_bound(dists.size(), variant);
  const auto mean = centroid(dists);
  for (const auto& p : dists) out.max_tv = std::max(out.max_tv, total_variation(p, mean));

  out.identity_holds = out.gap < tol;
  const bool above = out.lhs >= out.bound - tol;
  const bool at_bound = std::abs(out.lhs - out.bound) < tol;
  const bool identical = out.max_tv < tol;
  out.bound_holds = above && (at_bound == identical);
  out.pass = out.identity_holds && out.bound_holds;
  return out;
}

std::vector<DiscreteDistribution> random_instance(Rng& rng, std::size_t n, std::size_t s,
                                                  double zero_fraction) {
  if (n < 1 || s < 1) throw ConfigError("random_instance: need n >= 1 and s >= 1");
  std::vector<DiscreteDistribution> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> w(s);
    double sum = 0.0;
    for (double& x : w) {
      x = rng.exponential();
      if (rng.bernoulli(zero_fraction)) x = 0.0;
      sum += x;
    }
    if (sum == 0.0) {
      w[rng.below(s)] = 1.0;
      sum = 1.0;
    }
    for (double& x : w) x /= sum;
    // fold rounding drift into the largest entry
    const double drift = 1.0 - std::accumulate(w.begin(), w.end(), 0.0);
    *std::max_element(w.begin(), w.end()) += drift;
    out.emplace_back(std::move(w));
  }
  return out;
}

}  // namespace man::divergence
