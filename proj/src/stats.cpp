#include "man/stats.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <numeric>

#include "man/errors.hpp"

namespace man::stats {

double mean(std::span<const double> xs) {
  if (xs.empty()) throw DataError("mean of an empty sample");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_stddev(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

double standard_error(std::span<const double> xs) {
  if (xs.empty()) throw DataError("standard error of an empty sample");
  return sample_stddev(xs) / std::sqrt(static_cast<double>(xs.size()));
}

TTest one_sample_t_test(std::span<const double> xs, double mu0) {
  TTest r;
  if (xs.size() < 2) {
    r.p = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.df = static_cast<double>(xs.size() - 1);
  const double m = mean(xs);
  const double se = standard_error(xs);
  if (se == 0.0) {
    r.t = m == mu0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), m - mu0);
    r.p = m == mu0 ? 1.0 : 0.0;
    return r;
  }
  r.t = (m - mu0) / se;
  const boost::math::students_t dist(r.df);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

}  // namespace man::stats
