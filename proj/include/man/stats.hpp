#pragma once

#include <cstddef>
#include <span>

namespace man::stats {

double mean(std::span<const double> xs);
// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
double sample_stddev(std::span<const double> xs);
// sample_stddev / sqrt(n).
double standard_error(std::span<const double> xs);

struct TTest {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided; NaN when n < 2
};

// One-sample t-test of H0: population mean == mu0. A zero-variance sample
// gives p = 1 when its mean equals mu0 and p = 0 otherwise.
TTest one_sample_t_test(std::span<const double> xs, double mu0);

}  // namespace man::stats
