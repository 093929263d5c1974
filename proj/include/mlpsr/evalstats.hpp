#pragma once

// Paired Student t-tests on log-transformed metric values, and tabulated
// method-vs-method comparisons over metric reports.

#include <string>
#include <vector>

#include "mlpsr/metrics.hpp"

namespace mlpsr {

struct PairedTestResult {
    double t = 0;
    double p = 1;   // two-sided
    double df = 0;
    std::size_t n = 0;
};

// CDF of Student's t distribution, computed via the regularized incomplete
// beta function.
double student_t_cdf(double t, double df);

// Differences d = ln a - ln b; t = mean(d) / (sd(d)/sqrt(n)), df = n-1.
// Sentinels: zero variance with nonzero mean -> p = 0; zero mean and zero
// variance -> t = 0, p = 1.
PairedTestResult paired_t_test_log(const std::vector<double>& a, const std::vector<double>& b);

struct MetricComparison {
    std::string metric;
    PairedTestResult test;
};

// One row per metric present in both report sets; reports are paired by
// image_id and must cover identical id sets.
std::vector<MetricComparison> compare_methods(const std::vector<MetricReport>& report_a,
                                              const std::vector<MetricReport>& report_b);

// CSV with the fixed columns metric,t,p,df,n.
std::string comparison_to_csv(const std::vector<MetricComparison>& rows);

}  // namespace mlpsr
