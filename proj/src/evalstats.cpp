#include "mlpsr/evalstats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "mlpsr/errors.hpp"

namespace mlpsr {

namespace {

// log of the complete beta function
double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

// Continued-fraction evaluation of the regularized incomplete beta I_x(a,b)
// (modified Lentz).
double betacf(double a, double b, double x) {
    const double tiny = 1e-300;
    const double eps = 1e-16;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 500; ++m) {
        double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

double reg_incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double front = std::exp(a * std::log(x) + b * std::log(1.0 - x) - log_beta(a, b));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - std::exp(b * std::log(1.0 - x) + a * std::log(x) - log_beta(b, a)) *
                     betacf(b, a, 1.0 - x) / b;
}

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

double student_t_cdf(double t, double df) {
    if (!(df > 0)) throw ContractError("student_t_cdf: df must be positive");
    if (t == 0.0) return 0.5;
    double x = df / (df + t * t);
    double tail = 0.5 * reg_incomplete_beta(df / 2.0, 0.5, x);
    return t > 0 ? 1.0 - tail : tail;
}

PairedTestResult paired_t_test_log(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ContractError("paired_t_test_log: sample lengths differ");
    if (a.size() < 2) throw ContractError("paired_t_test_log: need at least 2 pairs");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(a[i] > 0) || !(b[i] > 0))
            throw ContractError("paired_t_test_log: values must be positive for the log transform");
        d[i] = std::log(a[i]) - std::log(b[i]);
    }
    const double n = static_cast<double>(d.size());
    double mean = 0;
    for (double x : d) mean += x;
    mean /= n;
    double ss = 0;
    for (double x : d) ss += (x - mean) * (x - mean);
    const double var = ss / (n - 1.0);

    PairedTestResult r;
    r.n = d.size();
    r.df = n - 1.0;
    if (var == 0.0) {
        if (mean == 0.0) {
            r.t = 0.0;
            r.p = 1.0;
        } else {
            r.t = mean > 0 ? std::numeric_limits<double>::infinity()
                           : -std::numeric_limits<double>::infinity();
            r.p = 0.0;
        }
        return r;
    }
    r.t = mean / (std::sqrt(var) / std::sqrt(n));
    r.p = 2.0 * (1.0 - student_t_cdf(std::fabs(r.t), r.df));
    r.p = std::min(1.0, std::max(0.0, r.p));
    return r;
}

std::vector<MetricComparison> compare_methods(const std::vector<MetricReport>& report_a,
                                              const std::vector<MetricReport>& report_b) {
    if (report_a.empty() || report_b.empty())
        throw ContractError("compare_methods: empty report set");
    std::map<std::string, const MetricReport*> by_id;
    for (const auto& r : report_b) by_id[r.image_id] = &r;
    if (by_id.size() != report_b.size())
        throw ContractError("compare_methods: duplicate image_id in second report");
    std::vector<std::pair<const MetricReport*, const MetricReport*>> pairs;
    for (const auto& r : report_a) {
        auto it = by_id.find(r.image_id);
        if (it == by_id.end())
            throw ContractError("compare_methods: image_id '" + r.image_id +
                                "' missing from second report");
        pairs.emplace_back(&r, it->second);
    }
    if (pairs.size() != report_b.size())
        throw ContractError("compare_methods: report sets cover different images");

    std::vector<MetricComparison> out;
    auto run = [&](const std::string& name, auto getter) {
        std::vector<double> a, b;
        for (const auto& [ra, rb] : pairs) {
            auto va = getter(*ra);
            auto vb = getter(*rb);
            if (!va || !vb) return;  // metric not present in both reports
            if (!std::isfinite(*va) || !std::isfinite(*vb)) return;
            a.push_back(*va);
            b.push_back(*vb);
        }
        if (a.size() < 2) return;
        out.push_back({name, paired_t_test_log(a, b)});
    };
    using Opt = std::optional<double>;
    run("psnr", [](const MetricReport& r) -> Opt { return r.psnr; });
    run("ssim", [](const MetricReport& r) -> Opt { return r.ssim; });
    run("sharpness", [](const MetricReport& r) -> Opt { return r.sharpness; });
    run("entropy", [](const MetricReport& r) -> Opt { return r.entropy; });
    run("wavelet_low", [](const MetricReport& r) -> Opt { return r.wavelet_low; });
    return out;
}

std::string comparison_to_csv(const std::vector<MetricComparison>& rows) {
    std::ostringstream os;
    os << "metric,t,p,df,n\n";
    for (const auto& row : rows)
        os << row.metric << ',' << fmt(row.test.t) << ',' << fmt(row.test.p) << ','
           << fmt(row.test.df) << ',' << row.test.n << '\n';
    return os.str();
}

}  // namespace mlpsr
