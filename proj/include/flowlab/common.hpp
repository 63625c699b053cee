#ifndef FLOWLAB_COMMON_HPP
#define FLOWLAB_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowlab {

// Error hierarchy. Exit-code mapping lives in the CLI: config/contract -> 2,
// numerical -> 3, io -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractViolation : Error {
    using Error::Error;
};
struct DomainError : Error {
    using Error::Error;
};
struct ParameterError : Error {
    using Error::Error;
};
struct NumericalFault : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

[[noreturn]] inline void contract_fail(const std::string& msg) { throw ContractViolation(msg); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) contract_fail(msg);
}

// Explicit RNG handle; no global state. All randomness in the library flows
// through one of these, seeded by the caller.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    double uniform() { return unif_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal() { return normal_(engine_); }
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    uint64_t next_u64() { return engine_(); }
    // integer in [0, n)
    size_t index(size_t n) { return static_cast<size_t>(engine_() % n); }

    std::mt19937_64& engine() { return engine_; }

    // Full stream state (engine + distribution caches) as text, for
    // bitwise-exact resume.
    std::string state() const {
        std::ostringstream os;
        os << engine_ << ' ' << unif_ << ' ' << normal_;
        return os.str();
    }

    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_ >> unif_ >> normal_;
        if (!is) throw IoError("Rng: malformed serialized state");
    }

private:
    std::mt19937_64 engine_;
    std::uniform_real_distribution<double> unif_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

// Standard-normal quantile, Acklam's rational approximation plus one Halley
// refinement step; absolute error well below 1.5e-7 on (0,1).
inline double norm_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("norm_quantile: p must be in (0,1), got " + std::to_string(p));

    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                               1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                               6.680131188771972e+01,  -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                               -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                               3.754408661907416e+00};

    const double plow = 0.02425;
    double q, r, x;
    if (p < plow) {
        q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        q = p - 0.5;
        r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley refinement against erfc.
    double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    x = x - u / (1.0 + x * u / 2.0);
    return x;
}

inline double norm_pdf(double x, double mean = 0.0, double stddev = 1.0) {
    double z = (x - mean) / stddev;
    return std::exp(-0.5 * z * z) / (stddev * std::sqrt(2.0 * M_PI));
}

inline double norm_cdf(double x, double mean = 0.0, double stddev = 1.0) {
    return 0.5 * std::erfc(-(x - mean) / (stddev * std::sqrt(2.0)));
}

inline double logit(double t) {
    if (!(t > 0.0 && t < 1.0)) throw DomainError("logit: t must be in (0,1)");
    return std::log(t / (1.0 - t));
}

inline double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }

// Adaptive Simpson quadrature; used as an independent oracle for densities.
namespace detail {
template <typename F>
double simpson(F&& f, double a, double b, double fa, double fm, double fb) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

template <typename F>
double adapt(F&& f, double a, double b, double fa, double fm, double fb, double whole, double tol, int depth) {
    double m = 0.5 * (a + b);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double left = simpson(f, a, m, fa, flm, fm);
    double right = simpson(f, m, b, fm, frm, fb);
    if (depth <= 0 || std::fabs(left + right - whole) < 15.0 * tol) {
        return left + right + (left + right - whole) / 15.0;
    }
    return adapt(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) +
           adapt(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
}
}  // namespace detail

template <typename F>
double integrate(F&& f, double a, double b, double tol = 1e-10, int max_depth = 40) {
    double m = 0.5 * (a + b);
    double fa = f(a), fm = f(m), fb = f(b);
    double whole = detail::simpson(f, a, b, fa, fm, fb);
    return detail::adapt(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

// FNV-1a, used for run-manifest content hashes.
inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string fnv1a_hex(const std::string& s) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(s)));
    return std::string(buf);
}

inline std::string format_double(double v, int precision = 17) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

}  // namespace flowlab

#endif
