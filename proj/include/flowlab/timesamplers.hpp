#ifndef FLOWLAB_TIMESAMPLERS_HPP
#define FLOWLAB_TIMESAMPLERS_HPP

#include <cmath>
#include <cstdio>
#include <string>

#include "flowlab/common.hpp"

namespace flowlab {

// Timestep densities pi(t) over (0,1). Each one provides an exact pdf, an
// analytic cdf (for KS testing), and an inverse-CDF style sampler. The
// induced loss weight is w_t^pi = t/(1-t) * pi(t).

constexpr double kModeScaleMax = 2.0 / (M_PI - 2.0);  // ~1.75194

inline double logit_normal_pdf(double t, double m, double s) {
    require(s > 0.0, "logit_normal_pdf: s must be positive");
    if (t <= 0.0 || t >= 1.0) return 0.0;  // limit value at the endpoints
    double l = std::log(t / (1.0 - t));
    double z = (l - m) / s;
    return std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * M_PI) * t * (1.0 - t));
}

inline double logit_normal_cdf(double t, double m, double s) {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    return norm_cdf(std::log(t / (1.0 - t)), m, s);
}

// u ~ N(m, s^2) mapped through the standard logistic.
inline double logit_normal_sample(double m, double s, Rng& rng) {
    require(s > 0.0, "logit_normal_sample: s must be positive");
    return logistic(rng.normal(m, s));
}

inline void check_mode_scale(double s) {
    if (!(s >= -1.0 && s <= kModeScaleMax))
        throw ParameterError("mode sampler: s=" + std::to_string(s) + " outside monotonic range [-1, 2/(pi-2)=" +
                             std::to_string(kModeScaleMax) + "]");
}

// f_mode(u; s) = 1 - u - s (cos^2(pi u / 2) - 1 + u); monotone decreasing on
// the admissible s range, mapping u in [0,1] onto t in [0,1].
inline double mode_map(double u, double s) {
    check_mode_scale(s);
    require(u >= 0.0 && u <= 1.0, "mode_map: u must be in [0,1]");
    double c = std::cos(M_PI_2 * u);
    return 1.0 - u - s * (c * c - 1.0 + u);
}

inline double mode_map_derivative(double u, double s) {
    // d/du cos^2(pi u/2) = -(pi/2) sin(pi u)
    return -1.0 - s * (-(M_PI_2)*std::sin(M_PI * u) + 1.0);
}

// Preimage u* with f_mode(u*) = t, by bisection on the monotone bracket.
inline double mode_map_inverse(double t, double s) {
    check_mode_scale(s);
    require(t >= 0.0 && t <= 1.0, "mode_map_inverse: t must be in [0,1]");
    double lo = 0.0, hi = 1.0;  // f(lo)=1 >= t >= f(hi)=0, f decreasing
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (mode_map(mid, s) >= t)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-15) break;
    }
    return 0.5 * (lo + hi);
}

inline double mode_pdf(double t, double s) {
    check_mode_scale(s);
    if (t <= 0.0 || t >= 1.0) {
        // continuous extension; strictly positive for s < 1 at both ends
        t = std::min(std::max(t, 0.0), 1.0);
    }
    double u = mode_map_inverse(t, s);
    double d = mode_map_derivative(u, s);
    if (std::fabs(d) < 1e-14)
        throw DomainError("mode_pdf: degenerate density, |f'| vanishes at the preimage of t=" + std::to_string(t));
    return 1.0 / std::fabs(d);
}

inline double mode_cdf(double t, double s) {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    // t = f(u) with f decreasing and u ~ U(0,1): P(T <= t) = P(U >= f^{-1}(t))
    return 1.0 - mode_map_inverse(t, s);
}

inline double mode_sample(double s, Rng& rng) { return mode_map(rng.uniform(), s); }

// CosMap: t = f(u) = 1 - 1/(tan(pi u/2) + 1), the RF reparameterization whose
// log-SNR matches the cosine schedule.
inline double cosmap_map(double u) {
    require(u >= 0.0 && u <= 1.0, "cosmap_map: u must be in [0,1]");
    if (u >= 1.0) return 1.0;
    return 1.0 - 1.0 / (std::tan(M_PI_2 * u) + 1.0);
}

inline double cosmap_pdf(double t) {
    require(t > 0.0 && t < 1.0, "cosmap_pdf: t must be in (0,1)");
    return 2.0 / (M_PI - 2.0 * M_PI * t + 2.0 * M_PI * t * t);
}

inline double cosmap_cdf(double t) {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    // inverse of f: u = (2/pi) atan(t / (1-t))
    return 2.0 / M_PI * std::atan(t / (1.0 - t));
}

inline double cosmap_sample(Rng& rng) { return cosmap_map(rng.uniform()); }

enum class DensityKind { Uniform, LogitNormal, Mode, CosMap };

struct TimestepDensity {
    DensityKind kind = DensityKind::Uniform;
    double m = 0.0;  // LogitNormal location
    double s = 1.0;  // LogitNormal / Mode scale

    static TimestepDensity uniform() { return {DensityKind::Uniform, 0.0, 0.0}; }
    static TimestepDensity logit_normal(double m, double s) {
        require(s > 0.0, "logit_normal density: s must be positive");
        return {DensityKind::LogitNormal, m, s};
    }
    static TimestepDensity mode(double s) {
        check_mode_scale(s);
        return {DensityKind::Mode, 0.0, s};
    }
    static TimestepDensity cosmap() { return {DensityKind::CosMap, 0.0, 0.0}; }

    double pdf(double t) const {
        switch (kind) {
            case DensityKind::Uniform: return (t >= 0.0 && t <= 1.0) ? 1.0 : 0.0;
            case DensityKind::LogitNormal: return logit_normal_pdf(t, m, s);
            case DensityKind::Mode: return mode_pdf(t, s);
            case DensityKind::CosMap: return cosmap_pdf(t);
        }
        return 0.0;
    }

    double cdf(double t) const {
        switch (kind) {
            case DensityKind::Uniform: return std::min(std::max(t, 0.0), 1.0);
            case DensityKind::LogitNormal: return logit_normal_cdf(t, m, s);
            case DensityKind::Mode: return mode_cdf(t, s);
            case DensityKind::CosMap: return cosmap_cdf(t);
        }
        return 0.0;
    }

    double sample(Rng& rng) const {
        switch (kind) {
            case DensityKind::Uniform: return rng.uniform();
            case DensityKind::LogitNormal: return logit_normal_sample(m, s, rng);
            case DensityKind::Mode: return mode_sample(s, rng);
            case DensityKind::CosMap: return cosmap_sample(rng);
        }
        return 0.5;
    }

    // Variant-label spelling: rf/lognorm(0.00,1.00), rf/mode(1.75), rf/cosmap,
    // plain "rf" for the uniform density.
    std::string label() const {
        char buf[64];
        switch (kind) {
            case DensityKind::Uniform: return "rf";
            case DensityKind::LogitNormal:
                std::snprintf(buf, sizeof(buf), "rf/lognorm(%.2f,%.2f)", m, s);
                return buf;
            case DensityKind::Mode:
                std::snprintf(buf, sizeof(buf), "rf/mode(%.2f)", s);
                return buf;
            case DensityKind::CosMap: return "rf/cosmap";
        }
        return "?";
    }
};

inline double induced_weight(const TimestepDensity& d, double t) {
    require(t > 0.0 && t < 1.0, "induced_weight: t must be in (0,1)");
    return t / (1.0 - t) * d.pdf(t);
}

}  // namespace flowlab

#endif
