#ifndef FLOWLAB_TRAJECTORIES_HPP
#define FLOWLAB_TRAJECTORIES_HPP

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "flowlab/common.hpp"

namespace flowlab {

// Forward process z_t = a(t) x0 + b(t) eps on t in [0,1], with the log-SNR
// algebra lambda = log(a^2/b^2) shared by every family.

enum class ScheduleKind { RF, EDM, Cosine, LDMLinear, MatchedEDM };
enum class LdmVariant { DDPM, LDM };

struct SnrPoint {
    double t = 0.0;
    double lambda = 0.0;        // log-SNR, nats
    double lambda_prime = 0.0;  // d lambda / dt
};

class Schedule {
public:
    static Schedule rf() { return Schedule(ScheduleKind::RF); }

    static Schedule edm(double p_mean, double p_std) {
        require(p_std > 0.0, "edm: P_s must be positive");
        Schedule s(ScheduleKind::EDM);
        s.p_mean_ = p_mean;
        s.p_std_ = p_std;
        return s;
    }

    static Schedule cosine() { return Schedule(ScheduleKind::Cosine); }

    static Schedule ldm_linear(double beta0, double betaT, int steps, LdmVariant variant = LdmVariant::LDM) {
        if (!(beta0 > 0.0 && beta0 <= betaT && betaT < 1.0))
            throw DomainError("ldm_linear: need 0 < beta0 <= betaT < 1");
        require(steps >= 2, "ldm_linear: T must be >= 2");
        Schedule s(ScheduleKind::LDMLinear);
        s.ldm_steps_ = steps;
        s.a_table_ = ldm_linear_coeffs(beta0, betaT, steps, variant);
        s.b_table_.resize(s.a_table_.size());
        for (size_t i = 0; i < s.a_table_.size(); ++i)
            s.b_table_[i] = std::sqrt(std::max(0.0, 1.0 - s.a_table_[i] * s.a_table_[i]));
        return s;
    }

    // EDM-form schedule (a == 1) whose log-SNR equals the target's at every t:
    // b(t) = exp(-lambda_target(t) / 2). The target is held by reference and
    // b is derived lazily, never tabulated.
    static Schedule matched_edm(const Schedule& target) {
        Schedule s(ScheduleKind::MatchedEDM);
        s.target_ = std::make_shared<Schedule>(target);
        return s;
    }

    // a_t = (prod_{s<=t} (1 - beta_s))^{1/2}; beta linear in t for DDPM,
    // ((sqrt(b0) + t/(T-1)(sqrt(bT)-sqrt(b0)))^2 for LDM.
    static std::vector<double> ldm_linear_coeffs(double beta0, double betaT, int steps, LdmVariant variant) {
        if (!(beta0 > 0.0 && beta0 <= betaT && betaT < 1.0))
            throw DomainError("ldm_linear_coeffs: need 0 < beta0 <= betaT < 1");
        require(steps >= 2, "ldm_linear_coeffs: T must be >= 2");
        std::vector<double> a(steps);
        double prod = 1.0;
        for (int k = 0; k < steps; ++k) {
            double frac = static_cast<double>(k) / (steps - 1);
            double beta;
            if (variant == LdmVariant::DDPM) {
                beta = beta0 + frac * (betaT - beta0);
            } else {
                double r = std::sqrt(beta0) + frac * (std::sqrt(betaT) - std::sqrt(beta0));
                beta = r * r;
            }
            if (!(beta > 0.0 && beta < 1.0)) throw DomainError("ldm_linear_coeffs: beta outside (0,1)");
            prod *= 1.0 - beta;
            a[k] = std::sqrt(prod);
        }
        return a;
    }

    ScheduleKind kind() const { return kind_; }
    double edm_p_mean() const { return p_mean_; }
    double edm_p_std() const { return p_std_; }
    int ldm_steps() const { return ldm_steps_; }
    const std::vector<double>& ldm_a_table() const { return a_table_; }

    // Nearest table index for discrete access; round half up, clamped.
    int ldm_index(double t) const {
        int idx = static_cast<int>(std::floor(t * (ldm_steps_ - 1) + 0.5));
        return std::min(std::max(idx, 0), ldm_steps_ - 1);
    }

    double a(double t) const {
        check_t(t);
        switch (kind_) {
            case ScheduleKind::RF: return 1.0 - t;
            case ScheduleKind::EDM: return 1.0;
            case ScheduleKind::Cosine: return std::cos(M_PI_2 * t);
            case ScheduleKind::LDMLinear: return interp_table(a_table_, t);
            case ScheduleKind::MatchedEDM: return 1.0;
        }
        return 0.0;
    }

    double b(double t) const {
        check_t(t);
        switch (kind_) {
            case ScheduleKind::RF: return t;
            case ScheduleKind::EDM: return std::exp(p_mean_ + p_std_ * norm_quantile(clamp_quantile(t)));
            case ScheduleKind::Cosine: return std::sin(M_PI_2 * t);
            case ScheduleKind::LDMLinear: return interp_table(b_table_, t);
            case ScheduleKind::MatchedEDM: return std::exp(-0.5 * target_->snr(t).lambda);
        }
        return 0.0;
    }

    double da(double t) const {
        check_t(t);
        switch (kind_) {
            case ScheduleKind::RF: return -1.0;
            case ScheduleKind::EDM: return 0.0;
            case ScheduleKind::Cosine: return -M_PI_2 * std::sin(M_PI_2 * t);
            case ScheduleKind::LDMLinear: return table_slope(a_table_, t);
            case ScheduleKind::MatchedEDM: return 0.0;
        }
        return 0.0;
    }

    double db(double t) const {
        check_t(t);
        switch (kind_) {
            case ScheduleKind::RF: return 1.0;
            case ScheduleKind::EDM: {
                double q = norm_quantile(clamp_quantile(t));
                // d/dt exp(Pm + Ps q(t)) with q'(t) = 1 / pdf(q)
                return b(t) * p_std_ / norm_pdf(q);
            }
            case ScheduleKind::Cosine: return M_PI_2 * std::cos(M_PI_2 * t);
            case ScheduleKind::LDMLinear: return table_slope(b_table_, t);
            case ScheduleKind::MatchedEDM: {
                SnrPoint p = target_->snr(t);
                return -0.5 * std::exp(-0.5 * p.lambda) * p.lambda_prime;
            }
        }
        return 0.0;
    }

    // lambda = 2 log(a/b), lambda' = 2 (a'/a - b'/b); open interval only.
    SnrPoint snr(double t) const {
        if (!(t > 0.0 && t < 1.0))
            throw DomainError("snr: t=" + std::to_string(t) + " is at or beyond a log-SNR pole; need t in (0,1)");
        double at = a(t), bt = b(t);
        if (at <= 0.0)
            throw DomainError("snr: a(t)=0 pole at t=" + std::to_string(t) + " for this schedule family");
        if (bt <= 0.0)
            throw DomainError("snr: b(t)=0 pole at t=" + std::to_string(t) + " for this schedule family");
        SnrPoint p;
        p.t = t;
        p.lambda = 2.0 * std::log(at / bt);
        p.lambda_prime = 2.0 * (da(t) / at - db(t) / bt);
        if (!std::isfinite(p.lambda) || !std::isfinite(p.lambda_prime))
            throw DomainError("snr: non-finite log-SNR at t=" + std::to_string(t));
        return p;
    }

private:
    explicit Schedule(ScheduleKind k) : kind_(k) {}

    static void check_t(double t) {
        if (!(t >= 0.0 && t <= 1.0)) throw DomainError("schedule: t=" + std::to_string(t) + " outside [0,1]");
    }

    // The normal quantile diverges at 0 and 1; EDM evaluation stays inside.
    static double clamp_quantile(double t) {
        const double eps = 1e-12;
        return std::min(std::max(t, eps), 1.0 - eps);
    }

    // Piecewise-linear interpolation of the discrete table over t in [0,1].
    double interp_table(const std::vector<double>& tab, double t) const {
        double u = t * (ldm_steps_ - 1);
        int k = std::min(static_cast<int>(std::floor(u)), ldm_steps_ - 2);
        k = std::max(k, 0);
        double frac = u - k;
        return tab[k] + frac * (tab[k + 1] - tab[k]);
    }

    double table_slope(const std::vector<double>& tab, double t) const {
        double u = t * (ldm_steps_ - 1);
        int k = std::min(static_cast<int>(std::floor(u)), ldm_steps_ - 2);
        k = std::max(k, 0);
        return (tab[k + 1] - tab[k]) * (ldm_steps_ - 1);
    }

    ScheduleKind kind_;
    double p_mean_ = 0.0, p_std_ = 1.0;  // EDM
    int ldm_steps_ = 0;
    std::vector<double> a_table_, b_table_;
    std::shared_ptr<Schedule> target_;  // MatchedEDM
};

inline void check_same_shape(size_t n, size_t m, const char* what) {
    if (n != m)
        throw ContractViolation(std::string(what) + ": shape mismatch, " + std::to_string(n) + " vs " +
                                std::to_string(m));
}

inline std::vector<double> forward_sample(const Schedule& s, const std::vector<double>& x0,
                                          const std::vector<double>& eps, double t) {
    check_same_shape(x0.size(), eps.size(), "forward_sample");
    double at = s.a(t), bt = s.b(t);
    std::vector<double> z(x0.size());
    for (size_t i = 0; i < z.size(); ++i) z[i] = at * x0[i] + bt * eps[i];
    return z;
}

inline double forward_sample(const Schedule& s, double x0, double eps, double t) {
    return s.a(t) * x0 + s.b(t) * eps;
}

// u_t(z|eps) = (a'/a) z - (b/2) lambda' eps
inline std::vector<double> conditional_velocity(const Schedule& s, const std::vector<double>& z,
                                                const std::vector<double>& eps, double t) {
    check_same_shape(z.size(), eps.size(), "conditional_velocity");
    double at = s.a(t);
    if (at == 0.0) throw DomainError("conditional_velocity: a(t)=0 pole at t=" + std::to_string(t));
    SnrPoint p = s.snr(t);
    double ca = s.da(t) / at;
    double ce = -0.5 * s.b(t) * p.lambda_prime;
    std::vector<double> u(z.size());
    for (size_t i = 0; i < u.size(); ++i) u[i] = ca * z[i] + ce * eps[i];
    return u;
}

inline double conditional_velocity(const Schedule& s, double z, double eps, double t) {
    return conditional_velocity(s, std::vector<double>{z}, std::vector<double>{eps}, t)[0];
}

// Prediction spaces. Each one is a known linear form A(t) x0 + B(t) eps, so
// any conversion reduces to solving the 2x2 system with z = a x0 + b eps.
enum class Parameterization { Velocity, EpsPrediction, VPrediction, FPrediction };

inline const char* to_string(Parameterization p) {
    switch (p) {
        case Parameterization::Velocity: return "velocity";
        case Parameterization::EpsPrediction: return "eps";
        case Parameterization::VPrediction: return "vpred";
        case Parameterization::FPrediction: return "fpred";
    }
    return "?";
}

struct PredCoeffs {
    double x0;
    double eps;
};

// EDM's network target: D(z) = c_skip z + c_out F, D ~= x0, with sigma = b/a
// and sigma_data = 0.5 (the 0.5^2 in the EDM weight).
inline PredCoeffs prediction_coeffs(Parameterization p, const Schedule& s, double t) {
    double at = s.a(t), bt = s.b(t);
    switch (p) {
        case Parameterization::Velocity: return {s.da(t), s.db(t)};
        case Parameterization::EpsPrediction: return {0.0, 1.0};
        case Parameterization::VPrediction: return {-bt, at};
        case Parameterization::FPrediction: {
            if (at == 0.0) throw DomainError("fpred coefficients undefined where a(t)=0");
            const double sigma_data = 0.5;
            double sigma = bt / at;
            double denom = sigma * sigma + sigma_data * sigma_data;
            double c_skip = sigma_data * sigma_data / denom;
            double c_out = sigma * sigma_data / std::sqrt(denom);
            // F = (x0 - c_skip z) / c_out with z = a x0 + b eps
            return {(1.0 - c_skip * at) / c_out, -c_skip * bt / c_out};
        }
    }
    return {0.0, 0.0};
}

inline std::vector<double> convert_prediction(const std::vector<double>& value, Parameterization from,
                                              Parameterization to, const std::vector<double>& z, double t,
                                              const Schedule& s) {
    require(from != to, "convert_prediction: from == to");
    check_same_shape(value.size(), z.size(), "convert_prediction");
    double at = s.a(t), bt = s.b(t);
    PredCoeffs cf = prediction_coeffs(from, s, t);
    PredCoeffs ct = prediction_coeffs(to, s, t);
    // [ a   b  ] [x0 ]   [ z     ]
    // [ cfx cfe] [eps] = [ value ]
    double det = at * cf.eps - bt * cf.x0;
    if (std::fabs(det) < 1e-300)
        throw DomainError("convert_prediction: singular conversion (lambda' * b = 0) at t=" + std::to_string(t));
    std::vector<double> out(z.size());
    for (size_t i = 0; i < z.size(); ++i) {
        double x0 = (cf.eps * z[i] - bt * value[i]) / det;
        double eps = (at * value[i] - cf.x0 * z[i]) / det;
        out[i] = ct.x0 * x0 + ct.eps * eps;
    }
    return out;
}

inline double convert_prediction(double value, Parameterization from, Parameterization to, double z, double t,
                                 const Schedule& s) {
    return convert_prediction(std::vector<double>{value}, from, to, std::vector<double>{z}, t, s)[0];
}

enum class WeightKind { CfmNative, RF, EDM, CosineEps, CosineV, DensityInduced };

struct WeightingSpec {
    WeightKind kind = WeightKind::CfmNative;
    // Only for DensityInduced: pdf of the timestep density pi(t).
    std::function<double(double)> density_pdf;
};

inline double loss_weight(const WeightingSpec& spec, const Schedule& s, double t) {
    if (!(t > 0.0 && t < 1.0)) throw DomainError("loss_weight: t must be in (0,1)");
    switch (spec.kind) {
        case WeightKind::CfmNative: {
            SnrPoint p = s.snr(t);
            double bt = s.b(t);
            return -0.5 * p.lambda_prime * bt * bt;
        }
        case WeightKind::RF: return t / (1.0 - t);
        case WeightKind::EDM: {
            require(s.kind() == ScheduleKind::EDM, "EDM weight needs an EDM schedule for (P_m, P_s)");
            double lambda = s.snr(t).lambda;
            return norm_pdf(lambda, -2.0 * s.edm_p_mean(), 2.0 * s.edm_p_std()) *
                   (std::exp(-lambda) + 0.25);
        }
        case WeightKind::CosineEps: return 1.0 / std::cosh(0.5 * s.snr(t).lambda);
        case WeightKind::CosineV: return std::exp(-0.5 * s.snr(t).lambda);
        case WeightKind::DensityInduced: {
            require(static_cast<bool>(spec.density_pdf), "DensityInduced weight needs a density pdf");
            return t / (1.0 - t) * spec.density_pdf(t);
        }
    }
    return 0.0;
}

inline Schedule matched_edm_schedule(const Schedule& target) { return Schedule::matched_edm(target); }

}  // namespace flowlab

#endif
