#ifndef FLOWLAB_SAMPLE_HPP
#define FLOWLAB_SAMPLE_HPP

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "flowlab/common.hpp"
#include "flowlab/timesamplers.hpp"
#include "flowlab/trajectories.hpp"

namespace flowlab {

// Deterministic Euler integration of dz = v(z, t) dt from noise (t=1) to data
// (t=0), classifier-free guidance, resolution-dependent timestep shifting and
// the path-length diagnostic.

using VelocityFn = std::function<std::vector<double>(const std::vector<double>& z, double t)>;

struct SamplerConfig {
    int steps = 50;
    double guidance = 1.0;
    double shift = 1.0;  // alpha >= 1; sqrt(m/n) when given as a resolution pair

    std::string id() const {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "steps%d_cfg%.1f", steps, guidance);
        return buf;
    }
};

// The six evaluation settings: 50 steps at guidance 1.0 / 2.5 / 5.0, and
// 5 / 10 / 25 steps at guidance 5.0.
inline std::vector<SamplerConfig> evaluation_sampler_settings() {
    return {{50, 1.0, 1.0}, {50, 2.5, 1.0}, {50, 5.0, 1.0}, {5, 5.0, 1.0}, {10, 5.0, 1.0}, {25, 5.0, 1.0}};
}

// t_m = sqrt(m/n) t_n / (1 + (sqrt(m/n) - 1) t_n); fixes 0 and 1.
inline double shift_time(double t_n, double n_pixels, double m_pixels) {
    require(n_pixels > 0.0 && m_pixels > 0.0, "shift_time: pixel counts must be positive");
    require(t_n >= 0.0 && t_n <= 1.0, "shift_time: t must be in [0,1]");
    double alpha = std::sqrt(m_pixels / n_pixels);
    return alpha * t_n / (1.0 + (alpha - 1.0) * t_n);
}

inline double shift_time_alpha(double t, double alpha) {
    require(alpha > 0.0, "shift_time_alpha: alpha must be positive");
    require(t >= 0.0 && t <= 1.0, "shift_time_alpha: t must be in [0,1]");
    return alpha * t / (1.0 + (alpha - 1.0) * t);
}

// sigma(t, n) = (t / (1-t)) sqrt(1/n): sample-mean uncertainty of a constant
// image under the RF forward process.
inline double uncertainty_sigma(double t, double n_pixels) {
    require(n_pixels >= 1.0, "uncertainty_sigma: n must be >= 1");
    if (!(t >= 0.0 && t < 1.0)) throw DomainError("uncertainty_sigma: t=1 pole (need t in [0,1))");
    return t / (1.0 - t) * std::sqrt(1.0 / n_pixels);
}

inline std::vector<double> cfg_combine(const std::vector<double>& v_cond, const std::vector<double>& v_uncond,
                                       double scale) {
    check_same_shape(v_cond.size(), v_uncond.size(), "cfg_combine");
    std::vector<double> out(v_cond.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = v_uncond[i] + scale * (v_cond[i] - v_uncond[i]);
    return out;
}

// Descending grid from 1 to 0; uniform in t, then pushed through the shift
// map (alpha=1 leaves it uniform).
inline std::vector<double> time_grid(int steps, double shift_alpha = 1.0) {
    require(steps >= 1, "time_grid: need at least one step");
    std::vector<double> grid(static_cast<size_t>(steps + 1));
    for (int k = 0; k <= steps; ++k) {
        double t = 1.0 - static_cast<double>(k) / steps;
        grid[static_cast<size_t>(k)] = shift_alpha == 1.0 ? t : shift_time_alpha(t, shift_alpha);
    }
    grid.front() = 1.0;
    grid.back() = 0.0;
    return grid;
}

inline void validate_grid(const std::vector<double>& grid) {
    require(grid.size() >= 2, "euler_integrate: grid needs at least two points");
    require(grid.front() == 1.0 && grid.back() == 0.0, "euler_integrate: grid must run from 1 to 0");
    for (size_t i = 1; i < grid.size(); ++i)
        require(grid[i] < grid[i - 1], "euler_integrate: grid must be strictly decreasing");
}

struct Trajectory {
    std::vector<std::vector<double>> states;  // grid.size() states, z1 first
};

inline Trajectory euler_integrate(const VelocityFn& velocity, const std::vector<double>& z1,
                                  const std::vector<double>& grid) {
    validate_grid(grid);
    Trajectory traj;
    traj.states.push_back(z1);
    std::vector<double> z = z1;
    for (size_t k = 0; k + 1 < grid.size(); ++k) {
        double t = grid[k];
        double dt = grid[k + 1] - grid[k];  // negative
        std::vector<double> v = velocity(z, t);
        check_same_shape(v.size(), z.size(), "euler_integrate velocity");
        for (size_t i = 0; i < z.size(); ++i) {
            z[i] += dt * v[i];
            if (!std::isfinite(z[i]))
                throw NumericalFault("euler_integrate: non-finite state at step " + std::to_string(k));
        }
        traj.states.push_back(z);
    }
    return traj;
}

// Sum of Euclidean norms of state increments (= sum ||v dt|| under Euler).
inline double path_length(const Trajectory& traj) {
    require(traj.states.size() >= 2, "path_length: trajectory needs at least 2 states");
    double total = 0.0;
    for (size_t k = 1; k < traj.states.size(); ++k) {
        double seg = 0.0;
        for (size_t i = 0; i < traj.states[k].size(); ++i) {
            double d = traj.states[k][i] - traj.states[k - 1][i];
            seg += d * d;
        }
        total += std::sqrt(seg);
    }
    return total;
}

inline double endpoint_distance(const Trajectory& traj) {
    double acc = 0.0;
    for (size_t i = 0; i < traj.states.front().size(); ++i) {
        double d = traj.states.back()[i] - traj.states.front()[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

// Training-side shifting: pushforward of a base density through the shift
// map. pdf(t) = base_pdf(f^{-1}(t)) |d f^{-1}/dt| with
// f^{-1}(t) = t / (alpha - (alpha-1) t) and
// d f^{-1}/dt = alpha / (alpha - (alpha-1) t)^2.
struct ShiftedDensity {
    TimestepDensity base;
    double alpha = 1.0;

    double pdf(double t) const {
        double denom = alpha - (alpha - 1.0) * t;
        double u = t / denom;
        return base.pdf(u) * alpha / (denom * denom);
    }

    double sample(Rng& rng) const { return shift_time_alpha(base.sample(rng), alpha); }
};

}  // namespace flowlab

#endif
