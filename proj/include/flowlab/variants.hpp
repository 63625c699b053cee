#ifndef FLOWLAB_VARIANTS_HPP
#define FLOWLAB_VARIANTS_HPP

#include <cstdio>
#include <string>
#include <vector>

#include "flowlab/common.hpp"
#include "flowlab/timesamplers.hpp"
#include "flowlab/trajectories.hpp"

namespace flowlab {

// One loss formulation: a (schedule, timestep density, prediction space)
// triple with a canonical label, e.g. rf/lognorm(0.00,1.00) or eps/linear.

struct VariantSpec {
    std::string label;
    Schedule schedule = Schedule::rf();
    TimestepDensity density = TimestepDensity::uniform();
    Parameterization parameterization = Parameterization::Velocity;
    WeightingSpec weighting;  // analysis-only view of the implied weight

    static VariantSpec rf_density(const TimestepDensity& d) {
        VariantSpec v;
        v.label = d.label();
        v.schedule = Schedule::rf();
        v.density = d;
        v.parameterization = Parameterization::Velocity;
        v.weighting.kind = WeightKind::DensityInduced;
        TimestepDensity dc = d;
        v.weighting.density_pdf = [dc](double t) { return dc.pdf(t); };
        return v;
    }

    static VariantSpec eps_or_v(const std::string& pred, const std::string& sched) {
        VariantSpec v;
        v.label = pred + "/" + sched;
        v.schedule = (sched == "cos") ? Schedule::cosine() : ldm_default();
        v.density = TimestepDensity::uniform();
        v.parameterization = (pred == "eps") ? Parameterization::EpsPrediction : Parameterization::VPrediction;
        v.weighting.kind = (pred == "eps") ? (sched == "cos" ? WeightKind::CosineEps : WeightKind::CfmNative)
                                           : (sched == "cos" ? WeightKind::CosineV : WeightKind::CfmNative);
        return v;
    }

    static VariantSpec edm(double pm, double ps) {
        VariantSpec v;
        char buf[48];
        std::snprintf(buf, sizeof(buf), "edm(%.2f,%.2f)", pm, ps);
        v.label = buf;
        v.schedule = Schedule::edm(pm, ps);
        v.density = TimestepDensity::uniform();
        v.parameterization = Parameterization::FPrediction;
        v.weighting.kind = WeightKind::EDM;
        return v;
    }

    static VariantSpec edm_matched(const std::string& which) {
        VariantSpec v;
        v.label = "edm/" + which;
        v.schedule = Schedule::matched_edm(which == "rf" ? Schedule::rf() : Schedule::cosine());
        v.density = TimestepDensity::uniform();
        v.parameterization = Parameterization::FPrediction;
        v.weighting.kind = WeightKind::CfmNative;
        return v;
    }

    // LDM-Linear defaults (beta bounds from the latent-diffusion recipe).
    static Schedule ldm_default() { return Schedule::ldm_linear(0.00085, 0.012, 1000, LdmVariant::LDM); }
};

// Parse a canonical label back into a spec; tolerant of spaces after commas.
inline VariantSpec parse_variant(const std::string& raw) {
    std::string s;
    for (char c : raw)
        if (c != ' ') s += c;

    auto parse_two = [&](size_t open) {
        size_t comma = s.find(',', open);
        size_t close = s.find(')', open);
        if (comma == std::string::npos || close == std::string::npos || comma > close)
            throw ParameterError("variant: malformed parameter list in '" + raw + "'");
        return std::make_pair(std::stod(s.substr(open + 1, comma - open - 1)),
                              std::stod(s.substr(comma + 1, close - comma - 1)));
    };

    if (s == "rf") return VariantSpec::rf_density(TimestepDensity::uniform());
    if (s == "rf/cosmap") return VariantSpec::rf_density(TimestepDensity::cosmap());
    if (s.rfind("rf/lognorm(", 0) == 0) {
        auto [m, sc] = parse_two(s.find('('));
        return VariantSpec::rf_density(TimestepDensity::logit_normal(m, sc));
    }
    if (s.rfind("rf/mode(", 0) == 0) {
        size_t open = s.find('(');
        size_t close = s.find(')');
        if (close == std::string::npos) throw ParameterError("variant: malformed '" + raw + "'");
        double sc = std::stod(s.substr(open + 1, close - open - 1));
        return VariantSpec::rf_density(TimestepDensity::mode(sc));  // throws with bound for s out of range
    }
    if (s == "eps/linear" || s == "eps/cos" || s == "v/linear" || s == "v/cos") {
        size_t slash = s.find('/');
        return VariantSpec::eps_or_v(s.substr(0, slash), s.substr(slash + 1));
    }
    if (s == "edm/rf" || s == "edm/cos") return VariantSpec::edm_matched(s.substr(4));
    if (s.rfind("edm(", 0) == 0) {
        auto [pm, ps] = parse_two(s.find('('));
        return VariantSpec::edm(pm, ps);
    }
    throw ParameterError("variant: unknown label '" + raw + "' (nearest forms: rf, rf/lognorm(m,s), rf/mode(s), "
                         "rf/cosmap, eps/linear, eps/cos, v/linear, v/cos, edm(Pm,Ps), edm/rf, edm/cos)");
}

// The 61-formulation study grid:
//   4 eps/v x linear/cos
//   9 rf/mode: 7 scales uniform on [-1, 1.75] plus s=1.0, plus s=0 ("rf")
//   30 rf/lognorm: m in {-1,-0.5,0,0.5,1} x s in {0.2,0.6,1.0,1.4,1.8,2.2}
//   1 rf/cosmap
//   15 edm: P_m in {-1.2,-0.6,0,0.6,1.2} x P_s in {0.6,1.2,1.8}
//   2 edm/rf, edm/cos
inline std::vector<VariantSpec> variant_grid() {
    std::vector<VariantSpec> grid;
    for (const char* p : {"eps", "v"})
        for (const char* sch : {"linear", "cos"}) grid.push_back(VariantSpec::eps_or_v(p, sch));

    grid.push_back(VariantSpec::rf_density(TimestepDensity::uniform()));  // rf/mode(0) == rf
    for (int k = 0; k < 7; ++k)
        grid.push_back(VariantSpec::rf_density(TimestepDensity::mode(-1.0 + k * (2.75 / 6.0))));
    grid.push_back(VariantSpec::rf_density(TimestepDensity::mode(1.0)));

    for (double m : {-1.0, -0.5, 0.0, 0.5, 1.0})
        for (double s : {0.2, 0.6, 1.0, 1.4, 1.8, 2.2})
            grid.push_back(VariantSpec::rf_density(TimestepDensity::logit_normal(m, s)));

    grid.push_back(VariantSpec::rf_density(TimestepDensity::cosmap()));

    for (double pm : {-1.2, -0.6, 0.0, 0.6, 1.2})
        for (double ps : {0.6, 1.2, 1.8}) grid.push_back(VariantSpec::edm(pm, ps));

    grid.push_back(VariantSpec::edm_matched("rf"));
    grid.push_back(VariantSpec::edm_matched("cos"));
    return grid;
}

}  // namespace flowlab

#endif
