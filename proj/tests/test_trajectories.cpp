#include <doctest.h>

#include <cmath>

#include "flowlab/trajectories.hpp"

using namespace flowlab;

namespace {

double fd_derivative(const std::function<double(double)>& f, double t, double h = 1e-6) {
    return (f(t + h) - f(t - h)) / (2.0 * h);
}

}  // namespace

TEST_CASE("forward interpolation endpoints and midpoints") {
    Schedule rf = Schedule::rf();
    CHECK(forward_sample(rf, 2.0, 0.5, 0.0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(forward_sample(rf, 2.0, 0.5, 0.25) == doctest::Approx(1.625).epsilon(1e-15));

    Schedule cos = Schedule::cosine();
    CHECK(forward_sample(cos, 3.7, 0.5, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::fabs(cos.a(1.0)) < 1e-15);
}

TEST_CASE("log-snr values at the symmetric midpoint") {
    Schedule rf = Schedule::rf();
    SnrPoint p = rf.snr(0.5);
    CHECK(p.lambda == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(p.lambda_prime == doctest::Approx(-8.0).epsilon(1e-12));

    Schedule edm = Schedule::edm(0.0, 1.0);
    CHECK(edm.b(0.5) == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(edm.snr(0.5).lambda == doctest::Approx(0.0).epsilon(1e-6));

    Schedule cos = Schedule::cosine();
    CHECK(cos.snr(0.5).lambda == doctest::Approx(0.0).epsilon(1e-13));
}

TEST_CASE("rf log-snr derivative closed form") {
    Schedule rf = Schedule::rf();
    for (double t : {0.1, 0.3, 0.5, 0.8}) CHECK(rf.snr(t).lambda_prime == doctest::Approx(-2.0 / (t * (1.0 - t))));
}

TEST_CASE("snr pole errors name the endpoint") {
    Schedule rf = Schedule::rf();
    CHECK_THROWS_AS(rf.snr(0.0), DomainError);
    CHECK_THROWS_AS(rf.snr(1.0), DomainError);
}

TEST_CASE("conditional velocity oracles") {
    Schedule rf = Schedule::rf();
    double u = conditional_velocity(rf, 1.625, 0.5, 0.25);
    CHECK(u == doctest::Approx(-1.5).epsilon(1e-12));  // eps - x0 under rf

    // noiseless ray: z = a(t) x0 -> u = a'(t) x0
    Schedule cos = Schedule::cosine();
    double t = 0.3, x0 = 1.7;
    double un = conditional_velocity(cos, cos.a(t) * x0, 0.0, t);
    CHECK(un == doctest::Approx(cos.da(t) * x0).epsilon(1e-10));

    // generic check against the path derivative a' x0 + b' eps
    double eps = 1.0;
    double z = forward_sample(cos, 1.0, eps, 0.5);
    double uc = conditional_velocity(cos, z, eps, 0.5);
    CHECK(std::fabs(uc - (cos.da(0.5) * 1.0 + cos.db(0.5) * eps)) < 1e-10);
}

TEST_CASE("rf paths are exactly straight") {
    Schedule rf = Schedule::rf();
    double x0 = -0.7, eps = 1.9;
    for (double t : {0.1, 0.4, 0.75}) {
        double h = 0.05;
        double zt = forward_sample(rf, x0, eps, t);
        double zth = forward_sample(rf, x0, eps, t + h);
        double u = conditional_velocity(rf, zt, eps, t);
        CHECK(std::fabs(zth - zt - h * u) < 1e-12);
    }
}

TEST_CASE("prediction-space conversions") {
    Schedule rf = Schedule::rf();
    // velocity -> eps recovers the true noise
    double v = -1.5, z = 1.625, t = 0.25;
    double eps = convert_prediction(v, Parameterization::Velocity, Parameterization::EpsPrediction, z, t, rf);
    CHECK(eps == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(eps == doctest::Approx(z + (1.0 - t) * v).epsilon(1e-12));

    // round trips across all pairs
    Schedule cos = Schedule::cosine();
    std::vector<Parameterization> all{Parameterization::Velocity, Parameterization::EpsPrediction,
                                      Parameterization::VPrediction, Parameterization::FPrediction};
    Rng rng(11);
    for (const Schedule& s : {rf, cos})
        for (Parameterization from : all)
            for (Parameterization to : all) {
                if (from == to) continue;
                double tt = rng.uniform(0.05, 0.95);
                double zz = rng.normal();
                double val = rng.normal();
                double there = convert_prediction(val, from, to, zz, tt, s);
                double back = convert_prediction(there, to, from, zz, tt, s);
                CHECK(std::fabs(back - val) < 1e-10 * std::max(1.0, std::fabs(val)));
            }
}

TEST_CASE("conversions agree with a brute-force linear solve") {
    // value = A x0 + B eps and z = a x0 + b eps determine (x0, eps); any
    // target form is C x0 + D eps of that solution.
    Schedule cos = Schedule::cosine();
    double t = 0.5;  // lambda = 0, a = b
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        double z = rng.normal(), val = rng.normal();
        PredCoeffs cf = prediction_coeffs(Parameterization::VPrediction, cos, t);
        PredCoeffs ct = prediction_coeffs(Parameterization::EpsPrediction, cos, t);
        double a = cos.a(t), b = cos.b(t);
        double det = a * cf.eps - b * cf.x0;
        double x0 = (cf.eps * z - b * val) / det;
        double eps = (a * val - cf.x0 * z) / det;
        double expected = ct.x0 * x0 + ct.eps * eps;
        double got =
            convert_prediction(val, Parameterization::VPrediction, Parameterization::EpsPrediction, z, t, cos);
        CHECK(got == doctest::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("loss weights") {
    Schedule rf = Schedule::rf();
    WeightingSpec rf_w{WeightKind::DensityInduced, [](double) { return 1.0; }};
    CHECK(loss_weight(rf_w, rf, 0.5) == doctest::Approx(1.0));

    // cfm-native -1/2 lambda' b^2 equals t/(1-t) under rf
    WeightingSpec native{WeightKind::CfmNative, nullptr};
    for (double t : {0.1, 0.25, 0.5, 0.9})
        CHECK(loss_weight(native, rf, t) == doctest::Approx(t / (1.0 - t)).epsilon(1e-12));

    Schedule cos = Schedule::cosine();
    WeightingSpec ce{WeightKind::CosineEps, nullptr};
    CHECK(loss_weight(ce, cos, 0.5) == doctest::Approx(1.0).epsilon(1e-12));  // sech(0)

    WeightingSpec cv{WeightKind::CosineV, nullptr};
    CHECK(loss_weight(cv, cos, 0.5) == doctest::Approx(1.0).epsilon(1e-12));  // e^0

    // every weight finite and positive away from the endpoints
    WeightingSpec edm_w{WeightKind::EDM, nullptr};
    Schedule edm = Schedule::edm(0.0, 1.0);
    for (int k = 1; k < 100; ++k) {
        double t = 1e-4 + (1.0 - 2e-4) * k / 100.0;
        for (auto& [spec, sched] : std::vector<std::pair<WeightingSpec, Schedule>>{
                 {native, rf}, {ce, cos}, {cv, cos}, {edm_w, edm}}) {
            double w = loss_weight(spec, sched, t);
            CHECK(std::isfinite(w));
            CHECK(w > 0.0);
        }
    }
}

TEST_CASE("matched schedules replicate the target log-snr") {
    Schedule mrf = Schedule::matched_edm(Schedule::rf());
    Schedule rf = Schedule::rf();
    for (int k = 0; k < 101; ++k) {
        double t = 0.01 + 0.98 * k / 100.0;
        CHECK(std::fabs(mrf.b(t) - t / (1.0 - t)) < 1e-9 * std::max(1.0, t / (1.0 - t)));
        CHECK(std::fabs(mrf.snr(t).lambda - rf.snr(t).lambda) < 1e-9);
    }
    Schedule mcos = Schedule::matched_edm(Schedule::cosine());
    Schedule cos = Schedule::cosine();
    for (int k = 0; k < 101; ++k) {
        double t = 0.01 + 0.98 * k / 100.0;
        CHECK(std::fabs(mcos.b(t) - std::tan(M_PI * t / 2.0)) < 1e-9 * std::max(1.0, std::tan(M_PI * t / 2.0)));
        CHECK(std::fabs(mcos.snr(t).lambda - cos.snr(t).lambda) < 1e-9);
    }
    CHECK(mrf.b(0.5) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("discrete beta-table coefficients") {
    std::vector<double> a = Schedule::ldm_linear_coeffs(0.1, 0.3, 2, LdmVariant::DDPM);
    REQUIRE(a.size() == 2);
    CHECK(a[0] == doctest::Approx(std::sqrt(0.9)).epsilon(1e-14));
    CHECK(a[1] == doctest::Approx(std::sqrt(0.63)).epsilon(1e-14));
    Schedule s = Schedule::ldm_linear(0.1, 0.3, 2, LdmVariant::DDPM);
    CHECK(s.b(1.0) == doctest::Approx(std::sqrt(1.0 - 0.63)).epsilon(1e-14));
    CHECK(s.a(0.0) == doctest::Approx(std::sqrt(0.9)).epsilon(1e-14));

    // constant-beta degenerate case: both variants coincide
    std::vector<double> ad = Schedule::ldm_linear_coeffs(0.01, 0.01, 5, LdmVariant::DDPM);
    std::vector<double> al = Schedule::ldm_linear_coeffs(0.01, 0.01, 5, LdmVariant::LDM);
    for (size_t i = 0; i < ad.size(); ++i) CHECK(ad[i] == doctest::Approx(al[i]).epsilon(1e-12));
}

TEST_CASE("lambda decreases monotonically for every family") {
    std::vector<Schedule> families{Schedule::rf(), Schedule::cosine(), Schedule::edm(0.0, 1.0),
                                   Schedule::edm(-1.2, 0.6), Schedule::ldm_linear(0.00085, 0.012, 1000,
                                                                                  LdmVariant::LDM)};
    for (const Schedule& s : families) {
        double prev = s.snr(1e-3).lambda;
        for (int k = 1; k <= 1000; ++k) {
            double t = 1e-3 + (1.0 - 2e-3) * k / 1000.0;
            double cur = s.snr(t).lambda;
            CHECK(cur < prev);
            prev = cur;
        }
    }
}

TEST_CASE("derivative evaluators match central differences") {
    std::vector<Schedule> families{Schedule::rf(), Schedule::cosine(), Schedule::edm(0.0, 1.0)};
    for (const Schedule& s : families)
        for (double t : {0.12, 0.37, 0.51, 0.83}) {
            double fa = fd_derivative([&](double x) { return s.a(x); }, t);
            double fb = fd_derivative([&](double x) { return s.b(x); }, t);
            CHECK(std::fabs(s.da(t) - fa) < 1e-6 * std::max(1.0, std::fabs(fa)));
            CHECK(std::fabs(s.db(t) - fb) < 1e-6 * std::max(1.0, std::fabs(fb)));
        }

    // table-backed family: probe at knot midpoints so the finite difference
    // stays inside one linear segment (knot spacing 1/999)
    Schedule ldm = Schedule::ldm_linear(0.00085, 0.012, 1000, LdmVariant::LDM);
    for (int i : {100, 400, 700}) {
        double t = (i + 0.5) / 999.0;
        double fa = fd_derivative([&](double x) { return ldm.a(x); }, t, 1e-7);
        double fb = fd_derivative([&](double x) { return ldm.b(x); }, t, 1e-7);
        CHECK(std::fabs(ldm.da(t) - fa) < 1e-5 * std::max(1.0, std::fabs(fa)));
        CHECK(std::fabs(ldm.db(t) - fb) < 1e-5 * std::max(1.0, std::fabs(fb)));
    }
}

TEST_CASE("edm log-snr draws match the configured normal law") {
    double pm = 0.6, ps = 1.2;
    Schedule edm = Schedule::edm(pm, ps);
    Rng rng(99);
    int n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double lam = edm.snr(rng.uniform(1e-9, 1.0 - 1e-9)).lambda;
        sum += lam;
        sum2 += lam * lam;
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    double want_mean = -2.0 * pm, want_std = 2.0 * ps;
    double se_mean = want_std / std::sqrt(static_cast<double>(n));
    CHECK(std::fabs(mean - want_mean) < 3.0 * se_mean);
    // SE of the std estimate ~ std/sqrt(2n)
    CHECK(std::fabs(std::sqrt(var) - want_std) < 3.0 * want_std / std::sqrt(2.0 * n));
}

TEST_CASE("forward_sample vector form checks shapes") {
    Schedule rf = Schedule::rf();
    std::vector<double> x0{1.0, 2.0}, eps{0.5};
    CHECK_THROWS_AS(forward_sample(rf, x0, eps, 0.5), ContractViolation);
}
