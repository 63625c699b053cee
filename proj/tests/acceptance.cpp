// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Tolerances are pinned in code next to each check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flowlab/dataguard.hpp"
#include "flowlab/evalrank.hpp"
#include "flowlab/mmdit.hpp"
#include "flowlab/sample.hpp"
#include "flowlab/study.hpp"
#include "flowlab/timesamplers.hpp"
#include "flowlab/train.hpp"
#include "flowlab/trajectories.hpp"
#include "flowlab/variants.hpp"

#ifndef FLOWLAB_CLI_PATH
#define FLOWLAB_CLI_PATH "./flowlab"
#endif

using namespace flowlab;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail = "") {
    std::printf("%s criterion %2d: %s%s%s\n", ok ? "PASS" : "FAIL", id, name.c_str(), detail.empty() ? "" : " — ",
                detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

double ks_statistic(std::vector<double> draws, const std::function<double(double)>& cdf) {
    std::sort(draws.begin(), draws.end());
    double ks = 0.0;
    size_t n = draws.size();
    for (size_t i = 0; i < n; ++i) {
        double c = cdf(draws[i]);
        ks = std::max(ks, std::fabs(c - static_cast<double>(i) / n));
        ks = std::max(ks, std::fabs(static_cast<double>(i + 1) / n - c));
    }
    return ks;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// ---- 1: densities -----------------------------------------------------------

void criterion_densities() {
    bool ok = true;
    std::string detail;

    struct Case {
        TimestepDensity density;
        std::function<double(double)> cdf;
    };
    std::vector<Case> cases = {
        {TimestepDensity::uniform(), [](double t) { return std::clamp(t, 0.0, 1.0); }},
        {TimestepDensity::logit_normal(0.0, 1.0),
         [](double t) { return t <= 0.0 ? 0.0 : t >= 1.0 ? 1.0 : normal_cdf(logit(t)); }},
        {TimestepDensity::mode(1.0), [](double t) { return mode_cdf(t, 1.0); }},
        {TimestepDensity::cosmap(), [](double t) { return cosmap_cdf(t); }},
    };

    for (auto& c : cases) {
        double mass = integrate([&](double t) { return c.density.pdf(t); }, 1e-9, 1.0 - 1e-9, 1e-9);
        if (std::fabs(mass - 1.0) > 1e-6) {  // pinned: 1e-6
            ok = false;
            detail += c.density.label() + " mass=" + std::to_string(mass) + " ";
        }
        Rng rng(8675309);
        std::vector<double> draws(100000);
        for (double& d : draws) d = c.density.sample(rng);
        double ks = ks_statistic(std::move(draws), c.cdf);
        if (ks >= 0.01) {  // pinned: KS < 0.01 at n=1e5
            ok = false;
            detail += c.density.label() + " ks=" + std::to_string(ks) + " ";
        }
    }
    report(1, "timestep densities normalize and sample correctly", ok, detail);
}

// ---- 2: cosmap log-SNR identity ----------------------------------------------

void criterion_cosmap() {
    Schedule rf = Schedule::rf();
    Schedule cosine = Schedule::cosine();
    double worst = 0.0;
    for (int k = 0; k <= 100; ++k) {  // 101-point interior grid
        double u = static_cast<double>(k + 1) / 102.0;
        worst = std::max(worst, std::fabs(rf.snr(cosmap_map(u)).lambda - cosine.snr(u).lambda));
    }
    report(2, "cosmap reproduces the cosine log-SNR", worst < 1e-9,  // pinned: 1e-9
           "max |dlambda| = " + std::to_string(worst));
}

// ---- 3: shift identities -------------------------------------------------------

void criterion_shift() {
    Schedule rf = Schedule::rf();
    bool ok = true;
    for (int k = 1; k < 40; ++k) {
        double t = k / 40.0;
        for (double alpha : {1.5, 3.0, 4.0}) {
            double ts = shift_time_alpha(t, alpha);
            if (std::fabs(rf.snr(ts).lambda - rf.snr(t).lambda + 2.0 * std::log(alpha)) > 1e-9) ok = false;
            double n = 1024.0, m = alpha * alpha * n;
            if (std::fabs(uncertainty_sigma(shift_time(t, n, m), m) - uncertainty_sigma(t, n)) > 1e-12) ok = false;
            // composing alpha then 1/alpha is the identity
            if (std::fabs(shift_time_alpha(ts, 1.0 / alpha) - t) > 1e-12) ok = false;
            // composition multiplies the scale factors
            if (std::fabs(shift_time_alpha(shift_time_alpha(t, alpha), 2.0) - shift_time_alpha(t, 2.0 * alpha)) >
                1e-12)
                ok = false;
        }
    }
    report(3, "timestep shifting obeys the log-SNR, sigma and composition identities", ok);
}

// ---- 4: reparameterization ------------------------------------------------------

void criterion_reparam() {
    bool ok = true;
    Rng rng(17);
    std::vector<Schedule> scheds = {Schedule::rf(), Schedule::cosine(), Schedule::edm(-1.2, 1.2)};
    std::vector<Parameterization> params = {Parameterization::Velocity, Parameterization::EpsPrediction,
                                            Parameterization::VPrediction, Parameterization::FPrediction};
    for (auto& s : scheds)
        for (double t : {0.15, 0.5, 0.85})
            for (auto from : params)
                for (auto to : params) {
                    if (from == to) continue;
                    std::vector<double> z = {rng.normal(), rng.normal()};
                    std::vector<double> val = {rng.normal(), rng.normal()};
                    auto there = convert_prediction(val, from, to, z, t, s);
                    auto back = convert_prediction(there, to, from, z, t, s);
                    for (size_t i = 0; i < val.size(); ++i)
                        if (std::fabs(back[i] - val[i]) > 1e-10) ok = false;  // pinned: 1e-10
                }

    // exact noise recovery on synthetic triples under the linear interpolant
    Schedule rf = Schedule::rf();
    for (int i = 0; i < 100; ++i) {
        double t = rng.uniform(0.05, 0.95);
        double x0 = rng.normal(), eps = rng.normal();
        double z = rf.a(t) * x0 + rf.b(t) * eps;
        double v = rf.da(t) * x0 + rf.db(t) * eps;
        double e = convert_prediction(v, Parameterization::Velocity, Parameterization::EpsPrediction, z, t, rf);
        if (std::fabs(e - eps) > 1e-12) ok = false;  // pinned: 1e-12
    }
    report(4, "prediction-space conversions round-trip and recover the noise", ok);
}

// ---- 5: marginal-field Monte Carlo oracle ----------------------------------------

void criterion_marginal_field() {
    // 1D standard-normal data under the linear interpolant: the marginal
    // velocity is u(z,t) = (2t-1) z / ((1-t)^2 + t^2). The Monte Carlo
    // estimate is the posterior mean of the conditional velocity with
    // importance weights p(z | x0).
    Schedule rf = Schedule::rf();
    bool ok = true;
    std::string detail;
    Rng rng(420);
    for (double t : {0.2, 0.5, 0.8})
        for (double z : {-1.5, 0.3, 2.0}) {
            double a = rf.a(t), b = rf.b(t), da = rf.da(t), db = rf.db(t);
            int n = 200000;
            double sw = 0.0, swu = 0.0;
            std::vector<double> us(static_cast<size_t>(n)), ws(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) {
                double x0 = rng.normal();
                double w = std::exp(-0.5 * (z - a * x0) * (z - a * x0) / (b * b));
                double eps = (z - a * x0) / b;
                double u = da * x0 + db * eps;
                us[static_cast<size_t>(i)] = u;
                ws[static_cast<size_t>(i)] = w;
                sw += w;
                swu += w * u;
            }
            double est = swu / sw;
            double var = 0.0;
            for (int i = 0; i < n; ++i) {
                double r = ws[static_cast<size_t>(i)] * (us[static_cast<size_t>(i)] - est);
                var += r * r;
            }
            double se = std::sqrt(var) / sw;  // ratio-estimator standard error
            double closed = (2.0 * t - 1.0) * z / ((1.0 - t) * (1.0 - t) + t * t);
            if (std::fabs(est - closed) > 3.0 * se) {  // pinned: 3 SE
                ok = false;
                detail += "(z=" + std::to_string(z) + ",t=" + std::to_string(t) + ") ";
            }
        }
    report(5, "Monte-Carlo marginal field matches the Gaussian closed form", ok, detail);
}

// ---- 6: gradient integrity --------------------------------------------------------

void criterion_gradients() {
    ModelConfig cfg;
    cfg.depth = 2;
    cfg.latent_channels = 1;
    cfg.pos_S = 256;
    cfg.pos_H_max = 256;
    cfg.pos_W_max = 256;
    cfg.zero_init_output = false;
    Rng rng(2025);
    MMDiTImageModel model(cfg, 16, rng);

    // fixed regression batch in the conditional-flow-matching form
    ToyDataset ds{DatasetKind::ShapesImage, 3, 16};
    Rng data_rng(7);
    CfmBatch batch = make_cfm_batch(ds.batch(2, data_rng), Schedule::rf(), TimestepDensity::logit_normal(0.0, 1.0),
                                    Parameterization::Velocity, 0.1, data_rng);
    auto make_loss = [&]() {
        Tensor pred = model.predict_batch(batch.z, batch.t, batch.labels, batch.cond_mask);
        return mse(pred, batch.target);
    };
    Rng coord_rng(7);
    // h = 8e-3 sits at the floor of the truncation/roundoff trade-off for
    // this loss (verified by a step-size sweep); smaller steps are roundoff
    // dominated and inflate the apparent error.
    double rel = finite_diff_check(make_loss, model.params(), 8e-3, coord_rng);
    report(6, "finite differences validate the full-depth transformer gradients", rel < 1e-4,  // pinned: 1e-4
           "max rel err = " + std::to_string(rel));
}

// ---- 7: degeneracy to a single-stream transformer ----------------------------------

void criterion_degeneracy() {
    ModelConfig cfg;
    cfg.depth = 2;
    cfg.zero_init_output = false;
    Rng rng(31);
    MMDiT model(cfg, rng);
    model.share_stream_weights();
    int H = cfg.hidden();
    Tensor c = Tensor::randn({5, H}, rng);
    Tensor x = Tensor::randn({8, H}, rng);
    Tensor y = Tensor::randn({1, H}, rng);
    bool ok = true;
    for (int b = 0; b < cfg.depth; ++b) {
        auto two = model.block_forward(b, {c, x}, y);
        auto one = model.block_forward(b, {concat_rows({c, x})}, y);
        for (size_t i = 0; i < c.size(); ++i)
            if (two[0].values()[i] != one[0].values()[i]) ok = false;  // bitwise at f64
        for (size_t i = 0; i < x.size(); ++i)
            if (two[1].values()[i] != one[0].values()[c.size() + i]) ok = false;
        c = two[0];
        x = two[1];
    }
    report(7, "weight-shared dual-stream blocks equal one concatenated stream bitwise", ok);
}

// ---- 8: attention logit bound --------------------------------------------------------

void criterion_qk_bound() {
    ModelConfig cfg;
    cfg.depth = 2;
    Rng rng(101);
    MMDiT model(cfg, rng);
    int H = cfg.hidden();
    std::vector<StreamAttnWeights> weights;
    for (int s = 0; s < 2; ++s) {
        std::string pre = "block0.s" + std::to_string(s) + ".";
        auto& p = model.params();
        // unit query/key gains as pinned by the criterion
        for (double& v : p.at(pre + "attn.q_gain").values()) v = 1.0;
        for (double& v : p.at(pre + "attn.k_gain").values()) v = 1.0;
        weights.push_back({p.at(pre + "attn.q.w"), p.at(pre + "attn.q.b"), p.at(pre + "attn.k.w"),
                           p.at(pre + "attn.k.b"), p.at(pre + "attn.v.w"), p.at(pre + "attn.v.b"),
                           p.at(pre + "attn.o.w"), p.at(pre + "attn.o.b"), p.at(pre + "attn.q_gain"),
                           p.at(pre + "attn.k_gain")});
    }
    double bound = std::sqrt(64.0) + 1e-9;  // sqrt(d_head)
    double worst = 0.0;
    int inputs = 0;
    while (inputs < 1000) {
        double scale = std::exp(rng.uniform(-1.0, 5.0));  // include extreme activations
        Tensor c = Tensor::randn({4, H}, rng, scale);
        Tensor x = Tensor::randn({6, H}, rng, scale);
        inputs += 10;
        for (double l : joint_attention_logits({c, x}, weights, cfg.heads(), true))
            worst = std::max(worst, std::fabs(l));
    }
    report(8, "query-key normalization bounds attention logits by sqrt(d_head)", worst <= bound,
           "max |logit| = " + std::to_string(worst));
}

// ---- 9 + 10: trained micro-study ------------------------------------------------------

struct TrainedModel {
    std::string variant_label;
    uint64_t seed = 0;
    std::unique_ptr<MlpVelocityModel> model;
    VariantSpec variant;
};

void criterion_study() {
    const std::vector<std::string> variant_labels = {"rf/lognorm(0.00,1.00)", "rf",       "eps/linear",
                                                     "eps/cos",               "v/linear", "v/cos"};
    const std::vector<uint64_t> seeds = {1, 2, 3};
    ToyDataset dataset{DatasetKind::GaussMix2D, 6};

    // class-balanced reference: with random class counts the finite-sample
    // W2 floor (~0.3 from cross-cluster transport) drowns the few-step
    // signal, so both reference and generations fix the class histogram.
    const int kEvalSamples = 252;  // 42 per class
    Rng ref_rng(777);
    std::vector<std::vector<double>> reference;
    std::vector<int> ref_classes;
    std::vector<int> quota(static_cast<size_t>(dataset.num_classes), kEvalSamples / dataset.num_classes);
    while (static_cast<int>(reference.size()) < kEvalSamples) {
        DataSample s = dataset.draw(ref_rng);
        if (quota[static_cast<size_t>(s.label)] == 0) continue;
        --quota[static_cast<size_t>(s.label)];
        reference.push_back(s.x);
        ref_classes.push_back(s.label);
    }

    std::vector<TrainedModel> trained;
    for (const std::string& label : variant_labels)
        for (uint64_t seed : seeds) {
            TrainedModel tm;
            tm.variant_label = label;
            tm.seed = seed;
            tm.variant = parse_variant(label);
            Rng init(seed ^ 0xabcdef1234567890ull);
            tm.model = std::make_unique<MlpVelocityModel>(2, dataset.num_classes, init);
            TrainConfig tc;
            tc.variant = label;
            tc.steps = 10000;  // long enough for every variant to cover the timestep tails
            tc.batch = 128;
            tc.warmup = 200;
            tc.lr = 2e-3;
            tc.seed = seed;
            tc.val_every = 100000;  // no validation inside the gate
            train_loop(*tm.model, tm.variant, dataset, tc);
            trained.push_back(std::move(tm));
        }

    auto score = [&](TrainedModel& tm, const SamplerConfig& sc) {
        Rng gen_rng(tm.seed * 7919 + static_cast<uint64_t>(sc.steps) * 131 +
                    static_cast<uint64_t>(std::lround(sc.guidance * 10.0)));
        GeneratedSet gen;
        std::vector<double> grid = time_grid(sc.steps, sc.shift);
        for (int i = 0; i < kEvalSamples; ++i) {
            int label = i % dataset.num_classes;  // balanced class histogram
            VelocityFn vf = guided_velocity(*tm.model, tm.variant, label, sc.guidance);
            Trajectory traj = euler_integrate(vf, initial_state(tm.variant.schedule, 2, gen_rng), grid);
            gen.samples.push_back(traj.states.back());
            gen.classes.push_back(label);
        }
        return toy_metrics(gen.samples, gen.classes, reference, ref_classes);
    };

    // 9a: relative W2 degradation from 50 to 5 Euler steps, per seed
    int seeds_with_ordering = 0;
    std::string detail9;
    std::map<std::string, std::map<std::string, std::pair<double, double>>> cells;  // variant -> sampler -> sums
    std::map<std::string, std::map<uint64_t, std::pair<double, double>>> degr;      // variant -> seed -> (w2_50,w2_5)

    const std::vector<SamplerConfig> samplers = {{50, 1.0, 1.0}, {50, 2.5, 1.0}, {50, 5.0, 1.0},
                                                 {5, 5.0, 1.0},  {10, 5.0, 1.0}, {25, 5.0, 1.0},
                                                 {5, 1.0, 1.0}};
    for (TrainedModel& tm : trained)
        for (const SamplerConfig& sc : samplers) {
            ToyMetrics m = score(tm, sc);
            auto& cell = cells[tm.variant_label][sc.id()];
            cell.first += m.fidelity / seeds.size();
            cell.second += m.w2 / seeds.size();
            if (sc.steps == 50 && sc.guidance == 1.0) degr[tm.variant_label][tm.seed].first = m.w2;
            if (sc.steps == 5 && sc.guidance == 1.0) degr[tm.variant_label][tm.seed].second = m.w2;
        }

    for (uint64_t seed : seeds) {
        auto [rf50, rf5] = degr["rf/lognorm(0.00,1.00)"][seed];
        auto [ep50, ep5] = degr["eps/linear"][seed];
        double rf_rel = (rf5 - rf50) / rf50;
        double ep_rel = (ep5 - ep50) / ep50;
        if (rf_rel < ep_rel) ++seeds_with_ordering;
        detail9 += "seed" + std::to_string(seed) + ": " + std::to_string(rf_rel) + " vs " + std::to_string(ep_rel) +
                   "; ";
    }

    // 9b: seed-averaged records over the six standard control cells, ranked
    std::vector<MetricRecord> records;
    for (auto& [variant, by_sampler] : cells)
        for (const SamplerConfig& sc : evaluation_sampler_settings()) {
            MetricRecord r;
            r.variant = variant;
            r.control = {"gaussmix2d", false, sc.id(), sc.steps};
            r.objective_a = by_sampler[sc.id()].first;
            r.objective_b = by_sampler[sc.id()].second;
            records.push_back(r);
        }
    std::vector<RankRow> rows = average_rank(records);
    size_t position = rows.size();
    for (size_t i = 0; i < rows.size(); ++i)
        if (rows[i].variant == "rf/lognorm(0.00,1.00)") position = i;
    bool ok9 = seeds_with_ordering >= 2 && position < 2;  // pinned: >= 2 of 3 seeds, top-2 rank
    report(9, "few-step robustness ordering and micro-study rank", ok9,
           detail9 + "rank position " + std::to_string(position + 1) + "/" + std::to_string(rows.size()));

    // 10: path straightness of the trained flows, 50-step trajectories
    auto straightness = [&](const std::string& label, uint64_t seed) {
        for (TrainedModel& tm : trained)
            if (tm.variant_label == label && tm.seed == seed) {
                Rng rng(seed * 31 + 5);
                std::vector<double> grid = time_grid(50);
                double ratio_sum = 0.0;
                int count = 0;
                for (int i = 0; i < 64; ++i) {
                    int cls = static_cast<int>(rng.index(6));
                    VelocityFn vf = guided_velocity(*tm.model, tm.variant, cls, 1.0);
                    Trajectory traj = euler_integrate(vf, initial_state(tm.variant.schedule, 2, rng), grid);
                    double ep = endpoint_distance(traj);
                    if (ep < 1e-9) continue;
                    ratio_sum += path_length(traj) / ep;
                    ++count;
                }
                return ratio_sum / count;
            }
        return std::numeric_limits<double>::quiet_NaN();
    };
    int seeds_straight = 0, seeds_ordered = 0;
    std::string detail10;
    for (uint64_t seed : seeds) {
        double rf_ratio = straightness("rf", seed);
        double eps_ratio = straightness("eps/linear", seed);
        if (rf_ratio < 1.10) ++seeds_straight;  // pinned: < 10% excess
        if (eps_ratio > rf_ratio) ++seeds_ordered;
        detail10 += "seed" + std::to_string(seed) + ": rf " + std::to_string(rf_ratio) + ", eps " +
                    std::to_string(eps_ratio) + "; ";
    }
    report(10, "trained linear-interpolant flows are near-straight", seeds_straight == 3 && seeds_ordered >= 2,
           detail10);
}

// ---- 11: ranking oracle -----------------------------------------------------------

void criterion_ranking() {
    Rng rng(1234);
    bool ok = true;
    for (int inst = 0; inst < 100 && ok; ++inst) {
        int n = 2 + static_cast<int>(rng.index(199));
        std::vector<MetricRecord> records;
        for (int i = 0; i < n; ++i) {
            MetricRecord r;
            r.variant = "v" + std::to_string(i);
            r.control = {"d", false, "s", 50};
            // quantize to provoke exact ties
            r.objective_a = std::floor(rng.uniform() * 20.0) / 20.0;
            r.objective_b = std::floor(rng.uniform() * 20.0) / 20.0;
            records.push_back(r);
        }
        std::vector<int> got = non_dominated_sort(records);
        std::vector<int> expect(records.size(), 1);
        bool changed = true;
        while (changed) {
            changed = false;
            for (size_t i = 0; i < records.size(); ++i)
                for (size_t j = 0; j < records.size(); ++j)
                    if (dominates(records[j], records[i]) && expect[i] < expect[j] + 1) {
                        expect[i] = expect[j] + 1;
                        changed = true;
                    }
        }
        for (size_t i = 0; i < records.size(); ++i)
            if (got[i] != expect[i]) ok = false;
    }
    report(11, "non-dominated sort matches brute force on random instances", ok);
}

// ---- 12: duplicate-detection trace ----------------------------------------------------

void criterion_dedup() {
    std::vector<std::vector<double>> vecs = {{0.0, 0.0}, {0.001, 0.0}, {0.0, 0.001}};
    bool ok = find_cluster_duplicates(vecs, {1, 2, 3}, 0.1) == std::set<long>{2, 3};

    // planted duplicates: 30% of points are jittered copies
    Rng rng(99);
    std::vector<EmbeddingRecord> corpus;
    long id = 0;
    int base = 700, dup = 300;
    for (int i = 0; i < base; ++i)
        corpus.push_back({id++, {rng.normal() * 20.0, rng.normal() * 20.0, rng.normal() * 20.0}, i % 8});
    for (int i = 0; i < dup; ++i) {
        EmbeddingRecord r = corpus[static_cast<size_t>(rng.index(static_cast<size_t>(base)))];
        r.id = id++;
        for (double& v : r.vector) v += rng.uniform(-1e-4, 1e-4);
        corpus.push_back(r);
    }
    auto rows = dedup_report(corpus, {0.01});
    double truth = static_cast<double>(dup) / (base + dup);
    double frac = rows[0].removed_fraction;
    ok = ok && std::fabs(frac - truth) < 0.01;  // pinned: within 1%
    report(12, "duplicate scan reproduces the worked example and planted fractions", ok,
           "removed fraction " + std::to_string(frac) + " vs " + std::to_string(truth));
}

// ---- 13: memorization cliques ---------------------------------------------------------

void criterion_memorization() {
    Rng rng(4096);
    bool ok = true;
    int side = 4;
    for (int inst = 0; inst < 100 && ok; ++inst) {
        // plant a 4-clique of near-identical images among 10 well-separated ones
        std::vector<std::vector<double>> images;
        std::set<int> planted;
        std::vector<double> proto(16);
        for (double& v : proto) v = rng.uniform();
        int offset = static_cast<int>(rng.index(7));
        for (int i = 0; i < 10; ++i) {
            if (i >= offset && i < offset + 4) {
                std::vector<double> img = proto;
                for (double& v : img) v += rng.uniform(-0.004, 0.004);
                images.push_back(img);
                planted.insert(i);
            } else {
                std::vector<double> img(16);
                for (double& v : img) v = rng.uniform() + 3.0 * (i + 1);
                images.push_back(img);
            }
        }
        if (detect_memorization(images, side, 2, 0.15, 3) != planted) ok = false;
        // the marked set grows monotonically with epsilon
        auto tight = detect_memorization(images, side, 2, 0.05, 3);
        auto loose = detect_memorization(images, side, 2, 0.60, 3);
        for (int m : tight)
            if (!loose.count(m)) ok = false;
    }
    report(13, "clique detector recovers planted memorization groups exactly", ok);
}

// ---- 14: variant grid -------------------------------------------------------------------

void criterion_grid() {
    auto grid = variant_grid();
    std::set<std::string> labels;
    for (auto& v : grid) labels.insert(v.label);
    bool ok = grid.size() == 61 && labels.size() == 61;
    for (const char* required :
         {"rf", "rf/lognorm(0.00,1.00)", "rf/lognorm(1.00,0.60)", "rf/mode(1.29)", "rf/mode(1.75)", "rf/cosmap",
          "eps/linear", "eps/cos", "v/linear", "v/cos", "edm(-1.20,1.20)", "edm(0.00,0.60)", "edm/rf", "edm/cos"})
        if (!labels.count(required)) ok = false;
    report(14, "study grid enumerates the 61 named formulations", ok,
           std::to_string(grid.size()) + " labels");
}

// ---- 15: command-line determinism ----------------------------------------------------------

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) return "<unreadable:" + path + ">";
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

void criterion_cli_determinism() {
    std::string cfg_path = "acceptance_train.json";
    std::ofstream cfg(cfg_path);
    cfg << R"json({"variant":"rf/lognorm(0.00,1.00)","dataset":"gaussmix2d","steps":200,"batch":64,)json"
        << R"json("warmup":50,"lr":0.002,"seed":424242,"val_every":50,"val_batch":64})json" << "\n";
    cfg.close();

    auto run = [&](const std::string& out_dir) {
        std::string cmd = std::string(FLOWLAB_CLI_PATH) + " train --config " + cfg_path + " --out " + out_dir +
                          " > /dev/null 2>&1";
        return std::system(cmd.c_str());
    };
    int rc1 = run("acceptance_run_a");
    int rc2 = run("acceptance_run_b");
    std::string a = slurp("acceptance_run_a/metrics.csv");
    std::string b = slurp("acceptance_run_b/metrics.csv");
    bool ok = rc1 == 0 && rc2 == 0 && !a.empty() && a == b;  // bitwise-identical CSV
    std::string ck_a = slurp("acceptance_run_a/model.ckpt");
    std::string ck_b = slurp("acceptance_run_b/model.ckpt");
    ok = ok && ck_a == ck_b;
    report(15, "seeded training runs reproduce artifacts bitwise", ok);
}

}  // namespace

int main() {
    auto t0 = std::chrono::steady_clock::now();
    criterion_densities();
    criterion_cosmap();
    criterion_shift();
    criterion_reparam();
    criterion_marginal_field();
    criterion_gradients();
    criterion_degeneracy();
    criterion_qk_bound();
    criterion_study();
    criterion_ranking();
    criterion_dedup();
    criterion_memorization();
    criterion_grid();
    criterion_cli_determinism();
    auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%d/15 criteria passed (%.1f s)\n", 15 - g_failures, secs);
    return g_failures == 0 ? 0 : 1;
}
