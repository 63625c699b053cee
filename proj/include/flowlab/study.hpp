#ifndef FLOWLAB_STUDY_HPP
#define FLOWLAB_STUDY_HPP

#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "flowlab/common.hpp"
#include "flowlab/evalrank.hpp"
#include "flowlab/sample.hpp"
#include "flowlab/train.hpp"
#include "flowlab/variants.hpp"

namespace flowlab {

// End-to-end comparison study: train a model per (variant, seed), sample it
// under each evaluation control cell, score with the toy metrics, and rank.

// Sampler-side time guard: model queries and prediction-space conversions are
// undefined exactly at the endpoints, so evaluation times are clamped inward.
inline double clamp_sample_time(double t) { return std::min(std::max(t, 1e-5), 1.0 - 1e-5); }

// Wraps a trained model as a plain velocity field z,t -> v with optional
// classifier-free guidance. Non-velocity prediction spaces are converted
// pointwise; guidance mixes conditional and unconditional fields.
inline VelocityFn guided_velocity(VectorFieldModel& model, const VariantSpec& variant, int label, double guidance) {
    const Schedule& sched = variant.schedule;
    Parameterization param = variant.parameterization;
    return [&model, sched, param, label, guidance](const std::vector<double>& z, double t) {
        double te = clamp_sample_time(t);
        auto eval = [&](bool conditioned) {
            Tensor out = model.predict_batch({z}, {te}, {label}, {conditioned});
            std::vector<double> pred(out.values().begin(), out.values().end());
            if (param != Parameterization::Velocity)
                pred = convert_prediction(pred, param, Parameterization::Velocity, z, te, sched);
            return pred;
        };
        std::vector<double> v_cond = eval(true);
        if (guidance == 1.0) return v_cond;
        return cfg_combine(v_cond, eval(false), guidance);
    };
}

// Initial noise at the grid start, scaled by the marginal std sqrt(a^2+b^2).
inline std::vector<double> initial_state(const Schedule& sched, int dims, Rng& rng) {
    double t1 = clamp_sample_time(1.0);
    double std1 = std::sqrt(sched.a(t1) * sched.a(t1) + sched.b(t1) * sched.b(t1));
    std::vector<double> z(static_cast<size_t>(dims));
    for (double& zi : z) zi = std1 * rng.normal();
    return z;
}

struct GeneratedSet {
    std::vector<std::vector<double>> samples;
    std::vector<int> classes;
};

inline GeneratedSet generate_samples(VectorFieldModel& model, const VariantSpec& variant, const SamplerConfig& sc,
                                     int n, int num_classes, Rng& rng) {
    GeneratedSet out;
    std::vector<double> grid = time_grid(sc.steps, sc.shift);
    for (int i = 0; i < n; ++i) {
        int label = static_cast<int>(rng.index(static_cast<size_t>(num_classes)));
        VelocityFn vf = guided_velocity(model, variant, label, sc.guidance);
        Trajectory traj = euler_integrate(vf, initial_state(variant.schedule, model.dims(), rng), grid);
        out.samples.push_back(traj.states.back());
        out.classes.push_back(label);
    }
    return out;
}

struct StudyConfig {
    std::vector<std::string> variants;
    std::vector<uint64_t> seeds{1, 2, 3};
    DatasetKind dataset = DatasetKind::GaussMix2D;
    int train_steps = 2000;
    int batch = 128;
    int eval_samples = 128;
    int reference_samples = 512;
    std::vector<SamplerConfig> samplers = evaluation_sampler_settings();
    bool with_raw_weights = true;  // evaluate both EMA and raw weights
};

namespace study_detail {

// Temporarily swaps a parameter registry's values (e.g. EMA weights) into the
// live model, restoring on destruction.
class WeightSwap {
public:
    WeightSwap(ParamStore& live, const ParamStore& replacement) : live_(live), saved_(live.clone()) {
        copy_values(live_, replacement);
    }
    ~WeightSwap() { copy_values(live_, saved_); }

private:
    static void copy_values(ParamStore& dst, const ParamStore& src) {
        require(dst.all().size() == src.all().size(), "WeightSwap: registry size mismatch");
        auto it = dst.all().begin();
        auto jt = src.all().begin();
        for (; it != dst.all().end(); ++it, ++jt) {
            require(it->first == jt->first, "WeightSwap: registry mismatch at '" + it->first + "'");
            it->second.values() = jt->second.values();
        }
    }

    ParamStore& live_;
    ParamStore saved_;
};

}  // namespace study_detail

// Train every (variant, seed), evaluate each control cell, and average the
// two objectives over seeds into one record per (variant, control cell).
inline std::vector<MetricRecord> run_micro_study(const StudyConfig& cfg, std::ostream* log = nullptr) {
    require(!cfg.variants.empty(), "run_micro_study: no variants");
    require(!cfg.seeds.empty(), "run_micro_study: no seeds");
    ToyDataset dataset;
    dataset.kind = cfg.dataset;
    require(dataset.kind != DatasetKind::ShapesImage, "run_micro_study: 2D datasets only");

    Rng ref_rng(777);
    std::vector<std::vector<double>> reference;
    std::vector<int> ref_classes;
    for (const DataSample& s : dataset.batch(cfg.reference_samples, ref_rng)) {
        reference.push_back(s.x);
        ref_classes.push_back(s.label);
    }

    // accumulate objective sums: (variant, control key) -> (sum_a, sum_b, record template)
    std::map<std::string, MetricRecord> acc;
    std::map<std::string, int> counts;

    for (const std::string& label : cfg.variants) {
        VariantSpec variant = parse_variant(label);
        for (uint64_t seed : cfg.seeds) {
            if (log) *log << "train " << label << " seed " << seed << "\n" << std::flush;
            Rng init_rng(seed);
            MlpVelocityModel model(dataset.dims(), dataset.num_classes, init_rng);
            TrainConfig tc;
            tc.variant = label;
            tc.dataset = cfg.dataset;
            tc.batch = cfg.batch;
            tc.steps = cfg.train_steps;
            tc.seed = seed;
            TrainResult res = train_loop(model, variant, dataset, tc);

            for (int use_ema : {1, 0}) {
                if (!use_ema && !cfg.with_raw_weights) continue;
                std::unique_ptr<study_detail::WeightSwap> swap;
                if (use_ema) swap = std::make_unique<study_detail::WeightSwap>(model.params(), res.ema);
                for (const SamplerConfig& sc : cfg.samplers) {
                    Rng gen_rng(seed * 7919 + static_cast<uint64_t>(sc.steps) * 131 +
                                static_cast<uint64_t>(sc.guidance * 10));
                    GeneratedSet gen =
                        generate_samples(model, variant, sc, cfg.eval_samples, dataset.num_classes, gen_rng);
                    ToyMetrics m = toy_metrics(gen.samples, gen.classes, reference, ref_classes);

                    MetricRecord rec;
                    rec.variant = label;
                    rec.control.dataset = ToyDataset::name(cfg.dataset);
                    rec.control.ema = use_ema != 0;
                    rec.control.sampler_id = sc.id();
                    rec.control.sampler_steps = sc.steps;
                    rec.objective_a = m.fidelity;
                    rec.objective_b = m.w2;
                    std::string key = label + "|" + rec.control.key();
                    auto [it, fresh] = acc.emplace(key, rec);
                    if (!fresh) {
                        it->second.objective_a += m.fidelity;
                        it->second.objective_b += m.w2;
                    }
                    counts[key] += 1;
                }
            }
        }
    }

    std::vector<MetricRecord> records;
    for (auto& [key, rec] : acc) {
        rec.objective_a /= counts[key];
        rec.objective_b /= counts[key];
        records.push_back(rec);
    }
    return records;
}

inline void write_metrics_csv(const std::vector<MetricRecord>& records, std::ostream& os) {
    os << "variant,dataset,weights,sampler,steps,fidelity,w2\n";
    for (const MetricRecord& r : records)
        os << r.variant << ',' << r.control.dataset << ',' << (r.control.ema ? "ema" : "raw") << ','
           << r.control.sampler_id << ',' << r.control.sampler_steps << ',' << format_double(r.objective_a) << ','
           << format_double(r.objective_b) << "\n";
}

inline void write_rank_csv(const std::vector<RankRow>& rows, std::ostream& os) {
    os << "variant,avg_rank,avg_rank_5step,avg_rank_50step,completeness\n";
    for (const RankRow& r : rows)
        os << r.variant << ',' << format_double(r.avg_all) << ',' << format_double(r.avg_5step) << ','
           << format_double(r.avg_50step) << ',' << format_double(r.completeness) << "\n";
}

// Scatter of one control cell's records in objective space; Pareto-front
// members are drawn larger and in a highlight color.
inline void write_scatter_svg(const std::vector<MetricRecord>& records, std::ostream& os) {
    require(!records.empty(), "write_scatter_svg: no records");
    double min_a = records[0].objective_a, max_a = min_a;
    double min_b = records[0].objective_b, max_b = min_b;
    for (const MetricRecord& r : records) {
        min_a = std::min(min_a, r.objective_a);
        max_a = std::max(max_a, r.objective_a);
        min_b = std::min(min_b, r.objective_b);
        max_b = std::max(max_b, r.objective_b);
    }
    double pad_a = (max_a - min_a) * 0.08 + 1e-12;
    double pad_b = (max_b - min_b) * 0.08 + 1e-12;
    min_a -= pad_a;
    max_a += pad_a;
    min_b -= pad_b;
    max_b += pad_b;

    const double W = 640, H = 480, ml = 60, mb = 40, mt = 20, mr = 20;
    auto px = [&](double b) { return ml + (b - min_b) / (max_b - min_b) * (W - ml - mr); };
    auto py = [&](double a) { return H - mb - (a - min_a) / (max_a - min_a) * (H - mt - mb); };

    std::vector<size_t> front = pareto_front_indices(records);
    std::vector<bool> on_front(records.size(), false);
    for (size_t i : front) on_front[i] = true;

    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << (W / 2) << "\" y=\"" << (H - 8) << "\" text-anchor=\"middle\" font-size=\"13\">"
       << "distribution distance (lower better)</text>\n";
    os << "<text x=\"14\" y=\"" << (H / 2) << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 14 "
       << (H / 2) << ")\">fidelity (higher better)</text>\n";
    for (size_t i = 0; i < records.size(); ++i) {
        const MetricRecord& r = records[i];
        os << "<circle cx=\"" << px(r.objective_b) << "\" cy=\"" << py(r.objective_a) << "\" r=\""
           << (on_front[i] ? 6 : 3.5) << "\" fill=\"" << (on_front[i] ? "#d62728" : "#1f77b4")
           << "\" fill-opacity=\"0.85\"><title>" << r.variant << " [" << r.control.key() << "]</title></circle>\n";
    }
    os << "</svg>\n";
}

}  // namespace flowlab

#endif
