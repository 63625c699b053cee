// flowlab: training, sampling, density inspection, ranking studies, the
// shift study, and data-hygiene reports behind one executable.
//
// Exit codes: 0 success, 2 config error, 3 numerical fault, 4 I/O error.
// FLOWLAB_SEED overrides any config-file seed.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "flowlab/dataguard.hpp"
#include "flowlab/evalrank.hpp"
#include "flowlab/sample.hpp"
#include "flowlab/study.hpp"
#include "flowlab/train.hpp"
#include "flowlab/variants.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flowlab;

namespace {

struct RunManifest {
    std::string command;
    std::string config_path;
    uint64_t seed = 0;
    std::string output_dir;
    std::string config_hash;

    json to_json() const {
        std::time_t now = std::time(nullptr);
        char ts[32];
        std::strftime(ts, sizeof(ts), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
        return json{{"command", command}, {"config_path", config_path},   {"seed", seed},
                    {"output_dir", output_dir}, {"config_hash", config_hash}, {"timestamp", ts}};
    }
};

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read '" + path + "'");
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write '" + path + "'");
    os << content;
    if (!os) throw IoError("write failed for '" + path + "'");
}

json load_config(const std::string& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ParameterError("config '" + path + "': " + e.what());
    }
}

// FLOWLAB_SEED takes precedence over any configured seed.
uint64_t effective_seed(uint64_t config_seed) {
    if (const char* env = std::getenv("FLOWLAB_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw ParameterError("FLOWLAB_SEED: not an unsigned integer: '" + std::string(env) + "'");
        }
    }
    return config_seed;
}

RunManifest start_run(const std::string& command, const std::string& config_path, const std::string& config_text,
                      uint64_t seed, const std::string& out_dir) {
    RunManifest m;
    m.command = command;
    m.config_path = config_path;
    m.seed = seed;
    m.output_dir = out_dir;
    m.config_hash = fnv1a_hex(config_text + "|seed=" + std::to_string(seed));
    fs::create_directories(out_dir);
    write_file(out_dir + "/manifest.json", m.to_json().dump(2) + "\n");
    return m;
}

std::string csv_banner(const RunManifest& m) { return "# manifest: " + m.config_hash + "\n"; }

// Banner for single-file artifacts that have no run directory: the hash
// covers a canonical rendering of the effective parameters.
std::string inline_banner(const std::string& canonical_config, uint64_t seed = 0) {
    return "# manifest: " + fnv1a_hex(canonical_config + "|seed=" + std::to_string(seed)) + "\n";
}

DatasetKind parse_dataset(const std::string& name) {
    if (name == "gaussmix2d") return DatasetKind::GaussMix2D;
    if (name == "checkerboard2d") return DatasetKind::Checkerboard2D;
    if (name == "shapesimage") return DatasetKind::ShapesImage;
    throw ParameterError("dataset: unknown '" + name + "' (expected gaussmix2d, checkerboard2d or shapesimage)");
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig tc;
    tc.variant = j.value("variant", tc.variant);
    tc.dataset = parse_dataset(j.value("dataset", "gaussmix2d"));
    tc.batch = j.value("batch", tc.batch);
    tc.steps = j.value("steps", tc.steps);
    tc.lr = j.value("lr", tc.lr);
    tc.warmup = j.value("warmup", tc.warmup);
    tc.ema_decay = j.value("ema_decay", tc.ema_decay);
    tc.ema_every = j.value("ema_every", tc.ema_every);
    tc.cfg_drop = j.value("cfg_drop", tc.cfg_drop);
    tc.adam_eps = j.value("adam_eps", tc.adam_eps);
    tc.weight_decay = j.value("weight_decay", tc.weight_decay);
    tc.seed = effective_seed(j.value("seed", tc.seed));
    tc.val_every = j.value("val_every", tc.val_every);
    tc.val_batch = j.value("val_batch", tc.val_batch);
    tc.val_levels = j.value("val_levels", tc.val_levels);
    return tc;
}

std::unique_ptr<VectorFieldModel> build_model(const ToyDataset& dataset, const json& cfg, uint64_t seed) {
    Rng init_rng(seed ^ 0xabcdef1234567890ull);
    if (dataset.kind == DatasetKind::ShapesImage) {
        ModelConfig mc;
        mc.depth = cfg.value("model_depth", 2);
        mc.latent_channels = 1;
        mc.pos_S = dataset.image_side * 16;  // latent grid == image grid
        mc.pos_H_max = mc.pos_S;
        mc.pos_W_max = mc.pos_S;
        mc.vocab = 8;
        return std::make_unique<MMDiTImageModel>(mc, dataset.image_side, init_rng);
    }
    return std::make_unique<MlpVelocityModel>(dataset.dims(), dataset.num_classes, init_rng);
}

void copy_weights(ParamStore& dst, const ParamStore& src, const std::string& what) {
    require(dst.all().size() == src.all().size(), what + ": parameter registry size mismatch");
    auto it = dst.all().begin();
    auto jt = src.all().begin();
    for (; it != dst.all().end(); ++it, ++jt) {
        require(it->first == jt->first && it->second.size() == jt->second.size(),
                what + ": parameter mismatch at '" + it->first + "'");
        it->second.values() = jt->second.values();
    }
}

// ---- train -----------------------------------------------------------------

ParamStore trainer_state_to_store(const TrainerState& st, const ParamStore& params) {
    ParamStore out;
    for (auto& [name, t] : params.all()) out.add("param." + name, Tensor::from_values(t.shape(), t.values()));
    for (auto& [name, t] : st.ema.all()) out.add("ema." + name, Tensor::from_values(t.shape(), t.values()));
    for (auto& [name, v] : st.m1) out.add("m1." + name, Tensor::from_values({static_cast<int>(v.size())}, v));
    for (auto& [name, v] : st.m2) out.add("m2." + name, Tensor::from_values({static_cast<int>(v.size())}, v));
    return out;
}

void trainer_state_from_store(const ParamStore& store, ParamStore& params, TrainerState& st) {
    st.ema = params.clone();
    for (auto& [name, t] : store.all()) {
        if (name.rfind("param.", 0) == 0)
            params.at(name.substr(6)).values() = t.values();
        else if (name.rfind("ema.", 0) == 0)
            st.ema.at(name.substr(4)).values() = t.values();
        else if (name.rfind("m1.", 0) == 0)
            st.m1[name.substr(3)] = t.values();
        else if (name.rfind("m2.", 0) == 0)
            st.m2[name.substr(3)] = t.values();
        else
            throw IoError("resume: unrecognized entry '" + name + "' in checkpoint");
    }
}

int cmd_train(const std::string& config_path, const std::string& out_dir, const std::string& resume_dir) {
    json cfg = load_config(config_path);
    TrainConfig tc = train_config_from_json(cfg);
    VariantSpec variant = parse_variant(tc.variant);

    RunManifest manifest = start_run("train", config_path, cfg.dump(), tc.seed, out_dir);
    write_file(out_dir + "/config.json", cfg.dump(2) + "\n");

    ToyDataset dataset;
    dataset.kind = tc.dataset;
    if (dataset.kind == DatasetKind::ShapesImage) dataset.num_classes = 3;
    std::unique_ptr<VectorFieldModel> model = build_model(dataset, cfg, tc.seed);

    TrainerState state;
    if (!resume_dir.empty()) {
        ParamStore store = load_checkpoint(resume_dir + "/state.ckpt");
        json side = load_config(resume_dir + "/state.json");
        state.initialized = true;
        state.step = side.at("step").get<int>();
        state.opt_steps = side.at("opt_steps").get<long>();
        state.rng_state = side.at("rng_state").get<std::string>();
        trainer_state_from_store(store, model->params(), state);
    }

    std::ostringstream metrics;
    if (state.initialized && fs::exists(resume_dir + "/metrics.csv") && resume_dir == out_dir)
        metrics << read_file(resume_dir + "/metrics.csv");
    else
        metrics << csv_banner(manifest);

    train_loop(*model, variant, dataset, tc, &metrics, &state);

    write_file(out_dir + "/metrics.csv", metrics.str());
    save_checkpoint(out_dir + "/model.ckpt", model->params());
    save_checkpoint(out_dir + "/ema.ckpt", state.ema);
    save_checkpoint(out_dir + "/state.ckpt", trainer_state_to_store(state, model->params()));
    json side{{"step", state.step},
              {"opt_steps", state.opt_steps},
              {"rng_state", state.rng_state},
              {"manifest", manifest.config_hash}};
    write_file(out_dir + "/state.json", side.dump(2) + "\n");
    std::cout << "trained " << tc.variant << " for " << tc.steps << " steps -> " << out_dir << "\n";
    return 0;
}

// ---- sample ----------------------------------------------------------------

int cmd_sample(const std::string& run_dir, const std::string& out_path, int n, int steps, double guidance,
               double shift, bool use_ema, uint64_t seed_flag) {
    json cfg = load_config(run_dir + "/config.json");
    TrainConfig tc = train_config_from_json(cfg);
    uint64_t seed = effective_seed(seed_flag);
    VariantSpec variant = parse_variant(tc.variant);

    ToyDataset dataset;
    dataset.kind = tc.dataset;
    if (dataset.kind == DatasetKind::ShapesImage) dataset.num_classes = 3;
    std::unique_ptr<VectorFieldModel> model = build_model(dataset, cfg, tc.seed);
    ParamStore weights = load_checkpoint(run_dir + (use_ema ? "/ema.ckpt" : "/model.ckpt"));
    copy_weights(model->params(), weights, "sample");

    SamplerConfig sc{steps, guidance, shift};
    Rng rng(seed);
    GeneratedSet gen = generate_samples(*model, variant, sc, n, dataset.num_classes, rng);

    if (dataset.kind == DatasetKind::ShapesImage) {
        // PGM stack: one P2 image per sample, concatenated.
        std::ostringstream os;
        int side = dataset.image_side;
        for (size_t i = 0; i < gen.samples.size(); ++i) {
            os << "P2\n# class " << gen.classes[i] << "\n" << side << ' ' << side << "\n255\n";
            for (int y = 0; y < side; ++y) {
                for (int x = 0; x < side; ++x) {
                    double v = gen.samples[i][static_cast<size_t>(y * side + x)];
                    int g = static_cast<int>(std::lround((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5));
                    os << g << (x + 1 == side ? "" : " ");
                }
                os << "\n";
            }
        }
        write_file(out_path, os.str());
    } else {
        std::ostringstream os;
        {
            std::ostringstream c;
            c << "sample|run=" << run_dir << "|n=" << n << "|steps=" << steps << "|guidance=" << format_double(guidance)
              << "|shift=" << format_double(shift) << "|ema=" << use_ema;
            os << inline_banner(c.str(), seed);
        }
        os << "x,y,class\n";
        for (size_t i = 0; i < gen.samples.size(); ++i)
            os << format_double(gen.samples[i][0]) << ',' << format_double(gen.samples[i][1]) << ','
               << gen.classes[i] << "\n";
        write_file(out_path, os.str());
    }
    std::cout << "wrote " << n << " samples -> " << out_path << "\n";
    return 0;
}

// ---- rank ------------------------------------------------------------------

int cmd_rank(const std::string& config_path, const std::string& out_dir, bool dry_run) {
    json cfg = load_config(config_path);
    StudyConfig sc;
    if (cfg.contains("variants"))
        sc.variants = cfg.at("variants").get<std::vector<std::string>>();
    else
        for (const VariantSpec& v : variant_grid()) sc.variants.push_back(v.label);
    if (cfg.contains("seeds")) sc.seeds = cfg.at("seeds").get<std::vector<uint64_t>>();
    sc.dataset = parse_dataset(cfg.value("dataset", "gaussmix2d"));
    sc.train_steps = cfg.value("train_steps", sc.train_steps);
    sc.batch = cfg.value("batch", sc.batch);
    sc.eval_samples = cfg.value("eval_samples", sc.eval_samples);
    sc.reference_samples = cfg.value("reference_samples", sc.reference_samples);
    require(!sc.variants.empty(), "rank: empty study (no variants)");
    for (const std::string& v : sc.variants) parse_variant(v);  // fail fast on bad labels

    RunManifest manifest = start_run("rank", config_path, cfg.dump(), 0, out_dir);

    if (dry_run) {
        // enumerate planned control cells (datasets x weights x samplers = 24)
        std::ostringstream os;
        os << csv_banner(manifest) << "variant,dataset,weights,sampler\n";
        size_t cells = 0;
        for (const std::string& v : sc.variants)
            for (const char* ds : {"gaussmix2d", "checkerboard2d"})
                for (const char* w : {"ema", "raw"})
                    for (const SamplerConfig& s : evaluation_sampler_settings()) {
                        os << v << ',' << ds << ',' << w << ',' << s.id() << "\n";
                        ++cells;
                    }
        write_file(out_dir + "/planned_cells.csv", os.str());
        std::cout << "planned " << sc.variants.size() << " variants x " << cells / sc.variants.size()
                  << " control cells = " << cells << " cells -> " << out_dir << "/planned_cells.csv\n";
        return 0;
    }

    std::vector<MetricRecord> records = run_micro_study(sc, &std::cout);
    std::vector<RankRow> rows = average_rank(records);

    std::ostringstream mcsv;
    mcsv << csv_banner(manifest);
    write_metrics_csv(records, mcsv);
    write_file(out_dir + "/metrics.csv", mcsv.str());

    std::ostringstream rcsv;
    rcsv << csv_banner(manifest);
    write_rank_csv(rows, rcsv);
    write_file(out_dir + "/rank.csv", rcsv.str());

    std::ostringstream svg;
    svg << "<!-- manifest: " << manifest.config_hash << " -->\n";
    write_scatter_svg(records, svg);
    write_file(out_dir + "/pareto.svg", svg.str());

    std::cout << "variant ranks (lower is better):\n";
    for (const RankRow& r : rows)
        std::cout << "  " << r.variant << "  avg " << r.avg_all << "  (5-step " << r.avg_5step << ", 50-step "
                  << r.avg_50step << ")\n";
    return 0;
}

// ---- shift-study -----------------------------------------------------------

int cmd_shift_study(std::vector<double> alphas, double base_pixels, const std::vector<double>& pixels, int points,
                    const std::string& out_path) {
    for (double m : pixels) alphas.push_back(std::sqrt(m / base_pixels));
    if (std::find(alphas.begin(), alphas.end(), 3.0) == alphas.end()) alphas.push_back(3.0);
    for (double a : alphas) require(a > 0.0, "shift-study: alpha must be positive");
    require(points >= 2, "shift-study: need at least 2 grid points");

    Schedule rf = Schedule::rf();
    std::ostringstream os;
    {
        std::ostringstream cfg;
        cfg << "shift-study|base_pixels=" << format_double(base_pixels) << "|points=" << points << "|alphas=";
        for (double a : alphas) cfg << format_double(a) << ';';
        os << inline_banner(cfg.str());
    }
    os << "alpha,paper_default,t,t_shifted,log_snr_shift,sigma_source,sigma_shifted\n";
    for (double alpha : alphas) {
        double n = base_pixels;
        double m = alpha * alpha * n;
        for (int k = 0; k < points; ++k) {
            double t = static_cast<double>(k + 1) / (points + 1);
            double ts = shift_time_alpha(t, alpha);
            double dlam = rf.snr(ts).lambda - rf.snr(t).lambda;
            os << format_double(alpha) << ',' << (alpha == 3.0 ? 1 : 0) << ',' << format_double(t) << ','
               << format_double(ts) << ',' << format_double(dlam) << ',' << format_double(uncertainty_sigma(t, n))
               << ',' << format_double(uncertainty_sigma(ts, m)) << "\n";
        }
    }
    write_file(out_path, os.str());
    std::cout << "wrote shift study (" << alphas.size() << " alphas x " << points << " points) -> " << out_path
              << "\n";
    return 0;
}

// ---- densities dump ----------------------------------------------------------

int cmd_densities_dump(const std::string& label, int points, const std::string& out_path) {
    VariantSpec v = parse_variant(label);
    require(points >= 2, "densities: need at least 2 grid points");
    std::ostringstream os;
    os << inline_banner("densities|variant=" + v.label + "|points=" + std::to_string(points));
    os << "variant,t,a,b,lambda,lambda_prime,weight\n";
    for (int k = 0; k < points; ++k) {
        double t = static_cast<double>(k + 1) / (points + 1);
        SnrPoint sp = v.schedule.snr(t);
        os << v.label << ',' << format_double(t) << ',' << format_double(v.schedule.a(t)) << ','
           << format_double(v.schedule.b(t)) << ',' << format_double(sp.lambda) << ','
           << format_double(sp.lambda_prime) << ',' << format_double(loss_weight(v.weighting, v.schedule, t))
           << "\n";
    }
    if (out_path.empty())
        std::cout << os.str();
    else {
        write_file(out_path, os.str());
        std::cout << "wrote density table -> " << out_path << "\n";
    }
    return 0;
}

// ---- dedup / memcheck --------------------------------------------------------

std::vector<std::vector<double>> read_vector_csv(const std::string& path, std::vector<long>& ids) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read corpus '" + path + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> vals;
        bool first = true;
        long id = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                if (first) {
                    id = std::stol(cell);
                    first = false;
                } else {
                    vals.push_back(std::stod(cell));
                }
            } catch (const std::exception&) {
                throw IoError(path + ":" + std::to_string(lineno) + ": malformed cell '" + cell + "'");
            }
        }
        if (first) throw IoError(path + ":" + std::to_string(lineno) + ": empty row");
        if (!rows.empty() && vals.size() != rows[0].size())
            throw IoError(path + ":" + std::to_string(lineno) + ": inconsistent column count");
        ids.push_back(id);
        rows.push_back(std::move(vals));
    }
    return rows;
}

int cmd_dedup(const std::string& corpus_path, int clusters, std::vector<double> thresholds, uint64_t seed,
              const std::string& out_path) {
    std::vector<long> ids;
    std::vector<std::vector<double>> vecs = read_vector_csv(corpus_path, ids);
    if (thresholds.empty()) thresholds = {0.05, 0.1, 0.2, 0.4, 0.8};
    std::sort(thresholds.begin(), thresholds.end());

    std::ostringstream os;
    {
        std::ostringstream cfg;
        cfg << "dedup|corpus=" << corpus_path << "|clusters=" << clusters << "|thresholds=";
        for (double t : thresholds) cfg << format_double(t) << ';';
        os << inline_banner(cfg.str(), effective_seed(seed));
    }
    os << "threshold,removed,removed_fraction\n";
    if (vecs.empty()) {
        write_file(out_path, os.str());
        std::cout << "empty corpus -> empty report " << out_path << "\n";
        return 0;
    }

    Rng rng(effective_seed(seed));
    std::vector<int> assign(vecs.size(), 0);
    if (clusters > 1 && vecs.size() >= static_cast<size_t>(clusters))
        assign = cluster_embeddings(vecs, clusters, rng);
    std::vector<EmbeddingRecord> corpus;
    for (size_t i = 0; i < vecs.size(); ++i) corpus.push_back({ids[i], vecs[i], assign[i]});

    for (const DedupRow& row : dedup_report(corpus, thresholds))
        os << format_double(row.threshold) << ',' << row.removed << ',' << format_double(row.removed_fraction)
           << "\n";
    write_file(out_path, os.str());
    std::cout << "dedup report (" << thresholds.size() << " thresholds, " << vecs.size() << " items) -> " << out_path
              << "\n";
    return 0;
}

int cmd_memcheck(const std::string& corpus_path, int side, int tiles, std::vector<double> epsilons,
                 int clique_threshold, const std::string& out_path) {
    std::vector<long> ids;
    std::vector<std::vector<double>> images = read_vector_csv(corpus_path, ids);
    if (epsilons.empty()) epsilons = {0.15};
    std::sort(epsilons.begin(), epsilons.end());

    std::ostringstream os;
    {
        std::ostringstream cfg;
        cfg << "memcheck|corpus=" << corpus_path << "|side=" << side << "|tiles=" << tiles
            << "|clique=" << clique_threshold << "|epsilons=";
        for (double e : epsilons) cfg << format_double(e) << ';';
        os << inline_banner(cfg.str());
    }
    os << "epsilon,marked,marked_ids\n";
    for (double eps : epsilons) {
        std::set<int> marked =
            images.size() < 2 ? std::set<int>{} : detect_memorization(images, side, tiles, eps, clique_threshold);
        os << format_double(eps) << ',' << marked.size() << ',';
        bool first = true;
        for (int node : marked) {
            os << (first ? "" : ";") << ids[static_cast<size_t>(node)];
            first = false;
        }
        os << "\n";
    }
    write_file(out_path, os.str());
    std::cout << "memorization report (" << epsilons.size() << " epsilons, " << images.size() << " images) -> "
              << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flow-matching laboratory: schedules, densities, MM-DiT training, sampling, ranking studies and "
                 "data hygiene"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "Train a model from a JSON config; writes checkpoint + metrics CSV");
    std::string train_cfg, train_out = "run", resume_dir;
    train->add_option("--config", train_cfg, "JSON training config")->required();
    train->add_option("--out", train_out, "Output directory");
    train->add_option("--resume", resume_dir, "Run directory holding state.ckpt/state.json to resume from");

    // sample
    auto* sample = app.add_subcommand("sample", "Sample a trained run; CSV point cloud (2D) or PGM stack (images)");
    std::string sample_run, sample_out = "samples.csv";
    int sample_n = 256, sample_steps = 50;
    double sample_cfg = 1.0, sample_shift = 1.0;
    bool sample_ema = false;
    uint64_t sample_seed = 0;
    sample->add_option("--run", sample_run, "Training run directory")->required();
    sample->add_option("--out", sample_out, "Output file");
    sample->add_option("--n", sample_n, "Number of samples");
    sample->add_option("--steps", sample_steps, "Euler steps");
    sample->add_option("--guidance", sample_cfg, "Classifier-free guidance scale");
    sample->add_option("--shift", sample_shift, "Timestep shift alpha");
    sample->add_flag("--ema", sample_ema, "Use EMA weights");
    sample->add_option("--seed", sample_seed, "Sampling seed");

    // rank
    auto* rank = app.add_subcommand("rank", "Train/evaluate a variant study and rank by non-dominated sorting");
    std::string rank_cfg, rank_out = "study";
    bool dry_run = false;
    rank->add_option("--config", rank_cfg, "JSON study config")->required();
    rank->add_option("--out", rank_out, "Output directory");
    rank->add_flag("--dry-run", dry_run, "Only enumerate planned (variant x control cell) work");

    // shift-study
    auto* shift = app.add_subcommand("shift-study", "Tabulate timestep shifting and uncertainty curves");
    std::vector<double> alphas, pixels;
    double base_pixels = 1024.0;
    int shift_points = 19;
    std::string shift_out = "shift_study.csv";
    shift->add_option("--alphas", alphas, "Shift values (alpha = sqrt(m/n)); 3.0 is always included");
    shift->add_option("--base-pixels", base_pixels, "Source resolution pixel count n");
    shift->add_option("--pixels", pixels, "Target pixel counts m (converted to alphas)");
    shift->add_option("--points", shift_points, "Interior grid points in t");
    shift->add_option("--out", shift_out, "Output CSV");

    // densities dump
    auto* densities = app.add_subcommand("densities", "Inspect schedule/density tables");
    auto* dump = densities->add_subcommand("dump", "Serialize (t, a, b, lambda, lambda', weight) as CSV");
    std::string dens_variant = "rf/lognorm(0.00,1.00)", dens_out;
    int dens_points = 99;
    dump->add_option("--variant", dens_variant, "Variant label, e.g. rf/lognorm(0.00,1.00)");
    dump->add_option("--points", dens_points, "Interior grid points");
    dump->add_option("--out", dens_out, "Output CSV (stdout when omitted)");
    densities->require_subcommand(1);

    // dedup
    auto* dedup = app.add_subcommand("dedup", "Cluster-scoped near-duplicate report over an embedding corpus");
    std::string dedup_corpus, dedup_out = "dedup_report.csv";
    int dedup_clusters = 4;
    std::vector<double> dedup_thresholds;
    uint64_t dedup_seed = 0;
    dedup->add_option("--corpus", dedup_corpus, "CSV corpus: id,v0,v1,...")->required();
    dedup->add_option("--clusters", dedup_clusters, "k-means cluster count");
    dedup->add_option("--thresholds", dedup_thresholds, "Distance thresholds to sweep");
    dedup->add_option("--seed", dedup_seed, "Clustering seed");
    dedup->add_option("--out", dedup_out, "Output CSV");

    // memcheck
    auto* memcheck = app.add_subcommand("memcheck", "Memorization-clique report over generated images");
    std::string mem_corpus, mem_out = "memcheck_report.csv";
    int mem_side = 16, mem_tiles = 4, mem_T = 10;
    std::vector<double> mem_eps;
    memcheck->add_option("--corpus", mem_corpus, "CSV corpus: id,pixel0,pixel1,... (row-major square images)")
        ->required();
    memcheck->add_option("--side", mem_side, "Image side length");
    memcheck->add_option("--tiles", mem_tiles, "Tiles per side for the tiled distance");
    memcheck->add_option("--epsilon", mem_eps, "Similarity thresholds to sweep");
    memcheck->add_option("--clique", mem_T, "Minimum clique size marking memorization");
    memcheck->add_option("--out", mem_out, "Output CSV");

    try {
        app.parse(argc, argv);
        if (*train) return cmd_train(train_cfg, train_out, resume_dir);
        if (*sample)
            return cmd_sample(sample_run, sample_out, sample_n, sample_steps, sample_cfg, sample_shift, sample_ema,
                              sample_seed);
        if (*rank) return cmd_rank(rank_cfg, rank_out, dry_run);
        if (*shift) return cmd_shift_study(alphas, base_pixels, pixels, shift_points, shift_out);
        if (*densities) return cmd_densities_dump(dens_variant, dens_points, dens_out);
        if (*dedup) return cmd_dedup(dedup_corpus, dedup_clusters, dedup_thresholds, dedup_seed, dedup_out);
        if (*memcheck) return cmd_memcheck(mem_corpus, mem_side, mem_tiles, mem_eps, mem_T, mem_out);
        return 2;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const NumericalFault& e) {
        std::cerr << "numerical fault: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
