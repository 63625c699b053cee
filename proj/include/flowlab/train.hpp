#ifndef FLOWLAB_TRAIN_HPP
#define FLOWLAB_TRAIN_HPP

#include <cmath>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "flowlab/common.hpp"
#include "flowlab/mmdit.hpp"
#include "flowlab/tensor.hpp"
#include "flowlab/timesamplers.hpp"
#include "flowlab/trajectories.hpp"
#include "flowlab/variants.hpp"

namespace flowlab {

// Conditional flow matching training over any (schedule, density,
// parameterization) triple, with AdamW, EMA, CFG dropout and stratified
// validation.

struct DataSample {
    std::vector<double> x;
    int label = 0;
};

enum class DatasetKind { Checkerboard2D, GaussMix2D, ShapesImage };

struct ToyDataset {
    DatasetKind kind = DatasetKind::GaussMix2D;
    int num_classes = 6;
    int image_side = 16;  // ShapesImage only

    int dims() const { return kind == DatasetKind::ShapesImage ? image_side * image_side : 2; }

    DataSample draw(Rng& rng) const {
        switch (kind) {
            case DatasetKind::GaussMix2D: {
                int k = static_cast<int>(rng.index(static_cast<size_t>(num_classes)));
                double ang = 2.0 * M_PI * k / num_classes;
                double r = 1.5;
                return {{r * std::cos(ang) + 0.15 * rng.normal(), r * std::sin(ang) + 0.15 * rng.normal()}, k};
            }
            case DatasetKind::Checkerboard2D: {
                // rejection-free: pick a black cell of a 4x4 board on [-2,2]^2
                int cx = static_cast<int>(rng.index(4));
                int parity = static_cast<int>(rng.index(2));
                int cy = 2 * static_cast<int>(rng.index(2)) + ((cx + parity) % 2);
                double x = -2.0 + cx + rng.uniform();
                double y = -2.0 + cy + rng.uniform();
                return {{x, y}, (cx * 4 + cy) % num_classes};
            }
            case DatasetKind::ShapesImage: return draw_shape(rng);
        }
        return {};
    }

    std::vector<DataSample> batch(int n, Rng& rng) const {
        std::vector<DataSample> out;
        out.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) out.push_back(draw(rng));
        return out;
    }

    static const char* name(DatasetKind k) {
        switch (k) {
            case DatasetKind::Checkerboard2D: return "checkerboard2d";
            case DatasetKind::GaussMix2D: return "gaussmix2d";
            case DatasetKind::ShapesImage: return "shapesimage";
        }
        return "?";
    }

private:
    // 16x16 grayscale in [-1,1]: class 0 circle, 1 square, 2 triangle, with
    // +-2 pixel center jitter. Generator constants: radius 4, half-side 4.
    DataSample draw_shape(Rng& rng) const {
        int side = image_side;
        int cls = static_cast<int>(rng.index(3));
        double cx = side / 2.0 + rng.uniform(-2.0, 2.0);
        double cy = side / 2.0 + rng.uniform(-2.0, 2.0);
        std::vector<double> img(static_cast<size_t>(side * side), -1.0);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) {
                double dx = x - cx, dy = y - cy;
                bool inside = false;
                if (cls == 0) inside = dx * dx + dy * dy <= 16.0;
                else if (cls == 1) inside = std::fabs(dx) <= 4.0 && std::fabs(dy) <= 4.0;
                else inside = dy >= -4.0 && dy <= 4.0 && std::fabs(dx) <= (dy + 4.0) / 2.0;
                if (inside) img[static_cast<size_t>(y * side + x)] = 1.0;
            }
        return {std::move(img), cls};
    }
};

// Anything trainable by the CFM loop: maps a batch of noisy states + times +
// class conditioning to predictions in the model's parameterization.
class VectorFieldModel {
public:
    virtual ~VectorFieldModel() = default;
    // z: B rows of dims(); cond_mask[i] false means null (zeroed) conditioning.
    virtual Tensor predict_batch(const std::vector<std::vector<double>>& z, const std::vector<double>& t,
                                 const std::vector<int>& labels, const std::vector<bool>& cond_mask) = 0;
    virtual ParamStore& params() = 0;
    virtual int dims() const = 0;
};

// Small MLP for 2D toys: input [z, sinusoidal(t), class embedding].
class MlpVelocityModel : public VectorFieldModel {
public:
    MlpVelocityModel(int data_dim, int num_classes, Rng& rng, int hidden = 96, int time_dim = 32, int class_dim = 16)
        : data_dim_(data_dim), time_dim_(time_dim), class_dim_(class_dim) {
        int in = data_dim + time_dim + class_dim;
        add_linear("l0", in, hidden, rng);
        add_linear("l1", hidden, hidden, rng);
        add_linear("l2", hidden, hidden, rng);
        add_linear("out", hidden, data_dim, rng, 1e-2);
        params_.add("class_table", Tensor::randn({num_classes, class_dim}, rng, 0.3));
    }

    Tensor predict_batch(const std::vector<std::vector<double>>& z, const std::vector<double>& t,
                         const std::vector<int>& labels, const std::vector<bool>& cond_mask) override {
        int B = static_cast<int>(z.size());
        require(B > 0, "predict_batch: empty batch");
        std::vector<double> zflat;
        zflat.reserve(static_cast<size_t>(B * data_dim_));
        for (auto& row : z) {
            require(static_cast<int>(row.size()) == data_dim_, "predict_batch: dim mismatch");
            zflat.insert(zflat.end(), row.begin(), row.end());
        }
        Tensor zt = Tensor::from_values({B, data_dim_}, std::move(zflat));
        Tensor temb = sinusoidal_embed(t, time_dim_);
        Tensor cemb = gather_rows(params_.at("class_table"), labels);
        // null conditioning is an exact zero row
        Tensor mask = Tensor::zeros({B, class_dim_});
        for (int i = 0; i < B; ++i)
            if (cond_mask[static_cast<size_t>(i)])
                for (int c = 0; c < class_dim_; ++c) mask.values()[static_cast<size_t>(i * class_dim_ + c)] = 1.0;
        cemb = mul(cemb, mask);

        Tensor h = concat_cols({zt, temb, cemb});
        h = silu(add_bias(matmul(h, params_.at("l0.w")), params_.at("l0.b")));
        h = silu(add_bias(matmul(h, params_.at("l1.w")), params_.at("l1.b")));
        h = silu(add_bias(matmul(h, params_.at("l2.w")), params_.at("l2.b")));
        return add_bias(matmul(h, params_.at("out.w")), params_.at("out.b"));
    }

    ParamStore& params() override { return params_; }
    int dims() const override { return data_dim_; }

private:
    void add_linear(const std::string& name, int in, int out, Rng& rng, double gain = 1.0) {
        params_.add(name + ".w", Tensor::randn({in, out}, rng, gain / std::sqrt(static_cast<double>(in))));
        params_.add(name + ".b", Tensor::zeros({out}));
    }

    int data_dim_, time_dim_, class_dim_;
    ParamStore params_;
};

// MM-DiT on square grayscale images, one forward per sample.
class MMDiTImageModel : public VectorFieldModel {
public:
    MMDiTImageModel(const ModelConfig& cfg, int side, Rng& rng) : model_(cfg, rng), side_(side) {
        require(cfg.latent_channels == 1, "MMDiTImageModel: expects 1 latent channel");
    }

    Tensor predict_batch(const std::vector<std::vector<double>>& z, const std::vector<double>& t,
                         const std::vector<int>& labels, const std::vector<bool>& cond_mask) override {
        std::vector<Tensor> rows;
        for (size_t i = 0; i < z.size(); ++i) {
            Tensor zi = Tensor::from_values({side_ * side_, 1}, z[i]);
            ConditioningInputs cond =
                cond_mask[i] ? model_.embed_tokens({labels[i]}, t[i])
                             : MMDiT::null_conditioning(model_.config(), 1, t[i]);
            Tensor out = model_.forward(zi, side_, side_, cond);
            rows.push_back(reshape(out, {1, side_ * side_}));
        }
        return concat_rows(rows);
    }

    ParamStore& params() override { return model_.params(); }
    int dims() const override { return side_ * side_; }
    MMDiT& backbone() { return model_; }

private:
    MMDiT model_;
    int side_;
};

struct TrainConfig {
    std::string variant = "rf/lognorm(0.00,1.00)";
    DatasetKind dataset = DatasetKind::GaussMix2D;
    int batch = 128;
    int steps = 2000;
    double lr = 1e-4;
    int warmup = 1000;
    double ema_decay = 0.99;
    int ema_every = 100;
    double cfg_drop = 0.1;
    double adam_eps = 1e-15;
    double weight_decay = 0.0;
    uint64_t seed = 0;
    int val_every = 200;
    int val_batch = 256;
    int val_levels = 8;

    void validate() const {
        require(batch >= 1 && steps >= 0, "TrainConfig: batch/steps must be positive");
        require(warmup >= 0, "TrainConfig: warmup must be >= 0");
        require(cfg_drop >= 0.0 && cfg_drop <= 1.0, "TrainConfig: cfg_drop must be a probability");
        require(ema_decay >= 0.0 && ema_decay <= 1.0, "TrainConfig: ema_decay must be in [0,1]");
        require(val_levels >= 2, "TrainConfig: val_levels must be >= 2");
    }
};

// Training-path pole guard (direct API calls at poles still raise).
inline double clamp_train_time(double t) { return std::min(std::max(t, 1e-5), 1.0 - 1e-5); }

struct CfmBatch {
    std::vector<std::vector<double>> z;
    std::vector<double> t;
    std::vector<int> labels;
    std::vector<bool> cond_mask;
    Tensor target;  // constant tensor (B, D)
};

// Draw t ~ pi and eps ~ N(0,I), form z_t and the regression target in the
// requested prediction space.
inline CfmBatch make_cfm_batch(const std::vector<DataSample>& batch, const Schedule& schedule,
                               const TimestepDensity& density, Parameterization param, double cfg_drop, Rng& rng) {
    require(!batch.empty(), "make_cfm_batch: empty batch");
    int B = static_cast<int>(batch.size());
    int D = static_cast<int>(batch[0].x.size());
    CfmBatch out;
    std::vector<double> tvals(static_cast<size_t>(B * D));
    for (int i = 0; i < B; ++i) {
        double t = clamp_train_time(density.sample(rng));
        PredCoeffs pc = prediction_coeffs(param, schedule, t);
        double at = schedule.a(t), bt = schedule.b(t);
        std::vector<double> zi(static_cast<size_t>(D));
        for (int d = 0; d < D; ++d) {
            double eps = rng.normal();
            double x0 = batch[static_cast<size_t>(i)].x[static_cast<size_t>(d)];
            zi[static_cast<size_t>(d)] = at * x0 + bt * eps;
            tvals[static_cast<size_t>(i * D + d)] = pc.x0 * x0 + pc.eps * eps;
        }
        out.z.push_back(std::move(zi));
        out.t.push_back(t);
        out.labels.push_back(batch[static_cast<size_t>(i)].label);
        out.cond_mask.push_back(!(cfg_drop > 0.0 && rng.uniform() < cfg_drop));
    }
    out.target = Tensor::from_values({B, D}, std::move(tvals));
    return out;
}

inline Tensor cfm_loss(VectorFieldModel& model, const std::vector<DataSample>& batch, const Schedule& schedule,
                       const TimestepDensity& density, Parameterization param, double cfg_drop, Rng& rng) {
    CfmBatch cb = make_cfm_batch(batch, schedule, density, param, cfg_drop, rng);
    Tensor pred = model.predict_batch(cb.z, cb.t, cb.labels, cb.cond_mask);
    Tensor loss = mse(pred, cb.target);
    if (!std::isfinite(loss.item())) throw NumericalFault("cfm_loss: non-finite loss");
    return loss;
}

// Per-source independent zeroing of conditioning with probability p; exact
// zeros represent the dropped source.
inline std::vector<std::vector<double>> cfg_dropout(const std::vector<std::vector<double>>& sources, double p,
                                                    Rng& rng) {
    require(p >= 0.0 && p <= 1.0, "cfg_dropout: p must be a probability");
    std::vector<std::vector<double>> out = sources;
    for (auto& src : out)
        if (p > 0.0 && rng.uniform() < p) std::fill(src.begin(), src.end(), 0.0);
    return out;
}

// Decoupled-weight-decay adaptive-moment optimizer with linear warmup.
class AdamW {
public:
    AdamW(double lr, int warmup, double eps = 1e-15, double weight_decay = 0.0, double beta1 = 0.9,
          double beta2 = 0.999)
        : lr_(lr), warmup_(warmup), eps_(eps), wd_(weight_decay), b1_(beta1), b2_(beta2) {}

    double lr_at(long step) const {
        if (warmup_ <= 0) return lr_;
        return lr_ * std::min(1.0, static_cast<double>(step) / warmup_);
    }

    // Returns the global gradient norm before the update.
    double step(ParamStore& params) {
        double lr = lr_at(step_);
        ++step_;
        double t = static_cast<double>(step_);
        double gnorm2 = 0.0;
        for (auto& [name, p] : params.all()) {
            p.node()->ensure_grad();
            auto& m = moments1_[name];
            auto& v = moments2_[name];
            if (m.size() != p.size()) m.assign(p.size(), 0.0);
            if (v.size() != p.size()) v.assign(p.size(), 0.0);
            for (size_t i = 0; i < p.size(); ++i) {
                double g = p.grad()[i];
                if (!std::isfinite(g))
                    throw NumericalFault("AdamW: non-finite gradient in parameter '" + name + "'");
                gnorm2 += g * g;
                m[i] = b1_ * m[i] + (1.0 - b1_) * g;
                v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
                double mhat = m[i] / (1.0 - std::pow(b1_, t));
                double vhat = v[i] / (1.0 - std::pow(b2_, t));
                p.values()[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p.values()[i]);
            }
        }
        return std::sqrt(gnorm2);
    }

    long steps_taken() const { return step_; }

    const std::map<std::string, std::vector<double>>& moments1() const { return moments1_; }
    const std::map<std::string, std::vector<double>>& moments2() const { return moments2_; }

    void restore(long steps, std::map<std::string, std::vector<double>> m1,
                 std::map<std::string, std::vector<double>> m2) {
        step_ = steps;
        moments1_ = std::move(m1);
        moments2_ = std::move(m2);
    }

private:
    double lr_;
    int warmup_;
    double eps_, wd_, b1_, b2_;
    long step_ = 0;
    std::map<std::string, std::vector<double>> moments1_, moments2_;
};

inline void ema_update(ParamStore& ema, const ParamStore& params, double decay) {
    require(ema.all().size() == params.all().size(), "ema_update: registry size mismatch");
    auto it = ema.all().begin();
    auto jt = params.all().begin();
    for (; it != ema.all().end(); ++it, ++jt) {
        require(it->first == jt->first && it->second.size() == jt->second.size(),
                "ema_update: registry mismatch at '" + it->first + "'");
        for (size_t i = 0; i < it->second.size(); ++i)
            it->second.values()[i] = decay * it->second.values()[i] + (1.0 - decay) * jt->second.values()[i];
    }
}

// Emulating an every-N cadence with per-step updates.
inline double ema_decay_per_step(double decay, int cadence) {
    return std::pow(decay, 1.0 / static_cast<double>(cadence));
}

// CFM loss at fixed equispaced t-levels in (0,1): t_k = (k+1)/(levels+1).
// Aggregate drops the top (most-noised) level. Per-level noise comes from a
// level-seeded stream, so repeated calls are deterministic.
struct StratifiedLoss {
    std::vector<double> levels;
    std::vector<double> per_level;
    double aggregate = 0.0;
};

inline StratifiedLoss stratified_validation_loss(VectorFieldModel& model, const std::vector<DataSample>& val_set,
                                                 const Schedule& schedule, Parameterization param, int levels,
                                                 uint64_t seed) {
    require(!val_set.empty(), "stratified_validation_loss: empty validation set");
    require(levels >= 2, "stratified_validation_loss: levels must be >= 2");
    StratifiedLoss out;
    for (int k = 0; k < levels; ++k) {
        double t = static_cast<double>(k + 1) / (levels + 1);
        Rng rng(seed * 1000003ull + static_cast<uint64_t>(k));
        int B = static_cast<int>(val_set.size());
        int D = static_cast<int>(val_set[0].x.size());
        std::vector<std::vector<double>> z;
        std::vector<double> tv(static_cast<size_t>(B), t);
        std::vector<int> labels;
        std::vector<bool> mask(static_cast<size_t>(B), true);
        std::vector<double> target(static_cast<size_t>(B * D));
        PredCoeffs pc = prediction_coeffs(param, schedule, t);
        double at = schedule.a(t), bt = schedule.b(t);
        for (int i = 0; i < B; ++i) {
            std::vector<double> zi(static_cast<size_t>(D));
            for (int d = 0; d < D; ++d) {
                double eps = rng.normal();
                double x0 = val_set[static_cast<size_t>(i)].x[static_cast<size_t>(d)];
                zi[static_cast<size_t>(d)] = at * x0 + bt * eps;
                target[static_cast<size_t>(i * D + d)] = pc.x0 * x0 + pc.eps * eps;
            }
            z.push_back(std::move(zi));
            labels.push_back(val_set[static_cast<size_t>(i)].label);
        }
        Tensor pred = model.predict_batch(z, tv, labels, mask);
        Tensor tt = Tensor::from_values({B, D}, target);
        out.levels.push_back(t);
        out.per_level.push_back(mse(pred, tt).item());
    }
    double acc = 0.0;
    for (int k = 0; k + 1 < levels; ++k) acc += out.per_level[static_cast<size_t>(k)];
    out.aggregate = acc / (levels - 1);
    return out;
}

struct TrainResult {
    std::vector<double> loss_history;
    ParamStore ema;
};

// Everything beyond the model parameters needed to resume a run and get the
// same bits as an uninterrupted one: data-stream RNG, optimizer moments and
// step count, EMA weights, and the step index already completed.
struct TrainerState {
    bool initialized = false;
    int step = 0;
    std::string rng_state;
    long opt_steps = 0;
    std::map<std::string, std::vector<double>> m1, m2;
    ParamStore ema;
};

// Full loop: metrics streamed as CSV rows to `metrics` when provided
// (step,loss,lr,grad_norm,val_aggregate,val_0..val_{L-1}). When `state` is
// given and initialized, training resumes from it; on return it holds the
// final state either way.
inline TrainResult train_loop(VectorFieldModel& model, const VariantSpec& variant, const ToyDataset& dataset,
                              const TrainConfig& cfg, std::ostream* metrics = nullptr,
                              TrainerState* state = nullptr) {
    cfg.validate();
    Rng rng(cfg.seed);
    Rng val_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    AdamW opt(cfg.lr, cfg.warmup, cfg.adam_eps, cfg.weight_decay);
    TrainResult res;
    res.ema = model.params().clone();
    std::vector<DataSample> val_set = dataset.batch(cfg.val_batch, val_rng);

    int start_step = 0;
    if (state && state->initialized) {
        require(state->step <= cfg.steps, "train_loop: checkpoint already past requested step count");
        start_step = state->step;
        rng.set_state(state->rng_state);
        opt.restore(state->opt_steps, state->m1, state->m2);
        res.ema = state->ema.clone();
    }

    if (metrics && start_step == 0) {
        *metrics << "step,loss,lr,grad_norm,val_aggregate";
        for (int k = 0; k < cfg.val_levels; ++k) *metrics << ",val_" << k;
        *metrics << "\n";
    }

    for (int step = start_step; step < cfg.steps; ++step) {
        std::vector<DataSample> batch = dataset.batch(cfg.batch, rng);
        model.params().zero_grads();
        Tensor loss;
        try {
            loss = cfm_loss(model, batch, variant.schedule, variant.density, variant.parameterization,
                            cfg.cfg_drop, rng);
            backward(loss);
        } catch (const NumericalFault& e) {
            throw NumericalFault("training fault at step " + std::to_string(step) + ": " + e.what());
        }
        double gnorm = opt.step(model.params());
        if (cfg.ema_every <= 1)
            ema_update(res.ema, model.params(), cfg.ema_decay);
        else if ((step + 1) % cfg.ema_every == 0)
            ema_update(res.ema, model.params(), cfg.ema_decay);
        res.loss_history.push_back(loss.item());

        if (metrics && (step % cfg.val_every == 0 || step + 1 == cfg.steps)) {
            StratifiedLoss sl = stratified_validation_loss(model, val_set, variant.schedule,
                                                           variant.parameterization, cfg.val_levels, cfg.seed);
            *metrics << step << ',' << format_double(loss.item()) << ',' << format_double(opt.lr_at(step)) << ','
                     << format_double(gnorm) << ',' << format_double(sl.aggregate);
            for (double v : sl.per_level) *metrics << ',' << format_double(v);
            *metrics << "\n";
        }
    }

    if (state) {
        state->initialized = true;
        state->step = cfg.steps;
        state->rng_state = rng.state();
        state->opt_steps = opt.steps_taken();
        state->m1 = opt.moments1();
        state->m2 = opt.moments2();
        state->ema = res.ema.clone();
    }
    return res;
}

}  // namespace flowlab

#endif
