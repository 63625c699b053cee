#ifndef FLOWLAB_MMDIT_HPP
#define FLOWLAB_MMDIT_HPP

#include <cmath>
#include <string>
#include <vector>

#include "flowlab/common.hpp"
#include "flowlab/tensor.hpp"

namespace flowlab {

// Dual-stream diffusion transformer: separate weight sets per modality,
// one joint attention over the concatenated token sequence. Sizing rule:
// hidden = 64 * depth, heads = depth, MLP width 4 * hidden.

struct ModelConfig {
    int depth = 2;
    int patch = 2;
    int latent_channels = 2;
    bool qk_norm = true;
    int pos_S = 256;      // target pixel side
    int pos_H_max = 256;  // extreme bucket sides, pixels
    int pos_W_max = 256;
    int context_dim = 16;
    int vocab = 8;
    // 2 = {context, image}; 3 adds a second context stream with its own weights.
    int weight_sets = 2;
    bool zero_init_output = true;

    int hidden() const { return 64 * depth; }
    int heads() const { return depth; }
    int head_dim() const { return 64; }
    int mlp_width() const { return 4 * hidden(); }
    int h_max() const { return pos_H_max / 16; }
    int w_max() const { return pos_W_max / 16; }
    int s_latent() const { return pos_S / 16; }

    void validate() const {
        require(depth >= 1, "ModelConfig: depth must be >= 1");
        require(patch == 2, "ModelConfig: patch size is fixed at 2");
        require(latent_channels >= 1, "ModelConfig: latent_channels must be >= 1");
        require(hidden() % heads() == 0, "ModelConfig: hidden not divisible by heads");
        require(weight_sets == 2 || weight_sets == 3, "ModelConfig: weight_sets must be 2 or 3");
        require(context_dim >= 1 && vocab >= 1, "ModelConfig: context_dim and vocab must be positive");
        require(pos_S % 16 == 0 && pos_H_max % 16 == 0 && pos_W_max % 16 == 0,
                "ModelConfig: pixel sides must be multiples of 16");
    }
};

// Null conditioning (CFG dropout) is represented by exact zero tensors.
struct ConditioningInputs {
    Tensor c_ctxt;  // (L, context_dim)
    Tensor c_vec;   // (1, context_dim)
    double t = 0.0;
};

// Full vertical/horizontal coordinate ranges, center-cropped. The crop slices
// the precomputed range (no re-interpolation); centering ties take the lower
// start index.
struct PositionalGrid {
    std::vector<double> vertical;    // h values
    std::vector<double> horizontal;  // w values
};

inline std::vector<double> positional_axis_values(int extent_max, int s_latent, int pixel_side_S, int crop) {
    require(crop <= extent_max, "positional_grid: requested side " + std::to_string(crop) +
                                    " exceeds maximum " + std::to_string(extent_max));
    require(crop >= 1, "positional_grid: side must be >= 1");
    std::vector<double> full(extent_max);
    double scale = 256.0 / pixel_side_S;
    double offset = (extent_max - s_latent) / 2.0;
    for (int p = 0; p < extent_max; ++p) full[static_cast<size_t>(p)] = (p - offset) * scale;
    int start = (extent_max - crop) / 2;
    return std::vector<double>(full.begin() + start, full.begin() + start + crop);
}

inline PositionalGrid positional_grid(const ModelConfig& cfg, int h, int w) {
    PositionalGrid g;
    g.vertical = positional_axis_values(cfg.h_max(), cfg.s_latent(), cfg.pos_S, h);
    g.horizontal = positional_axis_values(cfg.w_max(), cfg.s_latent(), cfg.pos_S, w);
    return g;
}

// Flatten 2x2 patches of an (h*w, c) row-major latent grid into a
// ((h/2)*(w/2), 4c) token sequence, row-major patch order.
inline Tensor patchify(const Tensor& x, int h, int w) {
    require(x.ndim() == 2 && x.dim(0) == h * w, "patchify: latent shape mismatch");
    require(h % 2 == 0 && w % 2 == 0, "patchify: latent sides must be even, got " + std::to_string(h) + "x" +
                                          std::to_string(w));
    int c = x.dim(1);
    int hp = h / 2, wp = w / 2;
    // token r = (pi, pj) collects pixels (2pi,2pj), (2pi,2pj+1), (2pi+1,2pj), (2pi+1,2pj+1)
    std::vector<int> src(static_cast<size_t>(hp * wp * 4));
    for (int pi = 0; pi < hp; ++pi)
        for (int pj = 0; pj < wp; ++pj) {
            int tok = pi * wp + pj;
            src[static_cast<size_t>(tok * 4 + 0)] = (2 * pi) * w + 2 * pj;
            src[static_cast<size_t>(tok * 4 + 1)] = (2 * pi) * w + 2 * pj + 1;
            src[static_cast<size_t>(tok * 4 + 2)] = (2 * pi + 1) * w + 2 * pj;
            src[static_cast<size_t>(tok * 4 + 3)] = (2 * pi + 1) * w + 2 * pj + 1;
        }
    Tensor out = ad::make_op({hp * wp, 4 * c}, {x.node()}, [src, c](TensorNode& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        for (size_t slot = 0; slot < src.size(); ++slot)
            for (int ch = 0; ch < c; ++ch)
                p.grad[static_cast<size_t>(src[slot] * c + ch)] +=
                    nd.grad[slot * static_cast<size_t>(c) + static_cast<size_t>(ch)];
    });
    for (size_t slot = 0; slot < src.size(); ++slot)
        for (int ch = 0; ch < c; ++ch)
            out.values()[slot * static_cast<size_t>(c) + static_cast<size_t>(ch)] =
                x.values()[static_cast<size_t>(src[slot] * c + ch)];
    return out;
}

inline Tensor unpatchify(const Tensor& tokens, int h, int w, int c) {
    require(h % 2 == 0 && w % 2 == 0, "unpatchify: latent sides must be even");
    int hp = h / 2, wp = w / 2;
    require(tokens.ndim() == 2 && tokens.dim(0) == hp * wp && tokens.dim(1) == 4 * c,
            "unpatchify: token shape mismatch");
    std::vector<int> dst(static_cast<size_t>(hp * wp * 4));
    for (int pi = 0; pi < hp; ++pi)
        for (int pj = 0; pj < wp; ++pj) {
            int tok = pi * wp + pj;
            dst[static_cast<size_t>(tok * 4 + 0)] = (2 * pi) * w + 2 * pj;
            dst[static_cast<size_t>(tok * 4 + 1)] = (2 * pi) * w + 2 * pj + 1;
            dst[static_cast<size_t>(tok * 4 + 2)] = (2 * pi + 1) * w + 2 * pj;
            dst[static_cast<size_t>(tok * 4 + 3)] = (2 * pi + 1) * w + 2 * pj + 1;
        }
    Tensor out = ad::make_op({h * w, c}, {tokens.node()}, [dst, c](TensorNode& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        for (size_t slot = 0; slot < dst.size(); ++slot)
            for (int ch = 0; ch < c; ++ch)
                p.grad[slot * static_cast<size_t>(c) + static_cast<size_t>(ch)] +=
                    nd.grad[static_cast<size_t>(dst[slot] * c + ch)];
    });
    for (size_t slot = 0; slot < dst.size(); ++slot)
        for (int ch = 0; ch < c; ++ch)
            out.values()[static_cast<size_t>(dst[slot] * c + ch)] =
                tokens.values()[slot * static_cast<size_t>(c) + static_cast<size_t>(ch)];
    return out;
}

// One stream's attention weights within a block.
struct StreamAttnWeights {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor q_gain, k_gain;  // per-head RMS-norm scales, shape (head_dim)
};

namespace mmdit_detail {

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_bias(matmul(x, w), b); }

inline Tensor per_head_rms(const Tensor& x, const Tensor& gain, int heads) {
    int rows = x.dim(0), hidden = x.dim(1);
    int dh = hidden / heads;
    Tensor r = reshape(x, {rows * heads, dh});
    r = rms_norm_with_scale(r, gain);
    return reshape(r, {rows, hidden});
}

inline Tensor modulate(const Tensor& x, const Tensor& scale_row, const Tensor& shift_row) {
    // x * (1 + scale) + shift, scale/shift broadcast over tokens
    int hidden = x.dim(1);
    Tensor one_plus = add(reshape(scale_row, {hidden}), Tensor::filled({hidden}, 1.0));
    return add_bias(mul_rowvec(x, one_plus), reshape(shift_row, {hidden}));
}

}  // namespace mmdit_detail

// Joint attention: per-stream Q/K/V from that stream's own weights, optional
// per-head QK RMS-norm, one softmax attention over the concatenated sequence,
// outputs split back and projected per stream.
inline std::vector<Tensor> joint_attention(const std::vector<Tensor>& streams,
                                           const std::vector<StreamAttnWeights>& weights, int heads,
                                           bool qk_norm) {
    require(!streams.empty() && streams.size() == weights.size(), "joint_attention: stream/weight count mismatch");
    int hidden = streams[0].dim(1);
    int dh = hidden / heads;
    std::vector<Tensor> qs, ks, vs;
    std::vector<int> lengths;
    for (size_t i = 0; i < streams.size(); ++i) {
        require(streams[i].dim(0) > 0, "joint_attention: stream " + std::to_string(i) + " has length 0");
        require(streams[i].dim(1) == hidden, "joint_attention: hidden size mismatch across streams");
        Tensor q = mmdit_detail::linear(streams[i], weights[i].wq, weights[i].bq);
        Tensor k = mmdit_detail::linear(streams[i], weights[i].wk, weights[i].bk);
        Tensor v = mmdit_detail::linear(streams[i], weights[i].wv, weights[i].bv);
        if (qk_norm) {
            q = mmdit_detail::per_head_rms(q, weights[i].q_gain, heads);
            k = mmdit_detail::per_head_rms(k, weights[i].k_gain, heads);
        }
        qs.push_back(q);
        ks.push_back(k);
        vs.push_back(v);
        lengths.push_back(streams[i].dim(0));
    }
    Tensor q = concat_rows(qs), k = concat_rows(ks), v = concat_rows(vs);
    int total = q.dim(0);

    // per-head attention over the joint sequence; columns of head h are
    // contiguous in the (total, heads*dh) layout
    std::vector<Tensor> head_outs;
    for (int h = 0; h < heads; ++h) {
        // column slice as a view op
        auto slice_cols = [dh, h](const Tensor& m) {
            int rows = m.dim(0), cols = m.dim(1);
            int off = h * dh;
            Tensor out = ad::make_op({rows, dh}, {m.node()}, [rows, cols, dh, off](TensorNode& nd) {
                auto& p = *nd.parents[0];
                p.ensure_grad();
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < dh; ++c)
                        p.grad[static_cast<size_t>(r * cols + off + c)] += nd.grad[static_cast<size_t>(r * dh + c)];
            });
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < dh; ++c)
                    out.values()[static_cast<size_t>(r * dh + c)] = m.values()[static_cast<size_t>(r * cols + off + c)];
            return out;
        };
        Tensor qh = slice_cols(q), kh = slice_cols(k), vh = slice_cols(v);
        Tensor logits = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        Tensor attn = softmax_lastdim(logits);
        head_outs.push_back(matmul(attn, vh));
    }
    Tensor joined = concat_cols(head_outs);

    std::vector<Tensor> parts = split_rows(joined, lengths);
    std::vector<Tensor> outs;
    for (size_t i = 0; i < streams.size(); ++i)
        outs.push_back(mmdit_detail::linear(parts[i], weights[i].wo, weights[i].bo));
    return outs;
}

// Raw attention logits (pre-softmax), for the QK-norm bound diagnostics.
inline std::vector<double> joint_attention_logits(const std::vector<Tensor>& streams,
                                                  const std::vector<StreamAttnWeights>& weights, int heads,
                                                  bool qk_norm) {
    int hidden = streams[0].dim(1);
    int dh = hidden / heads;
    std::vector<Tensor> qs, ks;
    for (size_t i = 0; i < streams.size(); ++i) {
        Tensor q = mmdit_detail::linear(streams[i], weights[i].wq, weights[i].bq);
        Tensor k = mmdit_detail::linear(streams[i], weights[i].wk, weights[i].bk);
        if (qk_norm) {
            q = mmdit_detail::per_head_rms(q, weights[i].q_gain, heads);
            k = mmdit_detail::per_head_rms(k, weights[i].k_gain, heads);
        }
        qs.push_back(q);
        ks.push_back(k);
    }
    Tensor q = concat_rows(qs), k = concat_rows(ks);
    int total = q.dim(0);
    std::vector<double> logits;
    logits.reserve(static_cast<size_t>(heads * total * total));
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < total; ++i)
            for (int j = 0; j < total; ++j) {
                double dot = 0.0;
                for (int c = 0; c < dh; ++c)
                    dot += q.values()[static_cast<size_t>(i * hidden + h * dh + c)] *
                           k.values()[static_cast<size_t>(j * hidden + h * dh + c)];
                logits.push_back(dot / std::sqrt(static_cast<double>(dh)));
            }
    return logits;
}

class MMDiT {
public:
    MMDiT(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        int H = cfg_.hidden();
        int C = cfg_.context_dim;
        int P = cfg_.patch * cfg_.patch * cfg_.latent_channels;

        add_linear("token_table", cfg_.vocab, C, rng, /*bias=*/false);
        add_linear("ctxt_embed", C, H, rng);
        add_linear("x_embed", P, H, rng);
        add_linear("t_mlp.0", kTimeEmbedDim, H, rng);
        add_linear("t_mlp.1", H, H, rng);
        add_linear("vec_mlp.0", C, H, rng);
        add_linear("vec_mlp.1", H, H, rng);

        for (int b = 0; b < cfg_.depth; ++b)
            for (int s = 0; s < cfg_.weight_sets; ++s) {
                std::string pre = "block" + std::to_string(b) + ".s" + std::to_string(s) + ".";
                add_linear(pre + "attn.q", H, H, rng);
                add_linear(pre + "attn.k", H, H, rng);
                add_linear(pre + "attn.v", H, H, rng);
                add_linear(pre + "attn.o", H, H, rng);
                params_.add(pre + "attn.q_gain", Tensor::filled({cfg_.head_dim()}, 1.0));
                params_.add(pre + "attn.k_gain", Tensor::filled({cfg_.head_dim()}, 1.0));
                add_linear(pre + "mlp.0", H, cfg_.mlp_width(), rng);
                add_linear(pre + "mlp.1", cfg_.mlp_width(), H, rng);
                add_linear(pre + "mod", H, 6 * H, rng, true, 0.02);
            }

        add_linear("final.mod", H, 2 * H, rng, true, 0.02);
        add_linear("final.proj", H, P, rng);
        if (cfg_.zero_init_output) {
            auto& w = params_.at("final.proj.w");
            w.values().assign(w.size(), 0.0);
            auto& b = params_.at("final.proj.b");
            b.values().assign(b.size(), 0.0);
        }
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Copy every weight of stream 0 into the other streams; the resulting
    // model equals a single-stream DiT over the concatenated sequence.
    void share_stream_weights() {
        for (int b = 0; b < cfg_.depth; ++b)
            for (int s = 1; s < cfg_.weight_sets; ++s) {
                std::string src = "block" + std::to_string(b) + ".s0.";
                std::string dst = "block" + std::to_string(b) + ".s" + std::to_string(s) + ".";
                for (const char* leaf : {"attn.q.w", "attn.q.b", "attn.k.w", "attn.k.b", "attn.v.w", "attn.v.b",
                                         "attn.o.w", "attn.o.b", "attn.q_gain", "attn.k_gain", "mlp.0.w",
                                         "mlp.0.b", "mlp.1.w", "mlp.1.b", "mod.w", "mod.b"})
                    params_.at(dst + leaf).values() = params_.at(src + leaf).values();
            }
    }

    // Synthetic-caption conditioning: token ids -> (c_ctxt, c_vec) with
    // c_vec the mean-pooled embedding.
    ConditioningInputs embed_tokens(const std::vector<int>& ids, double t) {
        ConditioningInputs cond;
        cond.c_ctxt = gather_rows(params_.at("token_table.w"), ids);
        cond.c_vec = scale(reshape(sum_rows(cond.c_ctxt), {1, cfg_.context_dim}),
                           1.0 / static_cast<double>(ids.size()));
        cond.t = t;
        return cond;
    }

    static ConditioningInputs null_conditioning(const ModelConfig& cfg, int length, double t) {
        ConditioningInputs cond;
        cond.c_ctxt = Tensor::zeros({length, cfg.context_dim});
        cond.c_vec = Tensor::zeros({1, cfg.context_dim});
        cond.t = t;
        return cond;
    }

    // z: (h*w, latent_channels) row-major latent grid. Returns the velocity
    // prediction with z's shape.
    Tensor forward(const Tensor& z, int h, int w, const ConditioningInputs& cond) {
        require(cond.t >= 0.0 && cond.t <= 1.0, "model_forward: t outside [0,1]");
        require(z.ndim() == 2 && z.dim(0) == h * w && z.dim(1) == cfg_.latent_channels,
                "model_forward: latent shape mismatch");
        int H = cfg_.hidden();

        // y combines timestep and pooled conditioning
        Tensor temb = sinusoidal_embed(cond.t, kTimeEmbedDim);
        Tensor y = add(mlp2("t_mlp", temb), mlp2("vec_mlp", cond.c_vec));  // (1, H)

        // context stream(s)
        std::vector<Tensor> streams;
        std::vector<int> ctxt_lengths;
        Tensor cemb = mmdit_detail::linear(cond.c_ctxt, params_.at("ctxt_embed.w"), params_.at("ctxt_embed.b"));
        if (cfg_.weight_sets == 3) {
            int L = cemb.dim(0);
            require(L >= 2, "model_forward: three-weight-set mode needs at least 2 context tokens");
            auto halves = split_rows(cemb, {L / 2, L - L / 2});
            streams.push_back(halves[0]);
            streams.push_back(halves[1]);
        } else {
            streams.push_back(cemb);
        }

        // image stream: patchify, embed, add frequency-embedded positions
        Tensor tokens = patchify(z, h, w);
        Tensor xemb = mmdit_detail::linear(tokens, params_.at("x_embed.w"), params_.at("x_embed.b"));
        xemb = add(xemb, positional_embedding(h / 2, w / 2));
        streams.push_back(xemb);

        for (int b = 0; b < cfg_.depth; ++b) streams = block_forward(b, streams, y);

        // final modulated projection on the image stream (last stream)
        Tensor xs = streams.back();
        Tensor fin_mod = mmdit_detail::linear(silu(y), params_.at("final.mod.w"), params_.at("final.mod.b"));
        auto sc_sh = split_cols_pair(fin_mod, H);
        Tensor normed = mmdit_detail::modulate(layer_norm_no_affine(xs), sc_sh.first, sc_sh.second);
        Tensor out_tokens = mmdit_detail::linear(normed, params_.at("final.proj.w"), params_.at("final.proj.b"));
        return unpatchify(out_tokens, h, w, cfg_.latent_channels);
    }

    // Per stream: LN -> modulate(alpha, beta) -> joint attention -> gamma-gated
    // residual -> LN -> modulate(delta, epsilon) -> MLP -> zeta-gated residual.
    std::vector<Tensor> block_forward(int b, const std::vector<Tensor>& streams, const Tensor& y) {
        int H = cfg_.hidden();
        size_t n = streams.size();
        std::vector<StreamAttnWeights> weights(n);
        std::vector<std::vector<Tensor>> mods(n);  // alpha..zeta rows
        Tensor y_act = silu(y);
        for (size_t s = 0; s < n; ++s) {
            std::string pre = "block" + std::to_string(b) + ".s" + std::to_string(stream_weight_index(s, n)) + ".";
            weights[s] = {params_.at(pre + "attn.q.w"), params_.at(pre + "attn.q.b"),
                          params_.at(pre + "attn.k.w"), params_.at(pre + "attn.k.b"),
                          params_.at(pre + "attn.v.w"), params_.at(pre + "attn.v.b"),
                          params_.at(pre + "attn.o.w"), params_.at(pre + "attn.o.b"),
                          params_.at(pre + "attn.q_gain"), params_.at(pre + "attn.k_gain")};
            Tensor m = mmdit_detail::linear(y_act, params_.at(pre + "mod.w"), params_.at(pre + "mod.b"));
            mods[s] = split_cols(m, 6, H);
        }

        std::vector<Tensor> pre_attn(n);
        for (size_t s = 0; s < n; ++s)
            pre_attn[s] = mmdit_detail::modulate(layer_norm_no_affine(streams[s]), mods[s][0], mods[s][1]);

        std::vector<Tensor> attn_out = joint_attention(pre_attn, weights, cfg_.heads(), cfg_.qk_norm);

        std::vector<Tensor> out(n);
        for (size_t s = 0; s < n; ++s) {
            Tensor gated = mul_rowvec(attn_out[s], reshape(mods[s][2], {H}));
            Tensor x1 = add(streams[s], gated);
            Tensor m2 = mmdit_detail::modulate(layer_norm_no_affine(x1), mods[s][3], mods[s][4]);
            std::string pre = "block" + std::to_string(b) + ".s" + std::to_string(stream_weight_index(s, n)) + ".";
            Tensor mlp_out = mmdit_detail::linear(silu(mmdit_detail::linear(m2, params_.at(pre + "mlp.0.w"),
                                                                            params_.at(pre + "mlp.0.b"))),
                                                  params_.at(pre + "mlp.1.w"), params_.at(pre + "mlp.1.b"));
            out[s] = add(x1, mul_rowvec(mlp_out, reshape(mods[s][5], {H})));
        }
        return out;
    }

    Tensor positional_embedding(int hp, int wp) {
        PositionalGrid g = positional_grid(cfg_, hp, wp);
        int H = cfg_.hidden();
        int half = H / 2;
        std::vector<double> vpos, hpos;
        for (int i = 0; i < hp; ++i)
            for (int j = 0; j < wp; ++j) {
                vpos.push_back(g.vertical[static_cast<size_t>(i)]);
                hpos.push_back(g.horizontal[static_cast<size_t>(j)]);
            }
        Tensor ve = sinusoidal_embed(vpos, half);
        Tensor he = sinusoidal_embed(hpos, half);
        return concat_cols({ve, he});
    }

    static constexpr int kTimeEmbedDim = 256;

private:
    // In 3-weight-set mode with 2 streams at runtime this would mismatch;
    // stream count always equals weight_sets here.
    static size_t stream_weight_index(size_t s, size_t n) {
        (void)n;
        return s;
    }

    Tensor mlp2(const std::string& pre, const Tensor& x) {
        Tensor h = silu(mmdit_detail::linear(x, params_.at(pre + ".0.w"), params_.at(pre + ".0.b")));
        return mmdit_detail::linear(h, params_.at(pre + ".1.w"), params_.at(pre + ".1.b"));
    }

    void add_linear(const std::string& name, int in, int out, Rng& rng, bool bias = true, double gain = 1.0) {
        double stddev = gain / std::sqrt(static_cast<double>(in));
        params_.add(name + ".w", Tensor::randn({in, out}, rng, stddev));
        if (bias) params_.add(name + ".b", Tensor::zeros({out}));
    }

    static Tensor sum_rows(const Tensor& x) {
        Tensor ones = Tensor::filled({1, x.dim(0)}, 1.0);
        return matmul(ones, x);
    }

    static std::vector<Tensor> split_cols(const Tensor& m, int pieces, int width) {
        require(m.dim(1) == pieces * width, "split_cols: width mismatch");
        Tensor t = reshape(m, {pieces, width});  // m has 1 row
        return split_rows(t, std::vector<int>(static_cast<size_t>(pieces), 1));
    }

    static std::pair<Tensor, Tensor> split_cols_pair(const Tensor& m, int width) {
        auto v = split_cols(m, 2, width);
        return {v[0], v[1]};
    }

    ModelConfig cfg_;
    ParamStore params_;
};

}  // namespace flowlab

#endif
