#pragma once

// The transformer classifier: patch extraction, embedding with a class
// token and learned positions, pre-norm encoder layers with multi-head
// self-attention, and a linear head reading the class-token row.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "temgnet/errors.hpp"
#include "temgnet/recording.hpp"
#include "temgnet/rng.hpp"
#include "temgnet/tensor.hpp"

namespace temgnet {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInitStd = 0.02;

struct ModelConfig {
    int layers = 1;          // encoder depth L
    int dim = 32;            // model width d
    int mlp_size = 128;      // hidden width of the per-layer MLP
    int heads = 8;           // attention heads h
    int patch_side = 12;     // S; equals the channel count
    int window_samples = 600;  // W
    int n_classes = 17;
    bool qkv_bias = false;   // the attention projections carry no bias
    double dropout_rate = 0.0;

    int head_dim() const { return dim / heads; }
    int patches() const { return window_samples / patch_side; }  // trailing samples dropped
    int patch_dim() const { return patch_side * patch_side; }

    void validate() const {
        if (layers < 1) throw ConfigError("layers must be >= 1");
        if (dim < 1 || mlp_size < 1 || heads < 1 || n_classes < 1)
            throw ConfigError("dim, mlp_size, heads, and n_classes must be positive");
        if (dim % heads != 0)
            throw ConfigError("dim " + std::to_string(dim) + " must be divisible by heads " +
                              std::to_string(heads));
        if (patch_side < 1) throw ConfigError("patch_side must be >= 1");
        if (window_samples < patch_side)
            throw ConfigError("window of " + std::to_string(window_samples) +
                              " samples is shorter than one patch side " +
                              std::to_string(patch_side));
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ConfigError("dropout_rate must lie in [0, 1)");
        if (qkv_bias)
            throw ConfigError("qkv_bias is reserved; the standard variants define no attention bias");
    }
};

// The four standard architecture variants, selectable by id, at a 200 ms
// or 300 ms window (2 kHz sampling).
inline ModelConfig table_config(int model_id, int window_ms) {
    ModelConfig c;
    switch (model_id) {
        case 1: c.layers = 1; c.dim = 32; c.mlp_size = 128; break;
        case 2: c.layers = 2; c.dim = 32; c.mlp_size = 128; break;
        case 3: c.layers = 3; c.dim = 32; c.mlp_size = 128; break;
        case 4: c.layers = 1; c.dim = 64; c.mlp_size = 256; break;
        default:
            throw ConfigError("model_id " + std::to_string(model_id) +
                              " unknown; valid ids are 1, 2, 3, 4");
    }
    c.heads = 8;
    if (window_ms == 200)
        c.window_samples = 400;
    else if (window_ms == 300)
        c.window_samples = 600;
    else
        throw ConfigError("window_ms " + std::to_string(window_ms) +
                          " unsupported; the standard variants use 200 or 300");
    return c;
}

struct EncoderLayerParams {
    Tensor ln1_gamma, ln1_beta;
    Tensor qkv;    // d x 3d; head i occupies columns [3*i*dh, 3*(i+1)*dh)
    Tensor msa_w;  // d x d
    Tensor msa_b;  // d
    Tensor ln2_gamma, ln2_beta;
    Tensor mlp_w1;  // d x mlp
    Tensor mlp_b1;  // mlp
    Tensor mlp_w2;  // mlp x d
    Tensor mlp_b2;  // d
};

struct TemgNet {
    ModelConfig config;
    std::uint64_t init_seed = 0;
    Tensor patch_proj;  // S^2 x d
    Tensor patch_bias;  // d
    Tensor cls_token;   // 1 x d
    Tensor pos_table;   // (N+1) x d; row 0 belongs to the class token
    std::vector<EncoderLayerParams> layers;
    Tensor final_gamma, final_beta;
    Tensor head_w;  // d x n_classes
    Tensor head_b;  // n_classes

    // Visits every parameter in a fixed order; this order defines the
    // initialization stream, the optimizer slot layout, and the
    // checkpoint tensor sequence.
    template <typename Fn>
    void for_each_param(Fn&& fn) {
        fn("patch_proj", patch_proj);
        fn("patch_bias", patch_bias);
        fn("cls_token", cls_token);
        fn("pos_table", pos_table);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            auto& lay = layers[l];
            fn(p + "ln1_gamma", lay.ln1_gamma);
            fn(p + "ln1_beta", lay.ln1_beta);
            fn(p + "qkv", lay.qkv);
            fn(p + "msa_w", lay.msa_w);
            fn(p + "msa_b", lay.msa_b);
            fn(p + "ln2_gamma", lay.ln2_gamma);
            fn(p + "ln2_beta", lay.ln2_beta);
            fn(p + "mlp_w1", lay.mlp_w1);
            fn(p + "mlp_b1", lay.mlp_b1);
            fn(p + "mlp_w2", lay.mlp_w2);
            fn(p + "mlp_b2", lay.mlp_b2);
        }
        fn("final_gamma", final_gamma);
        fn("final_beta", final_beta);
        fn("head_w", head_w);
        fn("head_b", head_b);
    }

    std::vector<std::pair<std::string, Tensor>> named_params() {
        std::vector<std::pair<std::string, Tensor>> out;
        for_each_param([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
        return out;
    }

    std::size_t param_scalars() {
        std::size_t n = 0;
        for_each_param([&](const std::string&, Tensor& t) { n += t.numel(); });
        return n;
    }

    void zero_grads() {
        for_each_param([](const std::string&, Tensor& t) { t.zero_grad(); });
    }
};

// ---------------------------------------------------------------------------
// parameter accounting and initialization
// ---------------------------------------------------------------------------

// Closed-form trainable scalar count; must equal the enumerated size of
// an instantiated network.
inline std::int64_t count_params(const ModelConfig& cfg) {
    cfg.validate();
    const std::int64_t d = cfg.dim, mlp = cfg.mlp_size, n = cfg.patches(), c = cfg.n_classes;
    const std::int64_t s2 = cfg.patch_dim();
    std::int64_t total = 0;
    total += s2 * d + d;        // patch projection + bias
    total += d;                 // class token
    total += (n + 1) * d;       // position table
    const std::int64_t per_layer = 2 * (2 * d)    // two layer norms
                                   + d * 3 * d    // qkv projection, no bias
                                   + d * d + d    // attention output projection
                                   + d * mlp + mlp + mlp * d + d;  // the MLP
    total += cfg.layers * per_layer;
    total += 2 * d;             // final layer norm
    total += d * c + c;         // head
    return total;
}

// Weights draw from normal(0, 0.02) clamped at two standard deviations;
// biases, layer-norm shifts, and the class token start at zero,
// layer-norm scales at one, and the position table draws like a weight.
// The fill order is the for_each_param order, so one seed pins every
// value.
inline TemgNet init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    TemgNet net;
    net.config = cfg;
    net.init_seed = seed;
    const std::int64_t d = cfg.dim, mlp = cfg.mlp_size, n = cfg.patches(), c = cfg.n_classes;
    const std::int64_t s2 = cfg.patch_dim();

    net.patch_proj = Tensor::zeros({s2, d});
    net.patch_bias = Tensor::zeros({d});
    net.cls_token = Tensor::zeros({1, d});
    net.pos_table = Tensor::zeros({n + 1, d});
    net.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& lay : net.layers) {
        lay.ln1_gamma = Tensor::zeros({d});
        lay.ln1_beta = Tensor::zeros({d});
        lay.qkv = Tensor::zeros({d, 3 * d});
        lay.msa_w = Tensor::zeros({d, d});
        lay.msa_b = Tensor::zeros({d});
        lay.ln2_gamma = Tensor::zeros({d});
        lay.ln2_beta = Tensor::zeros({d});
        lay.mlp_w1 = Tensor::zeros({d, mlp});
        lay.mlp_b1 = Tensor::zeros({mlp});
        lay.mlp_w2 = Tensor::zeros({mlp, d});
        lay.mlp_b2 = Tensor::zeros({d});
    }
    net.final_gamma = Tensor::zeros({d});
    net.final_beta = Tensor::zeros({d});
    net.head_w = Tensor::zeros({d, c});
    net.head_b = Tensor::zeros({c});

    Rng rng(seed);
    net.for_each_param([&](const std::string& name, Tensor& t) {
        t.set_requires_grad(true);
        const bool is_gamma = name.ends_with("gamma");
        const bool is_zeroed = name.ends_with("beta") || name.ends_with("bias") ||
                               name.ends_with("_b") || name.ends_with("b1") ||
                               name.ends_with("b2") || name == "cls_token";
        if (is_gamma) {
            for (auto& v : t.values()) v = 1.0;
        } else if (!is_zeroed) {
            for (auto& v : t.values()) v = rng.clipped_normal(kInitStd);
        }
    });
    return net;
}

// ---------------------------------------------------------------------------
// forward pass
// ---------------------------------------------------------------------------

// Cuts the window into N contiguous S-sample blocks and flattens each
// block channel-major: entry s*S + ch holds channel ch at local sample s.
inline Tensor patchify(const Tensor& x, int patch_side) {
    detail::check_2d(x, "patchify");
    const std::int64_t s = x.shape()[0];
    const std::int64_t w = x.shape()[1];
    if (s != patch_side)
        throw ShapeError("patchify: expected " + std::to_string(patch_side) +
                         " channels, got " + shape_str(x.shape()));
    if (w < patch_side)
        throw ShapeError("patchify: window " + shape_str(x.shape()) +
                         " is shorter than one patch side " + std::to_string(patch_side));
    const std::int64_t n = w / patch_side;
    const std::int64_t s2 = static_cast<std::int64_t>(patch_side) * patch_side;
    std::vector<double> out(static_cast<std::size_t>(n * s2));
    const double* px = x.data();
    for (std::int64_t j = 0; j < n; ++j)
        for (std::int64_t local = 0; local < patch_side; ++local)
            for (std::int64_t ch = 0; ch < patch_side; ++ch)
                out[static_cast<std::size_t>(j * s2 + local * patch_side + ch)] =
                    px[ch * w + j * patch_side + local];
    return Tensor::from({n, s2}, std::move(out));
}

// Z0 = [cls; patches . E + bias] + positions, row 0 being the class slot.
inline Tensor embed(const Tensor& patches, const Tensor& proj, const Tensor& bias,
                    const Tensor& cls, const Tensor& positions) {
    const std::int64_t n = patches.shape()[0];
    if (positions.shape()[0] != n + 1)
        throw ShapeError("embed: position table has " + std::to_string(positions.shape()[0]) +
                         " rows but the sequence needs " + std::to_string(n + 1));
    Tensor projected = add_rowvec(matmul(patches, proj), bias);
    Tensor z0 = concat_rows({cls, projected});
    return add(z0, positions);
}

// Single-head attention: split [Q,K,V], scale scores by 1/sqrt(dh),
// normalize row-wise, mix values.
inline Tensor self_attention(const Tensor& z, const Tensor& w_qkv) {
    const std::int64_t three_dh = w_qkv.shape()[1];
    if (three_dh % 3 != 0)
        throw ShapeError("self_attention: projection width " + std::to_string(three_dh) +
                         " is not a multiple of 3");
    const std::int64_t dh = three_dh / 3;
    Tensor qkv = matmul(z, w_qkv);
    Tensor q = slice_cols(qkv, 0, dh);
    Tensor k = slice_cols(qkv, dh, 2 * dh);
    Tensor v = slice_cols(qkv, 2 * dh, 3 * dh);
    Tensor scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh)));
    return attn_mix(softmax_rows(scores), v);
}

// Multi-head attention over a stacked projection: run each head's slice,
// concatenate, reproject.
inline Tensor msa(const Tensor& z, const Tensor& qkv_stacked, const Tensor& w_out,
                  const Tensor& b_out, int heads) {
    const std::int64_t d = z.shape()[1];
    if (d % heads != 0)
        throw ShapeError("msa: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
    if (qkv_stacked.shape()[0] != d || qkv_stacked.shape()[1] != 3 * d)
        throw ShapeError("msa: stacked projection must be " + std::to_string(d) + "x" +
                         std::to_string(3 * d) + ", got " + shape_str(qkv_stacked.shape()));
    const std::int64_t dh = d / heads;
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(static_cast<std::size_t>(heads));
    for (int i = 0; i < heads; ++i)
        head_outputs.push_back(
            self_attention(z, slice_cols(qkv_stacked, 3 * dh * i, 3 * dh * (i + 1))));
    return add_rowvec(matmul(concat_cols(head_outputs), w_out), b_out);
}

// Pre-norm encoder layer: attention and MLP each read a normalized copy
// and add back onto the residual stream.
inline Tensor encoder_layer(const Tensor& z, const EncoderLayerParams& p, int heads,
                            double dropout_rate = 0.0, Rng* rng = nullptr) {
    Tensor attended = msa(layer_norm(z, p.ln1_gamma, p.ln1_beta, kLayerNormEps), p.qkv, p.msa_w,
                          p.msa_b, heads);
    Tensor z_mid = add(attended, z);
    Tensor h = gelu(add_rowvec(matmul(layer_norm(z_mid, p.ln2_gamma, p.ln2_beta, kLayerNormEps),
                                      p.mlp_w1),
                               p.mlp_b1));
    if (dropout_rate > 0.0 && rng) h = dropout(h, dropout_rate, *rng);
    Tensor out = add_rowvec(matmul(h, p.mlp_w2), p.mlp_b2);
    return add(out, z_mid);
}

// Full forward pass for one window; training mode enables dropout when
// the config requests it.
inline Tensor forward(const TemgNet& net, const Tensor& x, Rng* dropout_rng = nullptr) {
    const ModelConfig& cfg = net.config;
    if (x.shape() != Shape{cfg.patch_side, cfg.window_samples})
        throw ShapeError("forward: window " + shape_str(x.shape()) + " does not match the model's " +
                         shape_str({cfg.patch_side, cfg.window_samples}));
    Tensor z = embed(patchify(x, cfg.patch_side), net.patch_proj, net.patch_bias, net.cls_token,
                     net.pos_table);
    if (cfg.dropout_rate > 0.0 && dropout_rng) z = dropout(z, cfg.dropout_rate, *dropout_rng);
    for (const auto& layer : net.layers)
        z = encoder_layer(z, layer, cfg.heads, cfg.dropout_rate, dropout_rng);
    Tensor cls = row(z, 0);
    Tensor normed = layer_norm(cls, net.final_gamma, net.final_beta, kLayerNormEps);
    return add_rowvec(matmul(normed, net.head_w), net.head_b);
}

// Deep, detached copy of all parameters (used for checkpoints).
inline TemgNet clone_model(TemgNet& net) {
    TemgNet out;
    out.config = net.config;
    out.init_seed = net.init_seed;
    out.layers.resize(net.layers.size());
    auto src = net.named_params();
    std::size_t i = 0;
    out.for_each_param([&](const std::string& name, Tensor& t) {
        if (src[i].first != name) throw InternalError("parameter order mismatch in clone");
        t = src[i].second.clone();
        ++i;
    });
    return out;
}

}  // namespace temgnet
