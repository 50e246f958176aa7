#include "reftfl/backbone.hpp"

#include <cmath>
#include <string>

#include "reftfl/errors.hpp"

namespace reftfl {

namespace {

// Generation order (fixed): embedding row-major, then per layer the block
// weight row-major followed by its bias.
constexpr double kEmbeddingScale = 1.0;   // divided by sqrt(d) below
constexpr double kBlockGain = 1.2;        // divided by sqrt(d) below
constexpr double kBlockBiasScale = 0.1;

Vector softmax(const Vector& logits) {
    double max_logit = logits[0];
    for (double v : logits) max_logit = std::max(max_logit, v);
    Vector probs(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - max_logit);
        total += probs[i];
    }
    for (double& p : probs) p /= total;
    return probs;
}

}  // namespace

FrozenBackbone make_backbone(const BackboneConfig& config) {
    if (config.num_layers < 1 || config.hidden_dim < 1 || config.seq_len < 1 ||
        config.vocab < 1 || config.classes < 1) {
        throw ConfigError("backbone: all dimensions must be positive");
    }
    FrozenBackbone backbone;
    backbone.config = config;
    Rng rng(config.seed);
    const auto d = static_cast<std::size_t>(config.hidden_dim);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    backbone.embedding =
        gaussian_matrix(static_cast<std::size_t>(config.vocab), d, rng, kEmbeddingScale * inv_sqrt_d);
    backbone.layer_weights.reserve(static_cast<std::size_t>(config.num_layers));
    backbone.layer_biases.reserve(static_cast<std::size_t>(config.num_layers));
    for (int l = 0; l < config.num_layers; ++l) {
        backbone.layer_weights.push_back(gaussian_matrix(d, d, rng, kBlockGain * inv_sqrt_d));
        backbone.layer_biases.push_back(gaussian_vector(d, rng, kBlockBiasScale));
    }
    return backbone;
}

ClassifierHead make_head(int hidden_dim, int classes, Rng& rng) {
    if (hidden_dim < 1 || classes < 1) {
        throw ConfigError("head: dimensions must be positive");
    }
    const auto d = static_cast<std::size_t>(hidden_dim);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    ClassifierHead head;
    head.w_proj = gaussian_matrix(d, d, rng, inv_sqrt_d);
    head.b_proj = Vector(d, 0.0);
    head.w_out = gaussian_matrix(static_cast<std::size_t>(classes), d, rng, inv_sqrt_d);
    head.b_out = Vector(static_cast<std::size_t>(classes), 0.0);
    return head;
}

ForwardTrace forward(const FrozenBackbone& backbone, const ClassifierHead& head,
                     const ParamBundle& bundle, const std::vector<int>& tokens) {
    const BackboneConfig& cfg = backbone.config;
    const auto n = static_cast<std::size_t>(cfg.seq_len);
    const auto d = static_cast<std::size_t>(cfg.hidden_dim);
    if (tokens.size() != n) {
        throw InputError("forward: expected " + std::to_string(n) + " tokens, got " +
                         std::to_string(tokens.size()));
    }
    for (int t : tokens) {
        if (t < 0 || t >= cfg.vocab) {
            throw InputError("forward: token id " + std::to_string(t) + " outside vocab " +
                             std::to_string(cfg.vocab));
        }
    }
    const bool has_schedule = !bundle.slots.empty();
    std::vector<int> scheduled_positions;
    if (has_schedule) {
        bundle.schedule.validate(cfg.num_layers, cfg.seq_len);
        if (bundle.dim() != d) {
            throw ShapeError("forward: intervention dim " + std::to_string(bundle.dim()) +
                             " vs hidden dim " + std::to_string(d));
        }
        scheduled_positions = bundle.schedule.positions(cfg.seq_len);
    }

    ForwardTrace trace;
    trace.embedded.resize(n);
    // Position 0 pools the whole sequence: its input is the mean embedding.
    Vector mean(d, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        const double* row = backbone.embedding.row(static_cast<std::size_t>(tokens[p]));
        for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
    }
    for (double& v : mean) v /= static_cast<double>(n);
    trace.embedded[0] = mean;
    for (std::size_t p = 1; p < n; ++p) {
        const double* row = backbone.embedding.row(static_cast<std::size_t>(tokens[p]));
        trace.embedded[p].assign(row, row + d);
    }

    trace.pre.resize(static_cast<std::size_t>(cfg.num_layers));
    trace.post.resize(static_cast<std::size_t>(cfg.num_layers));
    std::vector<Vector> h = trace.embedded;
    for (int l = 0; l < cfg.num_layers; ++l) {
        auto& pre_l = trace.pre[static_cast<std::size_t>(l)];
        auto& post_l = trace.post[static_cast<std::size_t>(l)];
        pre_l.resize(n);
        post_l.resize(n);
        const Matrix& a = backbone.layer_weights[static_cast<std::size_t>(l)];
        const Vector& c = backbone.layer_biases[static_cast<std::size_t>(l)];
        for (std::size_t p = 0; p < n; ++p) {
            Vector z = matvec(a, h[p]);
            for (std::size_t j = 0; j < d; ++j) {
                z[j] = h[p][j] + std::tanh(z[j] + c[j]);
            }
            pre_l[p] = std::move(z);
            post_l[p] = pre_l[p];
        }
        if (has_schedule) {
            for (int p : scheduled_positions) {
                const int idx = bundle.slot_index(l, p);
                if (idx >= 0) {
                    post_l[static_cast<std::size_t>(p)] =
                        loreft_apply(bundle.params[static_cast<std::size_t>(idx)], pre_l[static_cast<std::size_t>(p)]);
                }
            }
        }
        h = post_l;
    }

    trace.pooled = trace.post.back()[0];
    Vector hidden = matvec(head.w_proj, trace.pooled);
    for (std::size_t j = 0; j < hidden.size(); ++j) {
        hidden[j] = std::tanh(hidden[j] + head.b_proj[j]);
    }
    trace.head_hidden = std::move(hidden);
    trace.logits = matvec(head.w_out, trace.head_hidden);
    for (std::size_t i = 0; i < trace.logits.size(); ++i) {
        trace.logits[i] += head.b_out[i];
    }
    trace.probs = softmax(trace.logits);
    return trace;
}

double loss(const ForwardTrace& trace, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= trace.logits.size()) {
        throw InputError("loss: label " + std::to_string(label) + " outside " +
                         std::to_string(trace.logits.size()) + " classes");
    }
    double max_logit = trace.logits[0];
    for (double v : trace.logits) max_logit = std::max(max_logit, v);
    double lse = 0.0;
    for (double v : trace.logits) lse += std::exp(v - max_logit);
    return max_logit + std::log(lse) - trace.logits[static_cast<std::size_t>(label)];
}

Gradients backward(const ForwardTrace& trace, int label, const FrozenBackbone& backbone,
                   const ClassifierHead& head, const ParamBundle& bundle) {
    const BackboneConfig& cfg = backbone.config;
    const auto n = static_cast<std::size_t>(cfg.seq_len);
    const auto d = static_cast<std::size_t>(cfg.hidden_dim);
    if (trace.pre.size() != static_cast<std::size_t>(cfg.num_layers) || trace.embedded.size() != n ||
        trace.pooled.size() != d || trace.logits.size() != static_cast<std::size_t>(cfg.classes)) {
        throw InputError("backward: trace does not match backbone configuration");
    }
    if (!bundle.slots.empty() && bundle.dim() != d) {
        throw InputError("backward: bundle does not match trace dimensions");
    }
    if (label < 0 || label >= cfg.classes) {
        throw InputError("backward: label outside classes");
    }

    Gradients grads;
    grads.head.w_proj = Matrix(d, d);
    grads.head.b_proj = Vector(d, 0.0);
    grads.head.w_out = Matrix(static_cast<std::size_t>(cfg.classes), d);
    grads.head.b_out = Vector(static_cast<std::size_t>(cfg.classes), 0.0);
    grads.slots.reserve(bundle.params.size());
    for (const LoReftParams& p : bundle.params) {
        grads.slots.push_back(zero_grads(p.rank(), p.dim()));
    }

    // Head: dlogits = probs − onehot(label)
    Vector dlogits = trace.probs;
    dlogits[static_cast<std::size_t>(label)] -= 1.0;
    add_outer(grads.head.w_out, dlogits, trace.head_hidden);
    grads.head.b_out = dlogits;
    Vector dhidden = matvec_t(head.w_out, dlogits);
    for (std::size_t j = 0; j < d; ++j) {
        const double t = trace.head_hidden[j];
        dhidden[j] *= 1.0 - t * t;
    }
    add_outer(grads.head.w_proj, dhidden, trace.pooled);
    grads.head.b_proj = dhidden;
    Vector dz = matvec_t(head.w_proj, dhidden);

    // Per-position upstream gradients at the output of the last layer. Only
    // the pooling position receives loss signal directly.
    std::vector<Vector> dh(n, Vector(d, 0.0));
    dh[0] = dz;

    std::vector<int> scheduled_positions;
    if (!bundle.slots.empty()) {
        scheduled_positions = bundle.schedule.positions(cfg.seq_len);
    }

    for (int l = cfg.num_layers - 1; l >= 0; --l) {
        // Through the intervention at the layer output, where scheduled.
        for (int p : scheduled_positions) {
            const int idx = bundle.slot_index(l, p);
            if (idx < 0) continue;
            const auto pu = static_cast<std::size_t>(p);
            const auto iu = static_cast<std::size_t>(idx);
            ApplyVjp vjp = loreft_apply_vjp(bundle.params[iu], trace.pre[static_cast<std::size_t>(l)][pu], dh[pu]);
            dh[pu] = std::move(vjp.input);
            grads.slots[iu].w.data() = add(grads.slots[iu].w.data(), vjp.params.w.data());
            grads.slots[iu].r.data() = add(grads.slots[iu].r.data(), vjp.params.r.data());
            grads.slots[iu].b = add(grads.slots[iu].b, vjp.params.b);
        }
        // Through the residual block: out = in + tanh(A·in + c).
        const Matrix& a = backbone.layer_weights[static_cast<std::size_t>(l)];
        for (std::size_t p = 0; p < n; ++p) {
            const Vector& in =
                (l == 0) ? trace.embedded[p] : trace.post[static_cast<std::size_t>(l - 1)][p];
            const Vector& out = trace.pre[static_cast<std::size_t>(l)][p];
            Vector dt(d);
            for (std::size_t j = 0; j < d; ++j) {
                const double t = out[j] - in[j];  // tanh(A·in + c)
                dt[j] = dh[p][j] * (1.0 - t * t);
            }
            const Vector back = matvec_t(a, dt);
            for (std::size_t j = 0; j < d; ++j) {
                dh[p][j] += back[j];
            }
        }
    }
    return grads;
}

}  // namespace reftfl
