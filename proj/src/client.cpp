#include "reftfl/client.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "reftfl/errors.hpp"

namespace reftfl {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// Trainable scalar order: head (w_proj, b_proj, w_out, b_out), then per slot
// W, R, b in bundle order. Gradients flatten identically.
void for_each_trainable(ClientState& state, const std::function<void(Vector&)>& fn) {
    fn(state.head.w_proj.data());
    fn(state.head.b_proj);
    fn(state.head.w_out.data());
    fn(state.head.b_out);
    for (LoReftParams& p : state.bundle.params) {
        fn(p.w.data());
        fn(p.r.data());
        fn(p.b);
    }
}

Vector flatten_gradients(const Gradients& grads) {
    Vector flat;
    auto append = [&flat](const Vector& v) { flat.insert(flat.end(), v.begin(), v.end()); };
    append(grads.head.w_proj.data());
    append(grads.head.b_proj);
    append(grads.head.w_out.data());
    append(grads.head.b_out);
    for (const LoReftGrads& g : grads.slots) {
        append(g.w.data());
        append(g.r.data());
        append(g.b);
    }
    return flat;
}

// Layout check plus blended copy; exact copies at the endpoints.
ParamBundle interpolate_shared(const ParamBundle& local, const ParamVector& aggregate, double alpha,
                               SharingStrategy strategy) {
    const ParamVector reference = extract_shared(local, strategy);
    if (!same_layout(reference, aggregate)) {
        throw InputError("fuse: aggregate layout does not match the client's shared groups");
    }
    ParamBundle fused = local;
    std::size_t offset = 0;
    auto blend = [&](Vector& target) {
        for (double& value : target) {
            const double incoming = aggregate.flat[offset++];
            if (alpha == 0.0) {
                // keep value
            } else if (alpha == 1.0) {
                value = incoming;
            } else {
                value = (1.0 - alpha) * value + alpha * incoming;
            }
        }
    };
    if (shares_w(strategy)) {
        for (LoReftParams& p : fused.params) blend(p.w.data());
    }
    for (LoReftParams& p : fused.params) blend(p.r.data());
    if (shares_b(strategy)) {
        for (LoReftParams& p : fused.params) blend(p.b);
    }
    return fused;
}

double mean_loss(const ClientState& state, const FrozenBackbone& backbone, const ParamBundle& bundle,
                 const std::vector<Example>& examples) {
    double total = 0.0;
    for (const Example& ex : examples) {
        total += loss(forward(backbone, state.head, bundle, ex.tokens), ex.label);
    }
    return total / static_cast<double>(examples.size());
}

}  // namespace

AlphaGrid AlphaGrid::default_grid() {
    AlphaGrid grid;
    for (int i = 0; i <= 10; ++i) {
        grid.values.push_back(static_cast<double>(i) / 10.0);
    }
    return grid;
}

void AlphaGrid::validate() const {
    if (values.empty()) {
        throw ConfigError("alpha grid: empty");
    }
    if (!std::is_sorted(values.begin(), values.end())) {
        throw ConfigError("alpha grid: values must be sorted ascending");
    }
    for (double a : values) {
        if (!(a >= 0.0 && a <= 1.0)) {
            throw ConfigError("alpha grid: values must lie in [0, 1]");
        }
    }
}

ClientState make_client(int id, const FrozenBackbone& backbone, const InterventionSchedule& schedule,
                        std::size_t rank, InitScheme scheme, std::uint64_t seed,
                        std::vector<Example> train, std::vector<Example> val) {
    schedule.validate(backbone.config.num_layers, backbone.config.seq_len);
    ClientState state{.id = id,
                      .bundle = {},
                      .head = {},
                      .opt = {},
                      .train = std::move(train),
                      .val = std::move(val),
                      .rng = Rng(seed),
                      .alpha_history = {}};
    state.head = make_head(backbone.config.hidden_dim, backbone.config.classes, state.rng);
    state.bundle = make_bundle(schedule, rank, static_cast<std::size_t>(backbone.config.hidden_dim),
                               backbone.config.seq_len, state.rng, scheme);
    const std::size_t n = trainable_count(state);
    state.opt.m.assign(n, 0.0);
    state.opt.v.assign(n, 0.0);
    return state;
}

std::size_t trainable_count(const ClientState& state) {
    std::size_t n = state.head.w_proj.size() + state.head.b_proj.size() + state.head.w_out.size() +
                    state.head.b_out.size();
    for (const LoReftParams& p : state.bundle.params) {
        n += p.w.size() + p.r.size() + p.b.size();
    }
    return n;
}

std::vector<double> local_train(ClientState& state, const FrozenBackbone& backbone,
                                const OptimizerConfig& opt) {
    if (state.train.empty()) {
        throw ConfigError("local_train: empty train split");
    }
    if (opt.batch_size < 1 || opt.epochs < 0 || opt.lr < 0.0 || opt.weight_decay < 0.0) {
        throw ConfigError("local_train: invalid optimizer configuration");
    }
    const std::size_t n_params = trainable_count(state);
    if (state.opt.m.size() != n_params) {
        state.opt.m.assign(n_params, 0.0);
        state.opt.v.assign(n_params, 0.0);
    }

    std::vector<double> curve;
    std::vector<std::size_t> order(state.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        // Deterministic shuffle from the client stream.
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::uint64_t j = state.rng.uniform_below(i);
            std::swap(order[i - 1], order[j]);
        }
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
            const auto count = static_cast<double>(stop - start);
            Vector grad(n_params, 0.0);
            for (std::size_t k = start; k < stop; ++k) {
                const Example& ex = state.train[order[k]];
                const ForwardTrace trace = forward(backbone, state.head, state.bundle, ex.tokens);
                const double l = loss(trace, ex.label);
                if (!std::isfinite(l)) {
                    throw DivergenceError("local_train: non-finite loss",
                                          static_cast<std::size_t>(state.opt.step) + 1);
                }
                epoch_loss += l;
                const Gradients g = backward(trace, ex.label, backbone, state.head, state.bundle);
                axpy(grad, 1.0, flatten_gradients(g));
            }
            for (double& g : grad) g /= count;

            state.opt.step += 1;
            const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.opt.step));
            const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.opt.step));
            std::size_t cursor = 0;
            for_each_trainable(state, [&](Vector& block) {
                for (double& value : block) {
                    const double g = grad[cursor];
                    double& m = state.opt.m[cursor];
                    double& v = state.opt.v[cursor];
                    m = kBeta1 * m + (1.0 - kBeta1) * g;
                    v = kBeta2 * v + (1.0 - kBeta2) * g * g;
                    const double update = (m / bc1) / (std::sqrt(v / bc2) + kAdamEps);
                    value = value * (1.0 - opt.weight_decay) - opt.lr * update;
                    ++cursor;
                }
            });
        }
        curve.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    return curve;
}

ParamVector extract_shared(const ParamBundle& bundle, SharingStrategy strategy) {
    ParamVector out;
    auto add_group = [&out, &bundle](const std::string& name, auto member) {
        GroupSpan span{name, out.flat.size(), 0};
        for (const LoReftParams& p : bundle.params) {
            const Vector& values = member(p);
            out.flat.insert(out.flat.end(), values.begin(), values.end());
            span.size += values.size();
        }
        out.groups.push_back(span);
    };
    if (shares_w(strategy)) {
        add_group("W", [](const LoReftParams& p) -> const Vector& { return p.w.data(); });
    }
    add_group("R", [](const LoReftParams& p) -> const Vector& { return p.r.data(); });
    if (shares_b(strategy)) {
        add_group("b", [](const LoReftParams& p) -> const Vector& { return p.b; });
    }
    return out;
}

std::uint64_t shared_scalar_count(const InterventionSchedule& schedule, std::size_t rank,
                                  std::size_t dim, SharingStrategy strategy) {
    const auto slots = static_cast<std::uint64_t>(schedule.slot_count());
    std::uint64_t per_slot = rank * dim;  // R
    if (shares_w(strategy)) per_slot += rank * dim;
    if (shares_b(strategy)) per_slot += rank;
    return slots * per_slot;
}

AlphaChoice tune_alpha(const ClientState& state, const FrozenBackbone& backbone,
                       const ParamVector& aggregate, const AlphaGrid& grid,
                       SharingStrategy strategy) {
    grid.validate();
    if (state.val.empty()) {
        throw ConfigError("tune_alpha: empty validation split");
    }
    AlphaChoice choice;
    choice.losses.reserve(grid.values.size());
    double best = 0.0;
    for (std::size_t i = 0; i < grid.values.size(); ++i) {
        const double alpha = grid.values[i];
        const ParamBundle candidate = interpolate_shared(state.bundle, aggregate, alpha, strategy);
        const double l = mean_loss(state, backbone, candidate, state.val);
        choice.losses.push_back(l);
        if (i == 0 || l < best) {
            best = l;
            choice.alpha = alpha;
        }
    }
    return choice;
}

void fuse(ClientState& state, const ParamVector& aggregate, double alpha, SharingStrategy strategy) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw InputError("fuse: alpha must lie in [0, 1]");
    }
    ParamBundle fused = interpolate_shared(state.bundle, aggregate, alpha, strategy);
    for (LoReftParams& p : fused.params) {
        p.r = orthonormalize_rows(p.r);
    }
    state.bundle = std::move(fused);
    state.alpha_history.push_back(alpha);
}

EvalMetrics evaluate(const ClientState& state, const FrozenBackbone& backbone,
                     const std::vector<Example>& examples) {
    if (examples.empty()) {
        throw InputError("evaluate: empty example set");
    }
    EvalMetrics metrics;
    int correct = 0;
    for (const Example& ex : examples) {
        const ForwardTrace trace = forward(backbone, state.head, state.bundle, ex.tokens);
        metrics.loss += loss(trace, ex.label);
        const auto pred = static_cast<int>(
            std::max_element(trace.probs.begin(), trace.probs.end()) - trace.probs.begin());
        if (pred == ex.label) ++correct;
    }
    metrics.loss /= static_cast<double>(examples.size());
    metrics.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
    return metrics;
}

}  // namespace reftfl
