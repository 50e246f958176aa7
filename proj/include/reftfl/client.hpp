#pragma once

#include <cstdint>
#include <vector>

#include "reftfl/aggregation.hpp"
#include "reftfl/backbone.hpp"
#include "reftfl/intervention.hpp"
#include "reftfl/rng.hpp"
#include "reftfl/sharing.hpp"
#include "reftfl/synthdata.hpp"

namespace reftfl {

// Candidate interpolation coefficients; sorted, within [0, 1].
struct AlphaGrid {
    std::vector<double> values;

    static AlphaGrid default_grid();  // {0.0, 0.1, ..., 1.0}
    void validate() const;
};

// First/second moment estimates for every trainable scalar, plus the step
// counter for bias correction.
struct AdamState {
    Vector m;
    Vector v;
    std::int64_t step = 0;
};

struct OptimizerConfig {
    double lr = 0.01;
    double weight_decay = 0.0;
    int epochs = 3;
    int batch_size = 16;
};

// One simulated client: intervention parameters, a private classifier head
// (never shared), optimizer state and local data splits.
struct ClientState {
    int id = 0;
    ParamBundle bundle;
    ClassifierHead head;
    AdamState opt;
    std::vector<Example> train;
    std::vector<Example> val;
    Rng rng;
    std::vector<double> alpha_history;
};

ClientState make_client(int id, const FrozenBackbone& backbone, const InterventionSchedule& schedule,
                        std::size_t rank, InitScheme scheme, std::uint64_t seed,
                        std::vector<Example> train, std::vector<Example> val);

// Number of trainable scalars (head + every intervention slot).
std::size_t trainable_count(const ClientState& state);

/**
 * Trains φ and ψ with adaptive moment estimation (β₁ = 0.9, β₂ = 0.999,
 * eps = 1e-8) and decoupled weight decay applied as θ ← θ·(1 − wd) each
 * step, independent of the learning rate. Batch order is a deterministic
 * shuffle from the client rng. Returns the per-epoch mean training loss.
 *
 * Throws DivergenceError (with the optimizer step index) when a batch loss
 * turns non-finite.
 */
std::vector<double> local_train(ClientState& state, const FrozenBackbone& backbone,
                                const OptimizerConfig& opt);

// Flattens the bundle's shared groups (per the strategy) into one vector:
// groups in W, R, b order, each concatenating slots in bundle order.
ParamVector extract_shared(const ParamBundle& bundle, SharingStrategy strategy);

// Expected flat length of extract_shared without building it.
std::uint64_t shared_scalar_count(const InterventionSchedule& schedule, std::size_t rank,
                                  std::size_t dim, SharingStrategy strategy);

struct AlphaChoice {
    double alpha = 0.0;
    std::vector<double> losses;  // validation loss per grid candidate
};

/**
 * Evaluates the validation loss of (1−α)·local + α·aggregate for every grid
 * candidate and returns the argmin; ties break toward the smaller α.
 */
AlphaChoice tune_alpha(const ClientState& state, const FrozenBackbone& backbone,
                       const ParamVector& aggregate, const AlphaGrid& grid,
                       SharingStrategy strategy);

/**
 * X ← (1−α)·X_local + α·X_aggregate for each shared group, exact at the
 * α = 0 and α = 1 endpoints; unshared groups are untouched. Every slot's R
 * is re-orthonormalized afterwards, at any α.
 */
void fuse(ClientState& state, const ParamVector& aggregate, double alpha, SharingStrategy strategy);

struct EvalMetrics {
    double loss = 0.0;
    double accuracy = 0.0;
};

EvalMetrics evaluate(const ClientState& state, const FrozenBackbone& backbone,
                     const std::vector<Example>& examples);

}  // namespace reftfl
