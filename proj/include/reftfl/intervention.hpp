#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "reftfl/linalg.hpp"
#include "reftfl/rng.hpp"

namespace reftfl {

/**
 * One low-rank representation intervention: edits a hidden vector h as
 *
 *     h + Rᵀ(W h + b − R h)
 *
 * confining the edit to the r-dimensional row-span of R. R must have
 * orthonormal rows (checked at construction; training may drift, fusion
 * restores it).
 */
struct LoReftParams {
    Matrix w;  // r×d projection of the input
    Matrix r;  // r×d, orthonormal rows spanning the edit subspace
    Vector b;  // length r

    std::size_t rank() const { return r.rows(); }
    std::size_t dim() const { return r.cols(); }
};

// Frobenius norm of R·Rᵀ − I.
double row_orthonormality_error(const Matrix& r);

// Tolerance on row_orthonormality_error for params at rest.
inline constexpr double kOrthonormalityTol = 1e-8;

// Validates shapes, finiteness and row orthonormality of R.
LoReftParams make_loreft_params(Matrix w, Matrix r, Vector b);

enum class InitScheme {
    IdentityStart,  // W = R, b = 0: the intervention starts as a no-op
    Gaussian,       // W = 0.01·N(0,1), b = 0
};

LoReftParams init_loreft(std::size_t rank, std::size_t dim, Rng& rng,
                         InitScheme scheme = InitScheme::IdentityStart);

// Returns h + Rᵀ(Wh + b − Rh); h is not modified.
Vector loreft_apply(const LoReftParams& p, const Vector& h);

struct LoReftGrads {
    Matrix w;  // r×d
    Matrix r;  // r×d
    Vector b;  // r
};

LoReftGrads zero_grads(std::size_t rank, std::size_t dim);

struct ApplyVjp {
    Vector input;       // dL/dh = upstream + (Wᵀ − Rᵀ)(R·upstream)
    LoReftGrads params;
};

// Reverse-mode derivatives of loreft_apply() at (p, h) against `upstream` = dL/d(output).
ApplyVjp loreft_apply_vjp(const LoReftParams& p, const Vector& h, const Vector& upstream);

/**
 * Which (layer, position) slots receive interventions. Positions are the
 * first `prefix_len` and the last `suffix_len` of the sequence; the two
 * ranges must not overlap. Tied schedules share one parameter triple per
 * layer across all its positions; untied schedules give each (layer,
 * position) pair its own.
 */
struct InterventionSchedule {
    std::vector<int> layers;
    int prefix_len = 1;
    int suffix_len = 0;
    bool tied = true;

    int num_positions() const { return prefix_len + suffix_len; }
    int slot_count() const;

    // 0-based position indices for a sequence of length `seq_len`.
    std::vector<int> positions(int seq_len) const;

    // Throws ScheduleError when a layer or position falls outside the backbone.
    void validate(int num_layers, int seq_len) const;
};

// Total trainable scalars: slots × (2·r·d + r). Total function; r = 0 gives 0.
std::uint64_t param_count(const InterventionSchedule& schedule, std::size_t rank, std::size_t dim);

inline constexpr int kTiedPosition = -1;

struct Slot {
    int layer = 0;
    int position = kTiedPosition;  // kTiedPosition for tied slots

    bool operator==(const Slot&) const = default;
};

// A client's full intervention parameter set, one LoReftParams per slot.
struct ParamBundle {
    InterventionSchedule schedule;
    std::vector<Slot> slots;
    std::vector<LoReftParams> params;  // aligned with slots

    std::size_t rank() const { return params.empty() ? 0 : params.front().rank(); }
    std::size_t dim() const { return params.empty() ? 0 : params.front().dim(); }

    // Index of the slot applied at (layer, position), or -1 if unscheduled.
    int slot_index(int layer, int position) const;
};

// Untied slots are keyed by absolute position, so the sequence length is
// fixed at construction.
ParamBundle make_bundle(const InterventionSchedule& schedule, std::size_t rank, std::size_t dim,
                        int seq_len, Rng& rng, InitScheme scheme = InitScheme::IdentityStart);

/**
 * Checkpoint format (text, bit-exact round trip):
 *
 *   reftfl-checkpoint v1
 *   seed <u64>
 *   schedule layers=<l0,l1,...> prefix=<p> suffix=<s> tied=<0|1> rank=<r> dim=<d>
 *   slot layer=<l> position=<p|tied>
 *   W <r·d shortest-round-trip decimals, row-major>
 *   R <r·d values>
 *   b <r values>
 *   ... (one slot record per bundle slot, in bundle order)
 *
 * Values are written with std::to_chars shortest form, which parses back to
 * the identical double.
 */
void save_checkpoint(const ParamBundle& bundle, std::uint64_t seed, std::ostream& out);

struct Checkpoint {
    ParamBundle bundle;
    std::uint64_t seed = 0;
};

Checkpoint load_checkpoint(std::istream& in);

}  // namespace reftfl
