#pragma once

#include <map>
#include <string>
#include <vector>

#include "reftfl/linalg.hpp"

namespace reftfl {

// A named contiguous slice of a flattened parameter vector. Aggregation runs
// per group so each parameter family (W, R, b) is combined independently.
struct GroupSpan {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;

    bool operator==(const GroupSpan&) const = default;
};

// One client's shared parameters, flattened. Layouts must be identical
// across all clients participating in a round.
struct ParamVector {
    Vector flat;
    std::vector<GroupSpan> groups;
};

// Wraps a plain point as a single-group ParamVector.
ParamVector make_point(Vector flat);

bool same_layout(const ParamVector& a, const ParamVector& b);

struct WeiszfeldConfig {
    double tol = 1e-9;     // stop once the iterate moves less than this in L2
    int max_iter = 1000;
    double eps = 1e-10;    // smoothing floor on distances

    void validate() const;
};

struct WeiszfeldDiagnostics {
    int iterations = 0;
    bool converged = false;
    std::vector<double> objective_trace;  // f(y⁰), f(y¹), ...; non-increasing

    double final_objective() const { return objective_trace.empty() ? 0.0 : objective_trace.back(); }
};

struct GeometricMedianResult {
    ParamVector point;
    std::vector<WeiszfeldDiagnostics> groups;  // aligned with point.groups
};

/**
 * Geometric median of a non-empty point set, computed group-by-group with
 * Weiszfeld's iteratively reweighted averaging
 *
 *     y ← Σᵢ(xᵢ/dᵢ) / Σᵢ(1/dᵢ),   dᵢ = max(‖y − xᵢ‖, eps),
 *
 * starting from the coordinate-wise mean. The recorded objective trace
 * Σᵢ‖y − xᵢ‖ is non-increasing. Inner sums accumulate their terms in
 * value-sorted order, so the result is exactly invariant under permutations
 * of the input list. Exhausting max_iter is not an error: the last iterate
 * is returned with converged = false.
 */
GeometricMedianResult geometric_median(const std::vector<ParamVector>& points,
                                       const WeiszfeldConfig& cfg = {});

// Leave-one-out aggregate for `client`: the geometric median over every
// other client's parameters, per group. Requires at least two clients.
GeometricMedianResult abm_aggregate(const std::map<int, ParamVector>& all, int client,
                                    const WeiszfeldConfig& cfg = {});

// Weighted arithmetic mean; weights are per-client example counts.
ParamVector fedavg(const std::map<int, ParamVector>& all, const std::map<int, double>& weights);

// Arithmetic mean over every client except `client`.
ParamVector mean_abm(const std::map<int, ParamVector>& all, int client);

}  // namespace reftfl
