#include "reftfl/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "reftfl/errors.hpp"

namespace reftfl {

namespace {

// Sums values in ascending order; permutation-invariant at bit level.
double sorted_sum(Vector& terms) {
    std::sort(terms.begin(), terms.end());
    double acc = 0.0;
    for (double t : terms) acc += t;
    return acc;
}

struct Span {
    const double* data;
    std::size_t size;
};

double span_distance(const Vector& y, const Span& x) {
    double acc = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) {
        const double d = y[j] - x.data[j];
        acc += d * d;
    }
    return std::sqrt(acc);
}

// Weiszfeld iteration over one parameter group.
std::pair<Vector, WeiszfeldDiagnostics> weiszfeld(const std::vector<Span>& points,
                                                  const WeiszfeldConfig& cfg) {
    const std::size_t n = points.size();
    const std::size_t dim = points.front().size;
    WeiszfeldDiagnostics diag;

    if (n == 1) {
        diag.converged = true;
        diag.objective_trace.push_back(0.0);
        return {Vector(points[0].data, points[0].data + dim), diag};
    }
    // A set of identical points has that point as its median.
    bool all_identical = true;
    for (std::size_t i = 1; i < n && all_identical; ++i) {
        for (std::size_t j = 0; j < dim; ++j) {
            if (points[i].data[j] != points[0].data[j]) {
                all_identical = false;
                break;
            }
        }
    }
    if (all_identical) {
        diag.converged = true;
        diag.objective_trace.push_back(0.0);
        return {Vector(points[0].data, points[0].data + dim), diag};
    }

    // Start at the coordinate-wise mean.
    Vector y(dim, 0.0);
    Vector terms(n);
    for (std::size_t j = 0; j < dim; ++j) {
        for (std::size_t i = 0; i < n; ++i) terms[i] = points[i].data[j];
        y[j] = sorted_sum(terms) / static_cast<double>(n);
    }

    Vector dist(n), weight(n);
    const auto objective = [&](const Vector& at) {
        for (std::size_t i = 0; i < n; ++i) terms[i] = span_distance(at, points[i]);
        return sorted_sum(terms);
    };
    diag.objective_trace.push_back(objective(y));

    Vector next(dim);
    for (int iter = 0; iter < cfg.max_iter; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            dist[i] = std::max(span_distance(y, points[i]), cfg.eps);
            weight[i] = 1.0 / dist[i];
        }
        Vector wterms = weight;
        const double total_weight = sorted_sum(wterms);
        for (std::size_t j = 0; j < dim; ++j) {
            for (std::size_t i = 0; i < n; ++i) terms[i] = points[i].data[j] * weight[i];
            next[j] = sorted_sum(terms) / total_weight;
        }
        const double moved = l2_distance(next, y);
        y = next;
        ++diag.iterations;
        diag.objective_trace.push_back(objective(y));
        if (moved < cfg.tol) {
            diag.converged = true;
            break;
        }
    }
    return {std::move(y), diag};
}

std::vector<Span> group_spans(const std::vector<const ParamVector*>& points, const GroupSpan& group) {
    std::vector<Span> spans;
    spans.reserve(points.size());
    for (const ParamVector* p : points) {
        spans.push_back(Span{p->flat.data() + group.offset, group.size});
    }
    return spans;
}

GeometricMedianResult geometric_median_impl(const std::vector<const ParamVector*>& points,
                                            const WeiszfeldConfig& cfg) {
    cfg.validate();
    if (points.empty()) {
        throw InputError("geometric_median: empty point set");
    }
    const ParamVector& first = *points.front();
    for (const ParamVector* p : points) {
        if (!same_layout(first, *p)) {
            throw InputError("geometric_median: point layouts differ");
        }
        if (!all_finite(p->flat)) {
            throw NumericError("geometric_median: non-finite point");
        }
    }
    GeometricMedianResult result;
    result.point.flat.assign(first.flat.size(), 0.0);
    result.point.groups = first.groups;
    for (const GroupSpan& group : first.groups) {
        auto [median, diag] = weiszfeld(group_spans(points, group), cfg);
        std::copy(median.begin(), median.end(), result.point.flat.begin() + static_cast<long>(group.offset));
        result.groups.push_back(std::move(diag));
    }
    return result;
}

}  // namespace

ParamVector make_point(Vector flat) {
    ParamVector p;
    p.groups.push_back(GroupSpan{"all", 0, flat.size()});
    p.flat = std::move(flat);
    return p;
}

bool same_layout(const ParamVector& a, const ParamVector& b) {
    return a.flat.size() == b.flat.size() && a.groups == b.groups;
}

void WeiszfeldConfig::validate() const {
    if (!(tol > 0.0) || !(eps > 0.0) || max_iter < 1) {
        throw ConfigError("weiszfeld: need tol > 0, eps > 0, max_iter >= 1");
    }
}

GeometricMedianResult geometric_median(const std::vector<ParamVector>& points,
                                       const WeiszfeldConfig& cfg) {
    std::vector<const ParamVector*> refs;
    refs.reserve(points.size());
    for (const ParamVector& p : points) refs.push_back(&p);
    return geometric_median_impl(refs, cfg);
}

GeometricMedianResult abm_aggregate(const std::map<int, ParamVector>& all, int client,
                                    const WeiszfeldConfig& cfg) {
    if (all.size() < 2) {
        throw InputError("abm_aggregate: need at least two clients");
    }
    if (all.find(client) == all.end()) {
        throw InputError("abm_aggregate: unknown client " + std::to_string(client));
    }
    std::vector<const ParamVector*> others;
    others.reserve(all.size() - 1);
    for (const auto& [id, point] : all) {
        if (id != client) others.push_back(&point);
    }
    return geometric_median_impl(others, cfg);
}

ParamVector fedavg(const std::map<int, ParamVector>& all, const std::map<int, double>& weights) {
    if (all.empty()) {
        throw InputError("fedavg: empty client set");
    }
    double total = 0.0;
    for (const auto& [id, point] : all) {
        const auto it = weights.find(id);
        if (it == weights.end()) {
            throw InputError("fedavg: missing weight for client " + std::to_string(id));
        }
        if (it->second < 0.0) {
            throw InputError("fedavg: negative weight for client " + std::to_string(id));
        }
        total += it->second;
    }
    if (!(total > 0.0)) {
        throw InputError("fedavg: total weight is zero");
    }
    const ParamVector& first = all.begin()->second;
    ParamVector out;
    out.groups = first.groups;
    out.flat.assign(first.flat.size(), 0.0);
    for (const auto& [id, point] : all) {
        if (!same_layout(first, point)) {
            throw InputError("fedavg: point layouts differ");
        }
        axpy(out.flat, weights.at(id) / total, point.flat);
    }
    return out;
}

ParamVector mean_abm(const std::map<int, ParamVector>& all, int client) {
    if (all.size() < 2) {
        throw InputError("mean_abm: need at least two clients");
    }
    if (all.find(client) == all.end()) {
        throw InputError("mean_abm: unknown client " + std::to_string(client));
    }
    const ParamVector& first = all.begin()->second;
    ParamVector out;
    out.groups = first.groups;
    out.flat.assign(first.flat.size(), 0.0);
    const double share = 1.0 / static_cast<double>(all.size() - 1);
    for (const auto& [id, point] : all) {
        if (!same_layout(first, point)) {
            throw InputError("mean_abm: point layouts differ");
        }
        if (id != client) {
            axpy(out.flat, share, point.flat);
        }
    }
    return out;
}

}  // namespace reftfl
