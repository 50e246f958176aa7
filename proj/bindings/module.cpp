// Python bindings for the main operations: the intervention arithmetic,
// the robust aggregation rules, parameter accounting and the experiment
// runner. Matrices cross the boundary as 2-D float64 numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "reftfl/aggregation.hpp"
#include "reftfl/errors.hpp"
#include "reftfl/intervention.hpp"
#include "reftfl/linalg.hpp"
#include "reftfl/orchestrator.hpp"
#include "reftfl/synthdata.hpp"

namespace py = pybind11;
using namespace reftfl;

namespace {

Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr,
                 const char* name) {
    if (arr.ndim() != 2) {
        throw ShapeError(std::string(name) + ": expected a 2-D array");
    }
    const auto rows = static_cast<std::size_t>(arr.shape(0));
    const auto cols = static_cast<std::size_t>(arr.shape(1));
    Vector data(arr.data(), arr.data() + rows * cols);
    return Matrix(rows, cols, std::move(data));
}

Vector to_vector(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr,
                 const char* name) {
    if (arr.ndim() != 1) {
        throw ShapeError(std::string(name) + ": expected a 1-D array");
    }
    return Vector(arr.data(), arr.data() + arr.shape(0));
}

py::array_t<double> from_vector(const Vector& v) {
    py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::array_t<double> from_matrix(const Matrix& m) {
    py::array_t<double> out({static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

std::vector<ParamVector> rows_as_points(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& pts) {
    if (pts.ndim() != 2) {
        throw ShapeError("points: expected a 2-D array (one row per point)");
    }
    const auto n = static_cast<std::size_t>(pts.shape(0));
    const auto dim = static_cast<std::size_t>(pts.shape(1));
    std::vector<ParamVector> points;
    points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        points.push_back(make_point(Vector(pts.data() + i * dim, pts.data() + (i + 1) * dim)));
    }
    return points;
}

py::dict diagnostics_dict(const WeiszfeldDiagnostics& diag) {
    py::dict out;
    out["iterations"] = diag.iterations;
    out["converged"] = diag.converged;
    out["objective"] = diag.final_objective();
    out["objective_trace"] = from_vector(diag.objective_trace);
    return out;
}

nlohmann::json summary_json(const ExperimentSummary& summary) {
    nlohmann::json j;
    j["mean_final_accuracy"] = summary.mean_final_accuracy;
    j["clients"] = nlohmann::json::array();
    for (const ClientSummary& c : summary.clients) {
        nlohmann::json cj;
        cj["id"] = c.id;
        cj["task"] = c.task;
        cj["final_accuracy"] = c.final_accuracy;
        cj["alpha_history"] = c.alpha_history;
        cj["total_uplink_bytes"] = c.total_uplink_bytes;
        j["clients"].push_back(std::move(cj));
    }
    return j;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "federated representation fine-tuning simulator core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);

    m.def(
        "geometric_median",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pts, double tol,
           int max_iter, double eps) {
            WeiszfeldConfig cfg{tol, max_iter, eps};
            const GeometricMedianResult result = geometric_median(rows_as_points(pts), cfg);
            return py::make_tuple(from_vector(result.point.flat),
                                  diagnostics_dict(result.groups.front()));
        },
        py::arg("points"), py::arg("tol") = 1e-9, py::arg("max_iter") = 1000,
        py::arg("eps") = 1e-10,
        "Geometric median of the rows; returns (median, diagnostics).");

    m.def(
        "abm_aggregate",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pts, int client,
           double tol, int max_iter, double eps) {
            WeiszfeldConfig cfg{tol, max_iter, eps};
            const std::vector<ParamVector> points = rows_as_points(pts);
            std::map<int, ParamVector> all;
            for (std::size_t i = 0; i < points.size(); ++i) {
                all.emplace(static_cast<int>(i), points[i]);
            }
            const GeometricMedianResult result = abm_aggregate(all, client, cfg);
            return py::make_tuple(from_vector(result.point.flat),
                                  diagnostics_dict(result.groups.front()));
        },
        py::arg("points"), py::arg("client"), py::arg("tol") = 1e-9, py::arg("max_iter") = 1000,
        py::arg("eps") = 1e-10,
        "Leave-one-out geometric median for row `client`; returns (aggregate, diagnostics).");

    m.def(
        "mean_abm",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pts, int client) {
            const std::vector<ParamVector> points = rows_as_points(pts);
            std::map<int, ParamVector> all;
            for (std::size_t i = 0; i < points.size(); ++i) {
                all.emplace(static_cast<int>(i), points[i]);
            }
            return from_vector(mean_abm(all, client).flat);
        },
        py::arg("points"), py::arg("client"), "Arithmetic mean of every row except `client`.");

    m.def(
        "fedavg",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pts,
           const std::optional<std::vector<double>>& weights) {
            const std::vector<ParamVector> points = rows_as_points(pts);
            std::map<int, ParamVector> all;
            std::map<int, double> w;
            for (std::size_t i = 0; i < points.size(); ++i) {
                all.emplace(static_cast<int>(i), points[i]);
                w.emplace(static_cast<int>(i),
                          weights ? weights->at(i) : 1.0);
            }
            return from_vector(fedavg(all, w).flat);
        },
        py::arg("points"), py::arg("weights") = py::none(),
        "Weighted arithmetic mean of the rows.");

    m.def(
        "loreft_apply",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& w,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& r,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& h) {
            const LoReftParams params =
                make_loreft_params(to_matrix(w, "W"), to_matrix(r, "R"), to_vector(b, "b"));
            return from_vector(loreft_apply(params, to_vector(h, "h")));
        },
        py::arg("w"), py::arg("r"), py::arg("b"), py::arg("h"),
        "Low-rank representation edit h + R^T (W h + b - R h).");

    m.def(
        "loreft_init",
        [](std::size_t rank, std::size_t dim, std::uint64_t seed, const std::string& scheme) {
            Rng rng(seed);
            const InitScheme init_scheme =
                scheme == "gaussian" ? InitScheme::Gaussian : InitScheme::IdentityStart;
            const LoReftParams p = init_loreft(rank, dim, rng, init_scheme);
            return py::make_tuple(from_matrix(p.w), from_matrix(p.r), from_vector(p.b));
        },
        py::arg("rank"), py::arg("dim"), py::arg("seed") = 0, py::arg("scheme") = "identity",
        "Seeded intervention parameters (W, R, b) with orthonormal R rows.");

    m.def(
        "orthonormalize_rows",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& m) {
            return from_matrix(orthonormalize_rows(to_matrix(m, "m")));
        },
        py::arg("m"), "Modified Gram-Schmidt with one re-orthogonalization pass.");

    m.def(
        "param_count",
        [](int num_layers, int prefix_len, int suffix_len, bool tied, std::size_t rank,
           std::size_t dim) {
            InterventionSchedule schedule;
            for (int l = 0; l < num_layers; ++l) schedule.layers.push_back(l);
            schedule.prefix_len = prefix_len;
            schedule.suffix_len = suffix_len;
            schedule.tied = tied;
            return param_count(schedule, rank, dim);
        },
        py::arg("num_layers"), py::arg("prefix_len") = 1, py::arg("suffix_len") = 0,
        py::arg("tied") = true, py::arg("rank") = 4, py::arg("dim") = 16,
        "Trainable intervention scalars: slots x (2 r d + r).");

    m.def(
        "run_experiment",
        [](const std::string& config_json) {
            const ExperimentConfig cfg = config_from_json(config_json);
            ExperimentSummary summary;
            const std::vector<RoundReport> reports = run_experiment(cfg, &summary);
            nlohmann::json out;
            out["config"] = nlohmann::json::parse(config_to_json(cfg));
            out["rounds"] = nlohmann::json::array();
            for (const RoundReport& report : reports) {
                out["rounds"].push_back(nlohmann::json::parse(round_report_to_json(report)));
            }
            out["summary"] = summary_json(summary);
            return out.dump();
        },
        py::arg("config_json"),
        "Runs a federated experiment from a JSON config; returns a JSON string "
        "with the resolved config, per-round reports and the final summary.");

    m.def(
        "generate_dataset",
        [](const std::string& design, int num_clients, int num_tasks, int examples_per_client,
           int seq_len, int vocab, std::uint64_t seed) {
            const Design d = design_from_string(design);
            const FederatedDataset dataset =
                generate(d, num_clients, num_tasks, examples_per_client, seq_len, vocab, seed);
            std::stringstream out;
            dump_dataset(dataset, out);
            return out.str();
        },
        py::arg("design"), py::arg("num_clients"), py::arg("num_tasks"),
        py::arg("examples_per_client"), py::arg("seq_len") = 12, py::arg("vocab") = 12,
        py::arg("seed") = 0,
        "Deterministic task-heterogeneous dataset in the line-based dump format.");

    m.attr("__version__") = "0.1.0";
}
