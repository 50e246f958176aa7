// Command-line front end: run experiments from a config file, check
// gradients against finite differences, demo the aggregation rules on a
// points file, and summarize round logs.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime divergence,
// 3 internal invariant breach. Progress goes to stderr; results go to files
// (run) or stdout (gradcheck, agg-demo, report).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "reftfl/aggregation.hpp"
#include "reftfl/backbone.hpp"
#include "reftfl/client.hpp"
#include "reftfl/errors.hpp"
#include "reftfl/orchestrator.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitInternal = 3;

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw reftfl::ConfigError("cannot read file: " + path);
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            std::optional<std::uint64_t> seed, std::optional<int> rounds) {
    const reftfl::ExperimentConfig cfg =
        reftfl::config_from_json(read_file(config_path), seed, rounds);
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path out(out_dir);

    std::cerr << "running " << cfg.rounds << " rounds over " << cfg.clients << " clients ("
              << reftfl::to_string(cfg.aggregation) << ", " << reftfl::to_string(cfg.sharing)
              << " sharing, seed " << cfg.seed << ")\n";

    reftfl::Experiment experiment(cfg);
    {
        std::ofstream echo(out / "config_resolved.json");
        echo << reftfl::config_to_json(cfg) << '\n';
    }
    std::ofstream rounds_out(out / "rounds.jsonl");
    for (int r = 0; r < cfg.rounds; ++r) {
        const reftfl::RoundReport report = experiment.run_round();
        rounds_out << reftfl::round_report_to_json(report) << '\n';
        double mean_acc = 0.0;
        for (const auto& c : report.clients) mean_acc += c.accuracy;
        mean_acc /= static_cast<double>(report.clients.size());
        std::cerr << "round " << (r + 1) << "/" << cfg.rounds
                  << " mean accuracy " << format_double(mean_acc) << '\n';
    }
    rounds_out.close();
    {
        std::ofstream summary_out(out / "summary.csv");
        reftfl::write_summary_csv(experiment.summary(), summary_out);
    }
    std::cerr << "wrote " << (out / "rounds.jsonl").string() << ", " << (out / "summary.csv").string()
              << ", " << (out / "config_resolved.json").string() << '\n';
    return kExitOk;
}

// Flattens every trainable coordinate, compares the analytic gradients with
// central finite differences of the loss, and reports the worst relative
// error per parameter group.
int cmd_gradcheck(int d, int r, std::uint64_t seed, bool inject_sign_flip) {
    if (d > 32 || r > 8 || d < 2 || r < 1 || r > d) {
        throw reftfl::ConfigError("gradcheck: need 2 <= d <= 32 and 1 <= r <= min(d, 8)");
    }
    reftfl::BackboneConfig bc;
    bc.num_layers = 2;
    bc.hidden_dim = d;
    bc.seq_len = 4;
    bc.vocab = 8;
    bc.classes = 2;
    bc.seed = reftfl::derive_seed(seed, 2);
    const reftfl::FrozenBackbone backbone = reftfl::make_backbone(bc);

    reftfl::InterventionSchedule schedule;
    schedule.layers = {0, 1};
    schedule.prefix_len = 1;
    schedule.suffix_len = 1;
    schedule.tied = false;

    reftfl::Rng rng(reftfl::derive_seed(seed, 3));
    reftfl::ClassifierHead head = reftfl::make_head(d, bc.classes, rng);
    reftfl::ParamBundle bundle =
        reftfl::make_bundle(schedule, static_cast<std::size_t>(r), static_cast<std::size_t>(d),
                            bc.seq_len, rng, reftfl::InitScheme::Gaussian);
    std::vector<int> tokens(static_cast<std::size_t>(bc.seq_len));
    for (int& t : tokens) {
        t = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(bc.vocab)));
    }
    const int label = static_cast<int>(rng.uniform_below(2));

    // Trainables in optimizer order: head blocks first, then W, R, b per slot.
    struct Block {
        std::string group;
        reftfl::Vector* values;
    };
    std::vector<Block> blocks = {{"psi", &head.w_proj.data()},
                                 {"psi", &head.b_proj},
                                 {"psi", &head.w_out.data()},
                                 {"psi", &head.b_out}};
    for (auto& p : bundle.params) {
        blocks.push_back({"W", &p.w.data()});
        blocks.push_back({"R", &p.r.data()});
        blocks.push_back({"b", &p.b});
    }

    const auto probe = [&]() {
        return reftfl::loss(reftfl::forward(backbone, head, bundle, tokens), label);
    };
    const reftfl::ForwardTrace trace = reftfl::forward(backbone, head, bundle, tokens);
    reftfl::Gradients grads = reftfl::backward(trace, label, backbone, head, bundle);
    if (inject_sign_flip) {
        grads.head.w_proj(0, 0) = -grads.head.w_proj(0, 0) - 1.0;
    }
    std::vector<const reftfl::Vector*> grad_blocks = {&grads.head.w_proj.data(), &grads.head.b_proj,
                                                      &grads.head.w_out.data(), &grads.head.b_out};
    for (auto& g : grads.slots) {
        grad_blocks.push_back(&g.w.data());
        grad_blocks.push_back(&g.r.data());
        grad_blocks.push_back(&g.b);
    }

    constexpr double kEps = 1e-5;
    std::map<std::string, double> worst;
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        reftfl::Vector& values = *blocks[bi].values;
        const reftfl::Vector& analytic = *grad_blocks[bi];
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + kEps;
            const double fp = probe();
            values[i] = saved - kEps;
            const double fm = probe();
            values[i] = saved;
            const double fd = (fp - fm) / (2.0 * kEps);
            const double err =
                std::abs(analytic[i] - fd) / std::max({1.0, std::abs(fd), std::abs(analytic[i])});
            double& w = worst[blocks[bi].group];
            w = std::max(w, err);
        }
    }

    bool ok = true;
    for (const char* group : {"W", "R", "b", "psi"}) {
        const double err = worst[group];
        ok = ok && err < 1e-4;
        std::cout << group << " max_rel_err " << format_double(err) << '\n';
    }
    std::cout << (ok ? "gradcheck PASS" : "gradcheck FAIL") << '\n';
    return ok ? kExitOk : kExitRuntime;
}

std::vector<reftfl::Vector> parse_points(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw reftfl::ConfigError("cannot read points file: " + path);
    }
    std::vector<reftfl::Vector> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::stringstream ss(line);
        reftfl::Vector row;
        std::string token;
        while (ss >> token) {
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
            if (ec != std::errc() || ptr != token.data() + token.size()) {
                throw reftfl::ParseError("points: bad number '" + token + "'", line_no);
            }
            row.push_back(v);
        }
        if (row.empty()) continue;
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw reftfl::ParseError("points: row has " + std::to_string(row.size()) +
                                         " values, expected " + std::to_string(rows.front().size()),
                                     line_no);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) {
        throw reftfl::ParseError("points: no rows", line_no == 0 ? 1 : line_no);
    }
    return rows;
}

void print_vector(const reftfl::Vector& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) std::cout << ' ';
        std::cout << format_double(v[i]);
    }
    std::cout << '\n';
}

void print_trace(const reftfl::WeiszfeldDiagnostics& diag) {
    std::cout << "trace";
    for (double f : diag.objective_trace) {
        std::cout << ' ' << format_double(f);
    }
    std::cout << '\n';
}

int cmd_agg_demo(const std::string& points_path, const std::string& method) {
    const std::vector<reftfl::Vector> rows = parse_points(points_path);
    if (method == "geomedian") {
        std::vector<reftfl::ParamVector> points;
        for (const auto& row : rows) points.push_back(reftfl::make_point(row));
        const reftfl::GeometricMedianResult result = reftfl::geometric_median(points);
        std::cout << "geomedian ";
        print_vector(result.point.flat);
        print_trace(result.groups.front());
        return kExitOk;
    }
    std::map<int, reftfl::ParamVector> all;
    std::map<int, double> weights;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        all.emplace(static_cast<int>(i), reftfl::make_point(rows[i]));
        weights.emplace(static_cast<int>(i), 1.0);
    }
    if (method == "mean" || method == "fedavg") {
        std::cout << method << ' ';
        print_vector(reftfl::fedavg(all, weights).flat);
        return kExitOk;
    }
    if (method == "abm") {
        for (const auto& [id, point] : all) {
            (void)point;
            const reftfl::GeometricMedianResult result = reftfl::abm_aggregate(all, id);
            std::cout << "abm[" << id << "] ";
            print_vector(result.point.flat);
            print_trace(result.groups.front());
        }
        return kExitOk;
    }
    throw reftfl::ConfigError("agg-demo: unknown method '" + method +
                              "' (expected geomedian, mean, fedavg or abm)");
}

int cmd_report(const std::string& in_path, const std::string& format) {
    std::ifstream in(in_path);
    if (!in) {
        throw reftfl::ConfigError("cannot read rounds file: " + in_path);
    }
    std::vector<nlohmann::json> rounds;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            rounds.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw reftfl::ParseError(std::string("rounds: ") + e.what(), line_no);
        }
    }
    if (rounds.empty()) {
        throw reftfl::ParseError("rounds: no entries", 1);
    }
    const nlohmann::json& last = rounds.back();

    struct Row {
        int id;
        double accuracy;
        double val_loss;
        std::string alphas;
        std::uint64_t uplink_total;
    };
    std::vector<Row> table;
    for (const auto& client : last.at("clients")) {
        Row row{client.at("id").get<int>(), client.at("accuracy").get<double>(),
                client.at("val_loss").get<double>(), "", 0};
        for (const auto& round : rounds) {
            for (const auto& c : round.at("clients")) {
                if (c.at("id").get<int>() != row.id) continue;
                if (!row.alphas.empty()) row.alphas += '|';
                row.alphas += format_double(c.at("alpha").get<double>());
                row.uplink_total += c.at("uplink_bytes").get<std::uint64_t>();
            }
        }
        table.push_back(std::move(row));
    }
    double mean_acc = 0.0;
    for (const Row& row : table) mean_acc += row.accuracy;
    mean_acc /= static_cast<double>(table.size());

    if (format == "csv") {
        std::cout << "client,final_accuracy,final_val_loss,alpha_trajectory,total_uplink_bytes\n";
        for (const Row& row : table) {
            std::cout << row.id << ',' << format_double(row.accuracy) << ','
                      << format_double(row.val_loss) << ',' << row.alphas << ',' << row.uplink_total
                      << '\n';
        }
        std::cout << "mean," << format_double(mean_acc) << ",,,\n";
    } else if (format == "md") {
        std::cout << "| client | final accuracy | final val loss | alpha trajectory | total uplink bytes |\n";
        std::cout << "|---|---|---|---|---|\n";
        for (const Row& row : table) {
            std::cout << "| " << row.id << " | " << format_double(row.accuracy) << " | "
                      << format_double(row.val_loss) << " | " << row.alphas << " | "
                      << row.uplink_total << " |\n";
        }
        std::cout << "| mean | " << format_double(mean_acc) << " | | | |\n";
    } else {
        throw reftfl::ConfigError("report: unknown format '" + format + "' (expected csv or md)");
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated representation fine-tuning simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    std::uint64_t seed_flag = 0;
    int rounds_flag = 0;
    auto* run = app.add_subcommand("run", "run an experiment from a config file");
    run->add_option("--config", config_path, "experiment config (JSON)")->required();
    run->add_option("--out", out_dir, "output directory");
    auto* seed_opt = run->add_option("--seed", seed_flag, "master seed override");
    auto* rounds_opt = run->add_option("--rounds", rounds_flag, "rounds override");

    int gc_d = 8, gc_r = 2;
    std::uint64_t gc_seed = 0;
    bool gc_flip = false;
    auto* gradcheck = app.add_subcommand("gradcheck", "compare gradients with finite differences");
    gradcheck->add_option("--d", gc_d, "hidden dimension (<= 32)");
    gradcheck->add_option("--r", gc_r, "intervention rank (<= 8)");
    gradcheck->add_option("--seed", gc_seed, "seed");
    gradcheck->add_flag("--inject-sign-flip", gc_flip, "test-only fault injection");

    std::string points_path, method = "geomedian";
    auto* agg = app.add_subcommand("agg-demo", "aggregate the rows of a points file");
    agg->add_option("--points", points_path, "whitespace-separated decimal rows")->required();
    agg->add_option("--method", method, "geomedian | mean | fedavg | abm");

    std::string report_in, report_format = "csv";
    auto* report = app.add_subcommand("report", "summarize a rounds.jsonl file");
    report->add_option("--in", report_in, "rounds.jsonl path")->required();
    report->add_option("--format", report_format, "csv | md");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (run->parsed()) {
            return cmd_run(config_path, out_dir,
                           seed_opt->count() ? std::optional<std::uint64_t>(seed_flag) : std::nullopt,
                           rounds_opt->count() ? std::optional<int>(rounds_flag) : std::nullopt);
        }
        if (gradcheck->parsed()) {
            return cmd_gradcheck(gc_d, gc_r, gc_seed, gc_flip);
        }
        if (agg->parsed()) {
            return cmd_agg_demo(points_path, method);
        }
        if (report->parsed()) {
            return cmd_report(report_in, report_format);
        }
    } catch (const reftfl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const reftfl::ParseError& e) {
        std::cerr << "parse error at line " << e.line << ": " << e.what() << '\n';
        return kExitConfig;
    } catch (const reftfl::DivergenceError& e) {
        std::cerr << "divergence at step " << e.step << ": " << e.what() << '\n';
        return kExitRuntime;
    } catch (const reftfl::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
    return kExitInternal;
}
