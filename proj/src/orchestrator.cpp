#include "reftfl/orchestrator.hpp"

#include <charconv>
#include <cmath>
#include <ostream>
#include <string>

#include <json.hpp>

#include "reftfl/errors.hpp"
#include "reftfl/rng.hpp"

namespace reftfl {

namespace {

using nlohmann::json;

// Seed derivation streams (documented in the README): 1 = dataset,
// 2 = backbone (when not set explicitly), 16 + i = client i.
constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kBackboneStream = 2;
constexpr std::uint64_t kClientStreamBase = 16;

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

template <typename T>
T field_or(const json& j, const std::string& path, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(path + "." + key + ": " + e.what());
    }
}

}  // namespace

std::string to_string(Aggregation a) {
    switch (a) {
        case Aggregation::AbmGeomedian: return "abm_geomedian";
        case Aggregation::AbmMean: return "abm_mean";
        case Aggregation::FedAvg: return "fedavg";
    }
    return "abm_geomedian";
}

Aggregation aggregation_from_string(const std::string& name) {
    if (name == "abm_geomedian") return Aggregation::AbmGeomedian;
    if (name == "abm_mean") return Aggregation::AbmMean;
    if (name == "fedavg") return Aggregation::FedAvg;
    throw ConfigError("aggregation: unknown method '" + name +
                      "' (expected abm_geomedian, abm_mean or fedavg)");
}

std::string to_string(Design d) {
    return d == Design::DistinctTask ? "DT" : "MT";
}

Design design_from_string(const std::string& name) {
    if (name == "DT") return Design::DistinctTask;
    if (name == "MT") return Design::MixedTask;
    throw ConfigError("data.design: unknown design '" + name + "' (expected DT or MT)");
}

InterventionSchedule ScheduleConfig::resolve(int num_layers) const {
    InterventionSchedule schedule;
    if (layers.empty()) {
        for (int l = 0; l < num_layers; ++l) schedule.layers.push_back(l);
    } else {
        schedule.layers = layers;
    }
    schedule.prefix_len = prefix_len;
    schedule.suffix_len = suffix_len;
    schedule.tied = tied;
    return schedule;
}

void ExperimentConfig::validate() const {
    if (clients < 1) throw ConfigError("clients: must be >= 1");
    if (rounds < 1) throw ConfigError("rounds: must be >= 1");
    if (aggregation != Aggregation::FedAvg && clients < 2) {
        throw ConfigError("clients: all-but-me aggregation needs at least 2 clients");
    }
    if (backbone.num_layers < 1) throw ConfigError("backbone.num_layers: must be >= 1");
    if (backbone.hidden_dim < 1) throw ConfigError("backbone.hidden_dim: must be >= 1");
    if (backbone.seq_len < 1) throw ConfigError("backbone.seq_len: must be >= 1");
    if (backbone.vocab < 2) throw ConfigError("backbone.vocab: must be >= 2");
    if (backbone.classes < 2) throw ConfigError("backbone.classes: must be >= 2");
    if (schedule.rank < 1) throw ConfigError("schedule.rank: must be >= 1");
    if (schedule.rank > backbone.hidden_dim) {
        throw ConfigError("schedule.rank: must not exceed backbone.hidden_dim");
    }
    try {
        schedule.resolve(backbone.num_layers).validate(backbone.num_layers, backbone.seq_len);
    } catch (const ScheduleError& e) {
        throw ConfigError(std::string("schedule: ") + e.what());
    }
    if (optimizer.lr < 0.0) throw ConfigError("optimizer.lr: must be >= 0");
    if (optimizer.weight_decay < 0.0 || optimizer.weight_decay >= 1.0) {
        throw ConfigError("optimizer.weight_decay: must lie in [0, 1)");
    }
    if (optimizer.epochs < 1) throw ConfigError("optimizer.epochs: must be >= 1");
    if (optimizer.batch_size < 1) throw ConfigError("optimizer.batch_size: must be >= 1");
    if (!alpha_grid.empty()) {
        AlphaGrid grid{alpha_grid};
        try {
            grid.validate();
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("alpha_grid: ") + e.what());
        }
    }
    if (data.num_tasks < 1) throw ConfigError("data.num_tasks: must be >= 1");
    if (data.design == Design::DistinctTask && data.num_tasks != clients) {
        throw ConfigError("data.num_tasks: distinct-task design requires num_tasks == clients");
    }
    if (data.design == Design::MixedTask && data.num_tasks < 2) {
        throw ConfigError("data.num_tasks: mixed-task design requires num_tasks >= 2");
    }
    if (data.num_tasks > backbone.vocab) {
        throw ConfigError("data.num_tasks: must not exceed backbone.vocab");
    }
    if (data.examples_per_client < 10) {
        throw ConfigError("data.examples_per_client: must be >= 10");
    }
    if (init_scheme != "identity" && init_scheme != "gaussian") {
        throw ConfigError("init_scheme: expected 'identity' or 'gaussian'");
    }
}

InitScheme ExperimentConfig::resolved_init_scheme() const {
    return init_scheme == "gaussian" ? InitScheme::Gaussian : InitScheme::IdentityStart;
}

ExperimentConfig config_from_json(const std::string& text, std::optional<std::uint64_t> seed_override,
                                  std::optional<int> rounds_override) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) {
        throw ConfigError("config: top level must be a JSON object");
    }
    ExperimentConfig cfg;
    cfg.clients = field_or(j, "config", "clients", cfg.clients);
    cfg.rounds = field_or(j, "config", "rounds", cfg.rounds);
    cfg.aggregation =
        aggregation_from_string(field_or<std::string>(j, "config", "aggregation", to_string(cfg.aggregation)));
    cfg.sharing =
        sharing_strategy_from_string(field_or<std::string>(j, "config", "sharing", to_string(cfg.sharing)));
    cfg.seed = field_or(j, "config", "seed", cfg.seed);
    if (seed_override) cfg.seed = *seed_override;
    if (rounds_override) cfg.rounds = *rounds_override;
    cfg.init_scheme = field_or<std::string>(j, "config", "init_scheme", cfg.init_scheme);

    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        if (s.contains("layers") && !(s.at("layers").is_string() && s.at("layers") == "all")) {
            try {
                cfg.schedule.layers = s.at("layers").get<std::vector<int>>();
            } catch (const json::exception& e) {
                throw ConfigError(std::string("schedule.layers: ") + e.what());
            }
        }
        cfg.schedule.prefix_len = field_or(s, "schedule", "prefix_len", cfg.schedule.prefix_len);
        cfg.schedule.suffix_len = field_or(s, "schedule", "suffix_len", cfg.schedule.suffix_len);
        cfg.schedule.tied = field_or(s, "schedule", "tied", cfg.schedule.tied);
        cfg.schedule.rank = field_or(s, "schedule", "rank", cfg.schedule.rank);
    }
    if (j.contains("backbone")) {
        const json& b = j.at("backbone");
        cfg.backbone.num_layers = field_or(b, "backbone", "num_layers", cfg.backbone.num_layers);
        cfg.backbone.hidden_dim = field_or(b, "backbone", "hidden_dim", cfg.backbone.hidden_dim);
        cfg.backbone.seq_len = field_or(b, "backbone", "seq_len", cfg.backbone.seq_len);
        cfg.backbone.vocab = field_or(b, "backbone", "vocab", cfg.backbone.vocab);
        cfg.backbone.classes = field_or(b, "backbone", "classes", cfg.backbone.classes);
    }
    if (j.contains("backbone") && j.at("backbone").contains("seed")) {
        cfg.backbone.seed = field_or<std::uint64_t>(j.at("backbone"), "backbone", "seed", 0);
    } else {
        cfg.backbone.seed = derive_seed(cfg.seed, kBackboneStream);
    }
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        cfg.optimizer.lr = field_or(o, "optimizer", "lr", cfg.optimizer.lr);
        cfg.optimizer.weight_decay = field_or(o, "optimizer", "weight_decay", cfg.optimizer.weight_decay);
        cfg.optimizer.epochs = field_or(o, "optimizer", "epochs", cfg.optimizer.epochs);
        cfg.optimizer.batch_size = field_or(o, "optimizer", "batch_size", cfg.optimizer.batch_size);
    }
    cfg.alpha_grid = field_or(j, "config", "alpha_grid", cfg.alpha_grid);
    if (j.contains("data")) {
        const json& d = j.at("data");
        cfg.data.design =
            design_from_string(field_or<std::string>(d, "data", "design", to_string(cfg.data.design)));
        cfg.data.num_tasks = field_or(d, "data", "num_tasks", cfg.data.num_tasks);
        cfg.data.examples_per_client =
            field_or(d, "data", "examples_per_client", cfg.data.examples_per_client);
        cfg.data.mix_proportions = field_or(d, "data", "mix_proportions", cfg.data.mix_proportions);
    }
    cfg.validate();
    return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["clients"] = cfg.clients;
    j["rounds"] = cfg.rounds;
    j["aggregation"] = to_string(cfg.aggregation);
    j["sharing"] = to_string(cfg.sharing);
    j["seed"] = cfg.seed;
    j["init_scheme"] = cfg.init_scheme;
    j["schedule"]["layers"] = cfg.schedule.resolve(cfg.backbone.num_layers).layers;
    j["schedule"]["prefix_len"] = cfg.schedule.prefix_len;
    j["schedule"]["suffix_len"] = cfg.schedule.suffix_len;
    j["schedule"]["tied"] = cfg.schedule.tied;
    j["schedule"]["rank"] = cfg.schedule.rank;
    j["backbone"]["num_layers"] = cfg.backbone.num_layers;
    j["backbone"]["hidden_dim"] = cfg.backbone.hidden_dim;
    j["backbone"]["seq_len"] = cfg.backbone.seq_len;
    j["backbone"]["vocab"] = cfg.backbone.vocab;
    j["backbone"]["classes"] = cfg.backbone.classes;
    j["backbone"]["seed"] = cfg.backbone.seed;
    j["optimizer"]["lr"] = cfg.optimizer.lr;
    j["optimizer"]["weight_decay"] = cfg.optimizer.weight_decay;
    j["optimizer"]["epochs"] = cfg.optimizer.epochs;
    j["optimizer"]["batch_size"] = cfg.optimizer.batch_size;
    j["alpha_grid"] = cfg.alpha_grid.empty() ? AlphaGrid::default_grid().values : cfg.alpha_grid;
    j["data"]["design"] = to_string(cfg.data.design);
    j["data"]["num_tasks"] = cfg.data.num_tasks;
    j["data"]["examples_per_client"] = cfg.data.examples_per_client;
    if (!cfg.data.mix_proportions.empty()) {
        j["data"]["mix_proportions"] = cfg.data.mix_proportions;
    }
    return j.dump(2);
}

std::map<int, ParamVector> collect_payloads(const std::vector<ClientState>& clients,
                                            SharingStrategy strategy) {
    std::map<int, ParamVector> payloads;
    for (const ClientState& client : clients) {
        payloads.emplace(client.id, extract_shared(client.bundle, strategy));
    }
    return payloads;
}

std::map<int, ParamVector> aggregate_payloads(
    const std::map<int, ParamVector>& payloads, Aggregation method,
    const std::map<int, double>& weights, const WeiszfeldConfig& weiszfeld,
    std::vector<ClientAggregationDiagnostics>* diagnostics) {
    std::map<int, ParamVector> out;
    switch (method) {
        case Aggregation::FedAvg: {
            const ParamVector global = fedavg(payloads, weights);
            for (const auto& [id, payload] : payloads) {
                (void)payload;
                out.emplace(id, global);
            }
            break;
        }
        case Aggregation::AbmMean: {
            for (const auto& [id, payload] : payloads) {
                (void)payload;
                out.emplace(id, mean_abm(payloads, id));
            }
            break;
        }
        case Aggregation::AbmGeomedian: {
            for (const auto& [id, payload] : payloads) {
                (void)payload;
                GeometricMedianResult result = abm_aggregate(payloads, id, weiszfeld);
                if (diagnostics != nullptr) {
                    ClientAggregationDiagnostics entry;
                    entry.client = id;
                    for (std::size_t g = 0; g < result.point.groups.size(); ++g) {
                        entry.groups.push_back(GroupDiagnostics{result.point.groups[g].name,
                                                                result.groups[g].iterations,
                                                                result.groups[g].final_objective(),
                                                                result.groups[g].converged});
                    }
                    diagnostics->push_back(std::move(entry));
                }
                out.emplace(id, std::move(result.point));
            }
            break;
        }
    }
    return out;
}

Experiment::Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    backbone_ = make_backbone(cfg_.backbone);
    dataset_ = generate(cfg_.data.design, cfg_.clients, cfg_.data.num_tasks,
                        cfg_.data.examples_per_client, cfg_.backbone.seq_len, cfg_.backbone.vocab,
                        derive_seed(cfg_.seed, kDataStream), cfg_.data.mix_proportions);
    const InterventionSchedule schedule = cfg_.schedule.resolve(cfg_.backbone.num_layers);
    for (int i = 0; i < cfg_.clients; ++i) {
        clients_.push_back(make_client(i, backbone_, schedule,
                                       static_cast<std::size_t>(cfg_.schedule.rank),
                                       cfg_.resolved_init_scheme(),
                                       derive_seed(cfg_.seed, kClientStreamBase + static_cast<std::uint64_t>(i)),
                                       dataset_.clients[static_cast<std::size_t>(i)].train,
                                       dataset_.clients[static_cast<std::size_t>(i)].val));
    }
}

RoundReport Experiment::run_round() {
    RoundReport report;
    report.round = rounds_completed_;

    std::vector<double> train_losses(clients_.size(), 0.0);
    for (std::size_t i = 0; i < clients_.size(); ++i) {
        try {
            const std::vector<double> curve = local_train(clients_[i], backbone_, cfg_.optimizer);
            train_losses[i] = curve.empty() ? 0.0 : curve.back();
        } catch (const DivergenceError& e) {
            throw DivergenceError("client " + std::to_string(clients_[i].id) + ": " + e.what(), e.step);
        }
    }

    const std::map<int, ParamVector> payloads = collect_payloads(clients_, cfg_.sharing);
    std::map<int, double> weights;
    for (const ClientState& client : clients_) {
        weights[client.id] = static_cast<double>(client.train.size());
    }
    const std::map<int, ParamVector> targets = aggregate_payloads(
        payloads, cfg_.aggregation, weights, WeiszfeldConfig{}, &report.aggregation);

    AlphaGrid grid = cfg_.alpha_grid.empty() ? AlphaGrid::default_grid() : AlphaGrid{cfg_.alpha_grid};
    for (std::size_t i = 0; i < clients_.size(); ++i) {
        ClientState& client = clients_[i];
        const ParamVector& target = targets.at(client.id);
        double alpha = 1.0;
        if (cfg_.aggregation != Aggregation::FedAvg) {
            alpha = tune_alpha(client, backbone_, target, grid, cfg_.sharing).alpha;
        }
        fuse(client, target, alpha, cfg_.sharing);

        const EvalMetrics val = evaluate(client, backbone_, client.val);
        const EvalMetrics test =
            evaluate(client, backbone_, dataset_.clients[i].test);
        report.clients.push_back(ClientRoundMetrics{
            client.id, train_losses[i], val.loss, test.accuracy, alpha,
            8ULL * payloads.at(client.id).flat.size()});
    }

    reports_.push_back(report);
    ++rounds_completed_;
    return report;
}

std::vector<RoundReport> Experiment::run_all() {
    while (rounds_completed_ < cfg_.rounds) {
        run_round();
    }
    return reports_;
}

ExperimentSummary Experiment::summary() const {
    ExperimentSummary summary;
    double total = 0.0;
    for (std::size_t i = 0; i < clients_.size(); ++i) {
        ClientSummary cs;
        cs.id = clients_[i].id;
        cs.task = dataset_.clients[i].test.empty() ? 0 : dataset_.clients[i].test.front().task;
        if (!reports_.empty()) {
            cs.final_accuracy = reports_.back().clients[i].accuracy;
        } else {
            cs.final_accuracy = evaluate(clients_[i], backbone_, dataset_.clients[i].test).accuracy;
        }
        cs.alpha_history = clients_[i].alpha_history;
        for (const RoundReport& report : reports_) {
            cs.total_uplink_bytes += report.clients[i].uplink_bytes;
        }
        total += cs.final_accuracy;
        summary.clients.push_back(std::move(cs));
    }
    summary.mean_final_accuracy =
        clients_.empty() ? 0.0 : total / static_cast<double>(clients_.size());
    return summary;
}

std::vector<RoundReport> run_experiment(const ExperimentConfig& cfg, ExperimentSummary* summary) {
    Experiment experiment(cfg);
    std::vector<RoundReport> reports = experiment.run_all();
    if (summary != nullptr) {
        *summary = experiment.summary();
    }
    return reports;
}

std::string round_report_to_json(const RoundReport& report) {
    json j;
    j["round"] = report.round;
    j["clients"] = json::array();
    for (const ClientRoundMetrics& m : report.clients) {
        json c;
        c["id"] = m.id;
        c["train_loss"] = m.train_loss;
        c["val_loss"] = m.val_loss;
        c["accuracy"] = m.accuracy;
        c["alpha"] = m.alpha;
        c["uplink_bytes"] = m.uplink_bytes;
        j["clients"].push_back(std::move(c));
    }
    j["aggregation"] = json::array();
    for (const ClientAggregationDiagnostics& diag : report.aggregation) {
        json d;
        d["client"] = diag.client;
        d["groups"] = json::array();
        for (const GroupDiagnostics& g : diag.groups) {
            json gj;
            gj["group"] = g.group;
            gj["iterations"] = g.iterations;
            gj["objective"] = g.objective;
            gj["converged"] = g.converged;
            d["groups"].push_back(std::move(gj));
        }
        j["aggregation"].push_back(std::move(d));
    }
    return j.dump();
}

void write_rounds_jsonl(const std::vector<RoundReport>& reports, std::ostream& out) {
    for (const RoundReport& report : reports) {
        out << round_report_to_json(report) << '\n';
    }
}

void write_summary_csv(const ExperimentSummary& summary, std::ostream& out) {
    out << "client,task,final_accuracy,alpha_trajectory,total_uplink_bytes\n";
    for (const ClientSummary& cs : summary.clients) {
        out << cs.id << ',' << cs.task << ',' << format_double(cs.final_accuracy) << ',';
        for (std::size_t i = 0; i < cs.alpha_history.size(); ++i) {
            if (i) out << '|';
            out << format_double(cs.alpha_history[i]);
        }
        out << ',' << cs.total_uplink_bytes << '\n';
    }
}

double standalone_accuracy(const ExperimentConfig& cfg, int client_index, int epochs) {
    ExperimentConfig local = cfg;
    local.validate();
    if (client_index < 0 || client_index >= local.clients) {
        throw ConfigError("standalone_accuracy: client index out of range");
    }
    const FrozenBackbone backbone = make_backbone(local.backbone);
    const FederatedDataset dataset =
        generate(local.data.design, local.clients, local.data.num_tasks,
                 local.data.examples_per_client, local.backbone.seq_len, local.backbone.vocab,
                 derive_seed(local.seed, kDataStream), local.data.mix_proportions);
    const auto ci = static_cast<std::size_t>(client_index);
    ClientState client = make_client(
        client_index, backbone, local.schedule.resolve(local.backbone.num_layers),
        static_cast<std::size_t>(local.schedule.rank), local.resolved_init_scheme(),
        derive_seed(local.seed, kClientStreamBase + static_cast<std::uint64_t>(client_index)),
        dataset.clients[ci].train, dataset.clients[ci].val);
    OptimizerConfig opt = local.optimizer;
    opt.epochs = epochs;
    local_train(client, backbone, opt);
    return evaluate(client, backbone, dataset.clients[ci].test).accuracy;
}

}  // namespace reftfl
