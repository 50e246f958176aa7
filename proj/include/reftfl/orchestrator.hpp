#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "reftfl/aggregation.hpp"
#include "reftfl/backbone.hpp"
#include "reftfl/client.hpp"
#include "reftfl/sharing.hpp"
#include "reftfl/synthdata.hpp"

namespace reftfl {

enum class Aggregation {
    AbmGeomedian,  // per-client geometric median over the other clients
    AbmMean,       // per-client arithmetic mean over the other clients
    FedAvg,        // one global weighted mean, distributed with α forced to 1
};

std::string to_string(Aggregation a);
Aggregation aggregation_from_string(const std::string& name);
std::string to_string(Design d);
Design design_from_string(const std::string& name);

struct ScheduleConfig {
    std::vector<int> layers;  // empty means every backbone layer
    int prefix_len = 1;
    int suffix_len = 1;
    bool tied = true;
    int rank = 4;

    InterventionSchedule resolve(int num_layers) const;
};

struct DataConfig {
    Design design = Design::DistinctTask;
    int num_tasks = 3;
    int examples_per_client = 300;
    std::vector<double> mix_proportions;  // MixedTask only; uniform when empty
};

struct ExperimentConfig {
    int clients = 3;
    int rounds = 10;
    Aggregation aggregation = Aggregation::AbmGeomedian;
    SharingStrategy sharing = SharingStrategy::Full;
    ScheduleConfig schedule;
    BackboneConfig backbone;
    OptimizerConfig optimizer;
    std::vector<double> alpha_grid;  // empty means the default grid
    DataConfig data;
    std::string init_scheme = "identity";  // identity | gaussian
    std::uint64_t seed = 42;

    void validate() const;  // throws ConfigError naming the offending field
    InitScheme resolved_init_scheme() const;
};

// Parses a config over the defaults. A seed override replaces the master
// seed before derived seeds (backbone, data, clients) are resolved; an
// explicit backbone.seed in the file always wins.
ExperimentConfig config_from_json(const std::string& text,
                                  std::optional<std::uint64_t> seed_override = {},
                                  std::optional<int> rounds_override = {});
std::string config_to_json(const ExperimentConfig& cfg);

struct ClientRoundMetrics {
    int id = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double accuracy = 0.0;
    double alpha = 0.0;
    std::uint64_t uplink_bytes = 0;
};

struct GroupDiagnostics {
    std::string group;
    int iterations = 0;
    double objective = 0.0;
    bool converged = false;
};

struct ClientAggregationDiagnostics {
    int client = 0;
    std::vector<GroupDiagnostics> groups;
};

struct RoundReport {
    int round = 0;
    std::vector<ClientRoundMetrics> clients;
    std::vector<ClientAggregationDiagnostics> aggregation;  // geometric-median runs only
};

std::string round_report_to_json(const RoundReport& report);

struct ClientSummary {
    int id = 0;
    int task = 0;
    double final_accuracy = 0.0;
    std::vector<double> alpha_history;
    std::uint64_t total_uplink_bytes = 0;
};

struct ExperimentSummary {
    std::vector<ClientSummary> clients;
    double mean_final_accuracy = 0.0;
};

// Server side of one round: gathers every client's shared groups.
std::map<int, ParamVector> collect_payloads(const std::vector<ClientState>& clients,
                                            SharingStrategy strategy);

// Pure aggregation over collected payloads; the returned map holds the
// parameters each client will receive. Geometric-median diagnostics are
// appended to `diagnostics` when non-null.
std::map<int, ParamVector> aggregate_payloads(
    const std::map<int, ParamVector>& payloads, Aggregation method,
    const std::map<int, double>& weights, const WeiszfeldConfig& weiszfeld,
    std::vector<ClientAggregationDiagnostics>* diagnostics);

/**
 * Federated round engine. Each round: every client trains locally, uploads
 * its shared groups, receives its aggregate, tunes α on validation loss
 * (forced to 1 under FedAvg), fuses, and is evaluated on its test split.
 */
class Experiment {
public:
    explicit Experiment(ExperimentConfig cfg);

    RoundReport run_round();
    std::vector<RoundReport> run_all();

    const ExperimentConfig& config() const { return cfg_; }
    const FrozenBackbone& backbone() const { return backbone_; }
    const FederatedDataset& dataset() const { return dataset_; }
    const std::vector<ClientState>& clients() const { return clients_; }
    std::vector<ClientState>& clients() { return clients_; }
    int rounds_completed() const { return rounds_completed_; }
    const std::vector<RoundReport>& reports() const { return reports_; }

    ExperimentSummary summary() const;

private:
    ExperimentConfig cfg_;
    FrozenBackbone backbone_;
    FederatedDataset dataset_;
    std::vector<ClientState> clients_;
    std::vector<RoundReport> reports_;
    int rounds_completed_ = 0;
};

// Runs the full experiment; fills `summary` when non-null.
std::vector<RoundReport> run_experiment(const ExperimentConfig& cfg,
                                        ExperimentSummary* summary = nullptr);

// One line of JSON per round.
void write_rounds_jsonl(const std::vector<RoundReport>& reports, std::ostream& out);
// client,task,final_accuracy,alpha_trajectory,total_uplink_bytes
void write_summary_csv(const ExperimentSummary& summary, std::ostream& out);

// Trains one isolated client on its own split for `epochs` total epochs and
// returns its test accuracy. Used as the learnability oracle.
double standalone_accuracy(const ExperimentConfig& cfg, int client_index, int epochs);

}  // namespace reftfl
