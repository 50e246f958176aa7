#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "reftfl/errors.hpp"
#include "reftfl/orchestrator.hpp"

using namespace reftfl;

namespace {

ExperimentConfig tiny_config() {
    ExperimentConfig cfg;
    cfg.clients = 3;
    cfg.rounds = 2;
    cfg.data.design = Design::DistinctTask;
    cfg.data.num_tasks = 3;
    cfg.data.examples_per_client = 60;
    cfg.backbone.num_layers = 2;
    cfg.backbone.hidden_dim = 8;
    cfg.backbone.seq_len = 6;
    cfg.backbone.vocab = 8;
    cfg.backbone.seed = 5150;
    cfg.schedule.rank = 2;
    cfg.optimizer.epochs = 1;
    cfg.seed = 99;
    return cfg;
}

std::string reports_as_jsonl(const std::vector<RoundReport>& reports) {
    std::stringstream out;
    write_rounds_jsonl(reports, out);
    return out.str();
}

}  // namespace

TEST_CASE("config validation names the offending field") {
    ExperimentConfig cfg = tiny_config();
    cfg.rounds = 0;
    try {
        cfg.validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("rounds") != std::string::npos);
    }

    cfg = tiny_config();
    cfg.schedule.rank = 100;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = tiny_config();
    cfg.clients = 1;  // abm needs two
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = tiny_config();
    cfg.data.num_tasks = 2;  // DT requires num_tasks == clients
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("config json round-trips and rejects bad fields") {
    const ExperimentConfig cfg = tiny_config();
    const std::string text = config_to_json(cfg);
    const ExperimentConfig parsed = config_from_json(text);
    CHECK(parsed.clients == cfg.clients);
    CHECK(parsed.rounds == cfg.rounds);
    CHECK(parsed.backbone.seed == cfg.backbone.seed);
    CHECK(parsed.schedule.rank == cfg.schedule.rank);
    CHECK(config_to_json(parsed) == text);

    try {
        config_from_json(R"({"rounds": "ten"})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("rounds") != std::string::npos);
    }
    CHECK_THROWS_AS(config_from_json("not json"), ConfigError);

    // seed override re-derives the backbone seed unless explicit
    const ExperimentConfig overridden = config_from_json(R"({"clients":3,"data":{"num_tasks":3}})",
                                                         std::optional<std::uint64_t>(7), {});
    CHECK(overridden.seed == 7);
    CHECK(overridden.backbone.seed == derive_seed(7, 2));
    const ExperimentConfig explicit_seed = config_from_json(
        R"({"clients":3,"data":{"num_tasks":3},"backbone":{"seed":123}})",
        std::optional<std::uint64_t>(7), {});
    CHECK(explicit_seed.backbone.seed == 123);
}

TEST_CASE("fedavg on identical data drives shared parameters to consensus") {
    const ExperimentConfig cfg = tiny_config();
    const FrozenBackbone backbone = make_backbone(cfg.backbone);
    const FederatedDataset data =
        generate(Design::DistinctTask, 1, 1, 60, cfg.backbone.seq_len, cfg.backbone.vocab, 17);
    const InterventionSchedule schedule = cfg.schedule.resolve(cfg.backbone.num_layers);

    std::vector<ClientState> clients;
    for (int i = 0; i < 3; ++i) {
        clients.push_back(make_client(i, backbone, schedule, 2, InitScheme::IdentityStart,
                                      derive_seed(1, static_cast<std::uint64_t>(i)),
                                      data.clients[0].train, data.clients[0].val));
    }
    OptimizerConfig opt;
    opt.epochs = 1;
    for (ClientState& c : clients) local_train(c, backbone, opt);

    const auto payloads = collect_payloads(clients, SharingStrategy::Full);
    std::map<int, double> weights{{0, 1.0}, {1, 1.0}, {2, 1.0}};
    const auto targets = aggregate_payloads(payloads, Aggregation::FedAvg, weights,
                                            WeiszfeldConfig{}, nullptr);
    for (ClientState& c : clients) {
        fuse(c, targets.at(c.id), 1.0, SharingStrategy::Full);
    }
    for (std::size_t s = 0; s < clients[0].bundle.params.size(); ++s) {
        for (int i = 1; i < 3; ++i) {
            CHECK(clients[static_cast<std::size_t>(i)].bundle.params[s].w ==
                  clients[0].bundle.params[s].w);
            CHECK(clients[static_cast<std::size_t>(i)].bundle.params[s].b ==
                  clients[0].bundle.params[s].b);
            CHECK(clients[static_cast<std::size_t>(i)].bundle.params[s].r ==
                  clients[0].bundle.params[s].r);
        }
    }
}

TEST_CASE("two-client abm hands each client the other's payload") {
    const ExperimentConfig cfg = tiny_config();
    const FrozenBackbone backbone = make_backbone(cfg.backbone);
    const FederatedDataset data =
        generate(Design::DistinctTask, 2, 2, 60, cfg.backbone.seq_len, cfg.backbone.vocab, 19);
    const InterventionSchedule schedule = cfg.schedule.resolve(cfg.backbone.num_layers);
    std::vector<ClientState> clients;
    for (int i = 0; i < 2; ++i) {
        clients.push_back(make_client(i, backbone, schedule, 2, InitScheme::IdentityStart,
                                      derive_seed(2, static_cast<std::uint64_t>(i)),
                                      data.clients[static_cast<std::size_t>(i)].train,
                                      data.clients[static_cast<std::size_t>(i)].val));
    }
    const auto payloads = collect_payloads(clients, SharingStrategy::Full);
    const auto targets = aggregate_payloads(payloads, Aggregation::AbmGeomedian, {},
                                            WeiszfeldConfig{}, nullptr);
    CHECK(targets.at(0).flat == payloads.at(1).flat);
    CHECK(targets.at(1).flat == payloads.at(0).flat);
}

TEST_CASE("abm targets differ across three distinct clients") {
    const ExperimentConfig cfg = tiny_config();
    Experiment experiment(cfg);
    experiment.run_round();
    const auto payloads = collect_payloads(experiment.clients(), cfg.sharing);
    const auto targets = aggregate_payloads(payloads, Aggregation::AbmGeomedian, {},
                                            WeiszfeldConfig{}, nullptr);
    CHECK(targets.at(0).flat != targets.at(1).flat);
    CHECK(targets.at(1).flat != targets.at(2).flat);
    CHECK(targets.at(0).flat != targets.at(2).flat);
}

TEST_CASE("round reports account uplink bytes exactly") {
    for (SharingStrategy strategy :
         {SharingStrategy::Full, SharingStrategy::NoBias, SharingStrategy::NoW}) {
        ExperimentConfig cfg = tiny_config();
        cfg.sharing = strategy;
        cfg.rounds = 1;
        Experiment experiment(cfg);
        const RoundReport report = experiment.run_round();
        const std::uint64_t expected =
            8ULL * shared_scalar_count(cfg.schedule.resolve(cfg.backbone.num_layers),
                                       static_cast<std::size_t>(cfg.schedule.rank),
                                       static_cast<std::size_t>(cfg.backbone.hidden_dim), strategy);
        for (const ClientRoundMetrics& m : report.clients) {
            CHECK(m.uplink_bytes == expected);
        }
    }
}

TEST_CASE("published sharing-cost ratio holds on simulator payloads") {
    ExperimentConfig cfg = tiny_config();
    cfg.backbone.hidden_dim = 64;
    cfg.backbone.num_layers = 4;
    cfg.schedule.rank = 8;
    cfg.schedule.layers = {0, 1, 2, 3};
    cfg.schedule.prefix_len = 1;
    cfg.schedule.suffix_len = 0;
    cfg.schedule.tied = true;
    cfg.backbone.vocab = 16;

    Experiment experiment(cfg);
    const auto full = collect_payloads(experiment.clients(), SharingStrategy::Full);
    const auto no_w = collect_payloads(experiment.clients(), SharingStrategy::NoW);
    CHECK(full.at(0).flat.size() == 4128);
    CHECK(no_w.at(0).flat.size() == 2080);
    const double ratio = static_cast<double>(no_w.at(0).flat.size()) /
                         static_cast<double>(full.at(0).flat.size());
    CHECK(ratio >= 0.50);
    CHECK(ratio <= 0.51);
}

TEST_CASE("no-W sharing never changes W through aggregation") {
    ExperimentConfig cfg = tiny_config();
    cfg.sharing = SharingStrategy::NoW;
    cfg.optimizer.lr = 0.0;  // isolate aggregation: training becomes a no-op
    Experiment experiment(cfg);
    std::vector<Matrix> before;
    for (const ClientState& c : experiment.clients()) {
        for (const LoReftParams& p : c.bundle.params) before.push_back(p.w);
    }
    experiment.run_round();
    experiment.run_round();
    std::size_t idx = 0;
    for (const ClientState& c : experiment.clients()) {
        for (const LoReftParams& p : c.bundle.params) {
            CHECK(p.w == before[idx++]);
        }
    }
}

TEST_CASE("payloads exclude the classifier head under every strategy") {
    const ExperimentConfig cfg = tiny_config();
    Experiment experiment(cfg);
    const InterventionSchedule schedule = cfg.schedule.resolve(cfg.backbone.num_layers);
    for (SharingStrategy strategy :
         {SharingStrategy::Full, SharingStrategy::NoBias, SharingStrategy::NoW}) {
        const auto payloads = collect_payloads(experiment.clients(), strategy);
        const std::uint64_t shared =
            shared_scalar_count(schedule, static_cast<std::size_t>(cfg.schedule.rank),
                                static_cast<std::size_t>(cfg.backbone.hidden_dim), strategy);
        for (const auto& [id, payload] : payloads) {
            (void)id;
            CHECK(payload.flat.size() == shared);
        }
    }
}

TEST_CASE("run_round records alphas from the grid and sane metrics") {
    ExperimentConfig cfg = tiny_config();
    cfg.alpha_grid = {0.0, 0.5, 1.0};
    Experiment experiment(cfg);
    const RoundReport report = experiment.run_round();
    REQUIRE(report.clients.size() == 3);
    for (const ClientRoundMetrics& m : report.clients) {
        CHECK((m.alpha == 0.0 || m.alpha == 0.5 || m.alpha == 1.0));
        CHECK(m.accuracy >= 0.0);
        CHECK(m.accuracy <= 1.0);
        CHECK(std::isfinite(m.train_loss));
        CHECK(std::isfinite(m.val_loss));
    }
    CHECK(report.aggregation.size() == 3);  // geometric-median diagnostics per client
    for (const auto& diag : report.aggregation) {
        CHECK(diag.groups.size() == 3);  // W, R, b
    }
}

TEST_CASE("fedavg rounds force alpha to one and skip diagnostics") {
    ExperimentConfig cfg = tiny_config();
    cfg.aggregation = Aggregation::FedAvg;
    Experiment experiment(cfg);
    const RoundReport report = experiment.run_round();
    for (const ClientRoundMetrics& m : report.clients) {
        CHECK(m.alpha == 1.0);
    }
    CHECK(report.aggregation.empty());
}

TEST_CASE("experiments are deterministic and summaries consistent") {
    const ExperimentConfig cfg = tiny_config();
    ExperimentSummary s1, s2;
    const auto r1 = run_experiment(cfg, &s1);
    const auto r2 = run_experiment(cfg, &s2);
    CHECK(reports_as_jsonl(r1) == reports_as_jsonl(r2));
    CHECK(static_cast<int>(r1.size()) == cfg.rounds);

    double mean = 0.0;
    for (const ClientSummary& c : s1.clients) mean += c.final_accuracy;
    mean /= static_cast<double>(s1.clients.size());
    CHECK(s1.mean_final_accuracy == doctest::Approx(mean).epsilon(1e-15));
    for (const ClientSummary& c : s1.clients) {
        CHECK(c.alpha_history.size() == static_cast<std::size_t>(cfg.rounds));
        CHECK(c.total_uplink_bytes == r1.front().clients[0].uplink_bytes * 2);
    }
}

TEST_CASE("summary csv shape") {
    const ExperimentConfig cfg = tiny_config();
    ExperimentSummary summary;
    run_experiment(cfg, &summary);
    std::stringstream out;
    write_summary_csv(summary, out);
    std::string line;
    std::getline(out, line);
    CHECK(line == "client,task,final_accuracy,alpha_trajectory,total_uplink_bytes");
    int rows = 0;
    while (std::getline(out, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == cfg.clients);
}

TEST_CASE("divergence during a round names the client") {
    ExperimentConfig cfg = tiny_config();
    Experiment experiment(cfg);
    experiment.clients()[1].head.w_out(0, 0) = std::numeric_limits<double>::quiet_NaN();
    try {
        experiment.run_round();
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(std::string(e.what()).find("client 1") != std::string::npos);
    }
}
