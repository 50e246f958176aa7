#include <doctest.h>

#include <cmath>

#include "reftfl/client.hpp"
#include "reftfl/errors.hpp"
#include "reftfl/orchestrator.hpp"

using namespace reftfl;

namespace {

struct Fixture {
    BackboneConfig bc;
    FrozenBackbone backbone;
    FederatedDataset data;
    InterventionSchedule schedule;

    Fixture()
        : bc{make_config()},
          backbone{make_backbone(bc)},
          data{generate(Design::DistinctTask, 2, 2, 100, bc.seq_len, bc.vocab, 5)},
          schedule{make_schedule()} {}

    static BackboneConfig make_config() {
        BackboneConfig bc;
        bc.num_layers = 3;
        bc.hidden_dim = 12;
        bc.seq_len = 8;
        bc.vocab = 12;
        bc.classes = 2;
        bc.seed = 1234;
        return bc;
    }

    static InterventionSchedule make_schedule() {
        InterventionSchedule schedule;
        schedule.layers = {0, 1, 2};
        schedule.prefix_len = 1;
        schedule.suffix_len = 1;
        schedule.tied = true;
        return schedule;
    }

    ClientState client(int id, std::uint64_t seed) const {
        return make_client(id, backbone, schedule, 3, InitScheme::IdentityStart, seed,
                           data.clients[static_cast<std::size_t>(id)].train,
                           data.clients[static_cast<std::size_t>(id)].val);
    }
};

Vector flatten_params(const ClientState& state) {
    Vector flat;
    auto append = [&flat](const Vector& v) { flat.insert(flat.end(), v.begin(), v.end()); };
    append(state.head.w_proj.data());
    append(state.head.b_proj);
    append(state.head.w_out.data());
    append(state.head.b_out);
    for (const LoReftParams& p : state.bundle.params) {
        append(p.w.data());
        append(p.r.data());
        append(p.b);
    }
    return flat;
}

ParamVector garbage_like(const ParamVector& layout, double scale, std::uint64_t seed) {
    ParamVector out = layout;
    Rng rng(seed);
    for (double& v : out.flat) v = scale * rng.gaussian();
    return out;
}

}  // namespace

TEST_CASE("lr = 0 and no decay leaves parameters bit-identical") {
    const Fixture fx;
    ClientState client = fx.client(0, 11);
    const Vector before = flatten_params(client);
    OptimizerConfig opt;
    opt.lr = 0.0;
    opt.weight_decay = 0.0;
    opt.epochs = 2;
    local_train(client, fx.backbone, opt);
    CHECK(flatten_params(client) == before);
}

TEST_CASE("lr = 0 with decay shrinks every parameter multiplicatively") {
    const Fixture fx;
    ClientState client = fx.client(0, 13);
    const Vector before = flatten_params(client);
    OptimizerConfig opt;
    opt.lr = 0.0;
    opt.weight_decay = 0.01;
    opt.epochs = 1;
    opt.batch_size = 16;
    local_train(client, fx.backbone, opt);
    const auto steps = static_cast<double>(client.opt.step);
    REQUIRE(steps > 0);
    const double factor = std::pow(1.0 - opt.weight_decay, steps);
    const Vector after = flatten_params(client);
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(after[i] == doctest::Approx(before[i] * factor).epsilon(1e-12));
    }
}

TEST_CASE("a separable task is learned to high training accuracy") {
    BackboneConfig bc = Fixture::make_config();
    const FrozenBackbone backbone = make_backbone(bc);
    const FederatedDataset data =
        generate(Design::DistinctTask, 1, 1, 100, bc.seq_len, bc.vocab, 21);
    ClientState client = make_client(0, backbone, Fixture::make_schedule(), 3,
                                     InitScheme::IdentityStart, 77, data.clients[0].train,
                                     data.clients[0].val);
    OptimizerConfig opt;
    opt.epochs = 50;
    local_train(client, backbone, opt);
    CHECK(evaluate(client, backbone, client.train).accuracy >= 0.95);
}

TEST_CASE("the loss curve improves over training") {
    const Fixture fx;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ClientState client = fx.client(0, 100 + seed);
        OptimizerConfig opt;
        opt.epochs = 5;
        const std::vector<double> curve = local_train(client, fx.backbone, opt);
        REQUIRE(curve.size() == 5);
        CHECK(curve.back() < curve.front());
    }
}

TEST_CASE("training is deterministic under the client seed") {
    const Fixture fx;
    ClientState a = fx.client(0, 313);
    ClientState b = fx.client(0, 313);
    OptimizerConfig opt;
    opt.epochs = 3;
    local_train(a, fx.backbone, opt);
    local_train(b, fx.backbone, opt);
    CHECK(flatten_params(a) == flatten_params(b));
}

TEST_CASE("a non-finite loss raises a divergence error with the step index") {
    const Fixture fx;
    ClientState client = fx.client(0, 17);
    client.head.w_out(0, 0) = std::numeric_limits<double>::infinity();
    OptimizerConfig opt;
    opt.epochs = 1;
    try {
        local_train(client, fx.backbone, opt);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(e.step == 1);
    }
}

TEST_CASE("training touches only head and intervention parameters") {
    const Fixture fx;
    const Matrix embedding_before = fx.backbone.embedding;
    const std::vector<Matrix> weights_before = fx.backbone.layer_weights;
    ClientState client = fx.client(0, 19);
    OptimizerConfig opt;
    opt.epochs = 2;
    local_train(client, fx.backbone, opt);
    CHECK(fx.backbone.embedding == embedding_before);
    for (std::size_t l = 0; l < weights_before.size(); ++l) {
        CHECK(fx.backbone.layer_weights[l] == weights_before[l]);
    }
}

TEST_CASE("empty splits are rejected") {
    const Fixture fx;
    ClientState client = fx.client(0, 23);
    client.train.clear();
    CHECK_THROWS_AS(local_train(client, fx.backbone, OptimizerConfig{}), ConfigError);

    ClientState other = fx.client(0, 23);
    other.val.clear();
    const ParamVector shared = extract_shared(other.bundle, SharingStrategy::Full);
    CHECK_THROWS_AS(tune_alpha(other, fx.backbone, shared, AlphaGrid::default_grid(),
                               SharingStrategy::Full),
                    ConfigError);
}

TEST_CASE("shared-group flattening round-trips through fuse") {
    const Fixture fx;
    for (SharingStrategy strategy :
         {SharingStrategy::Full, SharingStrategy::NoBias, SharingStrategy::NoW}) {
        ClientState client = fx.client(0, 29);
        const Vector before = flatten_params(client);
        const ParamVector shared = extract_shared(client.bundle, strategy);
        CHECK(shared.flat.size() ==
              shared_scalar_count(fx.schedule, 3, static_cast<std::size_t>(fx.bc.hidden_dim), strategy));
        fuse(client, shared, 1.0, strategy);  // overwrite with itself
        const Vector after = flatten_params(client);
        // W and b are bit-identical; R passes once more through the
        // orthonormalizer.
        CHECK(l2_distance(before, after) < 1e-12);
    }
}

TEST_CASE("tune_alpha prefers the smaller alpha on ties") {
    const Fixture fx;
    ClientState client = fx.client(0, 31);
    const ParamVector own = extract_shared(client.bundle, SharingStrategy::Full);
    const AlphaChoice choice =
        tune_alpha(client, fx.backbone, own, AlphaGrid::default_grid(), SharingStrategy::Full);
    CHECK(choice.alpha == 0.0);
    for (double l : choice.losses) {
        CHECK(l == choice.losses.front());
    }
}

TEST_CASE("tune_alpha rejects garbage aggregates on a trained client") {
    const Fixture fx;
    ClientState client = fx.client(0, 37);
    OptimizerConfig opt;
    opt.epochs = 10;
    local_train(client, fx.backbone, opt);
    const ParamVector layout = extract_shared(client.bundle, SharingStrategy::Full);
    const ParamVector garbage = garbage_like(layout, 100.0, 999);
    const AlphaChoice choice =
        tune_alpha(client, fx.backbone, garbage, AlphaGrid::default_grid(), SharingStrategy::Full);
    CHECK(choice.alpha == 0.0);
}

TEST_CASE("tune_alpha single-candidate grid and argmin property") {
    const Fixture fx;
    ClientState client = fx.client(0, 41);
    OptimizerConfig opt;
    opt.epochs = 2;
    local_train(client, fx.backbone, opt);
    const ParamVector other = garbage_like(extract_shared(client.bundle, SharingStrategy::Full), 0.5, 7);

    AlphaGrid single;
    single.values = {0.5};
    CHECK(tune_alpha(client, fx.backbone, other, single, SharingStrategy::Full).alpha == 0.5);

    const AlphaChoice full =
        tune_alpha(client, fx.backbone, other, AlphaGrid::default_grid(), SharingStrategy::Full);
    double best = full.losses.front();
    for (double l : full.losses) best = std::min(best, l);
    CHECK(full.losses.front() >= best);  // alpha = 0
    CHECK(full.losses.back() >= best);   // alpha = 1
}

TEST_CASE("fuse endpoint contracts") {
    const Fixture fx;
    ClientState client = fx.client(0, 43);
    const ParamBundle local = client.bundle;
    const ParamVector aggregate =
        garbage_like(extract_shared(client.bundle, SharingStrategy::Full), 0.3, 11);

    SUBCASE("alpha = 0 keeps W and b bitwise, R up to re-orthonormalization") {
        fuse(client, aggregate, 0.0, SharingStrategy::Full);
        for (std::size_t s = 0; s < local.params.size(); ++s) {
            CHECK(client.bundle.params[s].w == local.params[s].w);
            CHECK(client.bundle.params[s].b == local.params[s].b);
            CHECK(frobenius_distance(client.bundle.params[s].r, local.params[s].r) < 1e-12);
        }
        CHECK(client.alpha_history == std::vector<double>{0.0});
    }

    SUBCASE("alpha = 1 adopts the aggregate, R re-orthonormalized") {
        fuse(client, aggregate, 1.0, SharingStrategy::Full);
        std::size_t offset = 0;
        for (std::size_t s = 0; s < local.params.size(); ++s) {
            for (double w : client.bundle.params[s].w.data()) {
                CHECK(w == aggregate.flat[offset++]);
            }
        }
        for (std::size_t s = 0; s < local.params.size(); ++s) {
            Matrix incoming(3, static_cast<std::size_t>(fx.bc.hidden_dim));
            for (double& v : incoming.data()) v = aggregate.flat[offset++];
            CHECK(client.bundle.params[s].r == orthonormalize_rows(incoming));
        }
    }

    SUBCASE("alpha outside [0, 1] is rejected") {
        CHECK_THROWS_AS(fuse(client, aggregate, 1.5, SharingStrategy::Full), InputError);
    }

    SUBCASE("layout mismatch is rejected") {
        const ParamVector wrong = extract_shared(client.bundle, SharingStrategy::NoW);
        CHECK_THROWS_AS(fuse(client, wrong, 0.5, SharingStrategy::Full), InputError);
    }
}

TEST_CASE("fuse midpoint on a scalar instance is exact") {
    BackboneConfig bc = Fixture::make_config();
    bc.hidden_dim = 1;
    const FrozenBackbone backbone = make_backbone(bc);
    InterventionSchedule schedule;
    schedule.layers = {0};
    schedule.prefix_len = 1;
    schedule.suffix_len = 0;
    schedule.tied = true;
    const FederatedDataset data = generate(Design::DistinctTask, 1, 1, 20, bc.seq_len, bc.vocab, 3);
    ClientState client = make_client(0, backbone, schedule, 1, InitScheme::IdentityStart, 5,
                                     data.clients[0].train, data.clients[0].val);
    client.bundle.params[0].w(0, 0) = 0.3;
    ParamVector aggregate = extract_shared(client.bundle, SharingStrategy::Full);
    const std::size_t w_offset = 0;
    aggregate.flat[w_offset] = 0.7;
    fuse(client, aggregate, 0.5, SharingStrategy::Full);
    CHECK(client.bundle.params[0].w(0, 0) == (0.3 + 0.7) / 2.0);
}

TEST_CASE("fusion respects the sharing strategy") {
    const Fixture fx;
    ClientState client = fx.client(0, 47);
    const ParamBundle local = client.bundle;

    const ParamVector no_w = garbage_like(extract_shared(client.bundle, SharingStrategy::NoW), 0.3, 13);
    fuse(client, no_w, 0.7, SharingStrategy::NoW);
    for (std::size_t s = 0; s < local.params.size(); ++s) {
        CHECK(client.bundle.params[s].w == local.params[s].w);  // W untouched bitwise
        CHECK(client.bundle.params[s].b != local.params[s].b);
    }

    ClientState other = fx.client(0, 47);
    const ParamVector no_bias =
        garbage_like(extract_shared(other.bundle, SharingStrategy::NoBias), 0.3, 17);
    fuse(other, no_bias, 0.7, SharingStrategy::NoBias);
    for (std::size_t s = 0; s < local.params.size(); ++s) {
        CHECK(other.bundle.params[s].b == local.params[s].b);
        CHECK(other.bundle.params[s].w != local.params[s].w);
    }
}

TEST_CASE("post-fuse orthonormality holds at any alpha") {
    const Fixture fx;
    for (double alpha : {0.0, 0.3, 0.5, 0.8, 1.0}) {
        ClientState client = fx.client(0, 53);
        const ParamVector aggregate =
            garbage_like(extract_shared(client.bundle, SharingStrategy::Full), 1.0, 19);
        fuse(client, aggregate, alpha, SharingStrategy::Full);
        for (const LoReftParams& p : client.bundle.params) {
            CHECK(row_orthonormality_error(p.r) < 1e-8);
        }
    }
}
