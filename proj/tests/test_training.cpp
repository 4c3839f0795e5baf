#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dcls/diagnostics.hpp"
#include "dcls/geometry.hpp"
#include "dcls/model.hpp"
#include "dcls/training.hpp"

using dcls::InitDist;
using dcls::KernelSpec;
using dcls::Parameter;
using dcls::ParamKind;
using dcls::Tensor;

namespace {

KernelSpec toy_spec(int s = 9, int m = 4, int cout = 2, int cin = 1, int groups = 2) {
    KernelSpec spec;
    spec.ndims = 2;
    spec.kernel_count = m;
    spec.dilated_size = {s, s};
    spec.channels_out = cout;
    spec.channels_in_per_group = cin;
    spec.groups = groups;
    return spec;
}

dcls::ConvConfig grouped_cfg() {
    dcls::ConvConfig cfg;
    cfg.groups = 2;
    return cfg;
}

}  // namespace

TEST_CASE("normal position init matches its declared distribution") {
    KernelSpec spec = toy_spec(17, 25, 20, 10, 1);  // 2*20*10*25 = 10000 coordinates
    Tensor p = dcls::init_positions(spec, InitDist::normal, 123);
    REQUIRE(p.size() == 10000);

    double mean = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) mean += p[i];
    mean /= static_cast<double>(p.size());
    double var = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= static_cast<double>(p.size());

    CHECK(std::abs(mean) < 0.02);
    CHECK(std::sqrt(var) > 0.47);
    CHECK(std::sqrt(var) < 0.53);
}

TEST_CASE("uniform init covers the box and stays inside it") {
    KernelSpec spec = toy_spec(9, 16, 4, 4, 1);
    Tensor p = dcls::init_positions(spec, InitDist::uniform, 7);
    for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(p[i] >= -4.0);
        CHECK(p[i] <= 4.0);
    }
    Tensor again = dcls::init_positions(spec, InitDist::uniform, 7);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == again[i]);
    Tensor other = dcls::init_positions(spec, InitDist::uniform, 8);
    bool any_differs = false;
    for (std::size_t i = 0; i < p.size(); ++i) any_differs = any_differs || p[i] != other[i];
    CHECK(any_differs);
}

TEST_CASE("clamping projects strays onto the box edge") {
    KernelSpec spec = toy_spec(17, 1, 1, 1, 1);
    Tensor p(spec.position_shape(), 0.0);

    p[0] = 9.7;
    CHECK(dcls::clamp_positions(p, spec) == 1);
    CHECK(p[0] == doctest::Approx(8.0));

    p[0] = -8.0001;
    CHECK(dcls::clamp_positions(p, spec) == 1);
    CHECK(p[0] == doctest::Approx(-8.0));

    p[0] = 3.5;
    p[1] = -2.0;
    CHECK(dcls::clamp_positions(p, spec) == 0);
    CHECK(p[0] == doctest::Approx(3.5));
}

TEST_CASE("parameter groups carry the position-learning defaults") {
    dcls::Model model;
    for (int i = 0; i < 3; ++i) {
        model.layers.push_back(dcls::make_layer(toy_spec(), grouped_cfg()));
    }
    auto groups = dcls::make_param_groups(model.parameters());
    REQUIRE(groups.size() == 2);
    CHECK(groups[0].kind == ParamKind::weights);
    CHECK(groups[0].lr_multiplier == doctest::Approx(1.0));
    CHECK(groups[0].members.size() == 3);
    CHECK(groups[1].kind == ParamKind::positions);
    CHECK(groups[1].weight_decay == doctest::Approx(0.0));
    CHECK(groups[1].lr_multiplier == doctest::Approx(5.0));
    CHECK(groups[1].members.size() == 3);

    Tensor orphan({2}, 0.0);
    std::vector<Parameter> params = {{"mystery", &orphan, std::nullopt}};
    CHECK_THROWS_AS(dcls::make_param_groups(params), std::invalid_argument);
}

TEST_CASE("position updates are 5x weight updates for equal gradients") {
    Tensor w({3}, {0.0, 0.0, 0.0});
    Tensor p({3}, {0.0, 0.0, 0.0});
    std::vector<Parameter> params = {{"w", &w, ParamKind::weights},
                                     {"p", &p, ParamKind::positions}};
    dcls::GroupDefaults gd;
    gd.weights_decay = 0.0;  // isolate the multiplier
    dcls::SgdOptimizer opt(dcls::make_param_groups(params, gd), 0.9);

    Tensor grad({3}, {1.0, -2.0, 0.5});
    opt.step({&grad, &grad}, 0.01);

    const Tensor& wu = opt.last_update(0);
    const Tensor& pu = opt.last_update(1);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(pu[i] == doctest::Approx(5.0 * wu[i]).epsilon(1e-15));
        CHECK(wu[i] == doctest::Approx(0.01 * grad[i]).epsilon(1e-15));
    }
}

TEST_CASE("positions never receive weight decay") {
    Tensor w({2}, {10.0, -10.0});
    Tensor p({2}, {3.0, -3.0});
    std::vector<Parameter> params = {{"w", &w, ParamKind::weights},
                                     {"p", &p, ParamKind::positions}};
    dcls::GroupDefaults gd;
    gd.weights_decay = 0.1;
    dcls::SgdOptimizer opt(dcls::make_param_groups(params, gd), 0.0);

    Tensor zero({2}, {0.0, 0.0});
    opt.step({&zero, &zero}, 0.5);

    CHECK(p[0] == doctest::Approx(3.0));  // untouched: zero gradient, zero decay
    CHECK(p[1] == doctest::Approx(-3.0));
    CHECK(w[0] == doctest::Approx(10.0 - 0.5 * 0.1 * 10.0));  // decayed
}

TEST_CASE("momentum accumulates the way the update rule says") {
    Tensor w({1}, {1.0});
    std::vector<Parameter> params = {{"w", &w, ParamKind::weights}};
    dcls::GroupDefaults gd;
    gd.weights_decay = 0.0;
    dcls::SgdOptimizer opt(dcls::make_param_groups(params, gd), 0.5);

    Tensor g({1}, {1.0});
    opt.step({&g}, 0.1);  // v = 1, update = 0.1
    CHECK(w[0] == doctest::Approx(0.9));
    opt.step({&g}, 0.1);  // v = 1.5, update = 0.15
    CHECK(w[0] == doctest::Approx(0.75));
}

TEST_CASE("the schedule warms up linearly and decays to zero") {
    const double base = 0.4;
    CHECK(dcls::scheduled_lr(0, 100, base, 10) == doctest::Approx(base * 0.1));
    CHECK(dcls::scheduled_lr(9, 100, base, 10) == doctest::Approx(base));
    CHECK(dcls::scheduled_lr(10, 100, base, 10) == doctest::Approx(base));
    CHECK(dcls::scheduled_lr(99, 100, base, 10) == doctest::Approx(0.0).epsilon(1e-9));
    for (std::size_t t = 10; t < 99; ++t) {
        CHECK(dcls::scheduled_lr(t, 100, base, 10) >= dcls::scheduled_lr(t + 1, 100, base, 10));
    }
}

TEST_CASE("sync group reduces member gradients and broadcasts positions") {
    KernelSpec spec = toy_spec();
    dcls::Model model;
    model.layers.push_back(dcls::make_layer(spec, grouped_cfg()));
    model.layers.push_back(dcls::make_layer(spec, grouped_cfg()));

    Tensor shared = dcls::init_positions(spec, InitDist::uniform, 3);
    dcls::SyncGroup sync({0, 1}, shared);

    Tensor g(spec.position_shape(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.25 * static_cast<double>(i % 7) - 0.5;

    SUBCASE("opposite gradients cancel") {
        Tensor neg(g.shape(), 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
        sync.zero_grad();
        sync.accumulate(0, g);
        sync.accumulate(1, neg);
        const Tensor& red = sync.reduced_grad();
        for (std::size_t i = 0; i < red.size(); ++i) CHECK(red[i] == doctest::Approx(0.0));
    }
    SUBCASE("identical members sum to k times the gradient") {
        sync.zero_grad();
        sync.accumulate(0, g);
        sync.accumulate(1, g);
        const Tensor& red = sync.reduced_grad();
        for (std::size_t i = 0; i < red.size(); ++i) {
            CHECK(red[i] == doctest::Approx(2.0 * g[i]).epsilon(1e-15));
        }
    }
    SUBCASE("a missing member is an error") {
        sync.zero_grad();
        sync.accumulate(0, g);
        CHECK_THROWS_AS(sync.reduced_grad(), std::logic_error);
    }
    SUBCASE("a non-member is an error") {
        sync.zero_grad();
        CHECK_THROWS_AS(sync.accumulate(5, g), std::invalid_argument);
    }
    SUBCASE("broadcast leaves every member with identical positions") {
        sync.broadcast(model);
        for (std::size_t i = 0; i < shared.size(); ++i) {
            CHECK(model.layers[0].positions[i] == shared[i]);
            CHECK(model.layers[1].positions[i] == shared[i]);
        }
    }
    SUBCASE("a single-member group is plain training") {
        dcls::SyncGroup solo({0}, shared);
        solo.zero_grad();
        solo.accumulate(0, g);
        const Tensor& red = solo.reduced_grad();
        for (std::size_t i = 0; i < red.size(); ++i) CHECK(red[i] == g[i]);
    }
}

TEST_CASE("repulsive loss hinges on pair distance") {
    KernelSpec spec = toy_spec(9, 2, 1, 1, 1);
    Tensor p(spec.position_shape(), 0.0);

    SUBCASE("far apart is free") {
        p[0] = -3.0;
        p[1] = 3.0;  // axis 0 of both taps; axis 1 stays 0
        CHECK(dcls::repulsive_loss(p, spec, 1.0) == doctest::Approx(0.0));
    }
    SUBCASE("coincident pairs cost 1") {
        CHECK(dcls::repulsive_loss(p, spec, 1.0) == doctest::Approx(1.0));
    }
    SUBCASE("half a radius costs a quarter") {
        p[0] = 0.0;
        p[1] = 0.5;
        CHECK(dcls::repulsive_loss(p, spec, 1.0) == doctest::Approx(0.25));
    }
    SUBCASE("radius must be positive") {
        CHECK_THROWS_AS(dcls::repulsive_loss(p, spec, 0.0), std::invalid_argument);
    }
}

TEST_CASE("repulsive gradient matches finite differences away from the kink") {
    KernelSpec spec = toy_spec(9, 3, 2, 1, 2);
    Tensor p = dcls::init_positions(spec, InitDist::uniform, 11);
    const double radius = 3.0;

    Tensor analytic = dcls::repulsive_loss_grad(p, spec, radius);
    const std::vector<double> flat(p.data(), p.data() + p.size());
    const std::vector<double> grad(analytic.data(), analytic.data() + analytic.size());
    const double err = dcls::grad_check(
        [&](const std::vector<double>& q) {
            Tensor probe(p.shape(), std::vector<double>(q));
            return dcls::repulsive_loss(probe, spec, radius);
        },
        flat, grad, 1e-5, /*check_lattice=*/false);
    CHECK(err <= 1e-6);
}

TEST_CASE("tap matching finds the cheapest assignment") {
    std::vector<dcls::TeacherTap> truth = {{{-3.0, 2.0}, 1.0},
                                           {{0.0, 0.0}, -0.5},
                                           {{4.0, -4.0}, 0.7}};
    // learned taps close to truth, listed in a different order
    std::vector<std::array<double, dcls::kMaxDims>> learned = {
        {0.1, -0.2}, {3.8, -4.1}, {-2.9, 2.2}};
    const std::vector<std::size_t> assign = dcls::match_taps(learned, truth, 2);
    REQUIRE(assign.size() == 3);
    CHECK(assign[0] == 1);
    CHECK(assign[1] == 2);
    CHECK(assign[2] == 0);

    CHECK_THROWS_AS(dcls::match_taps(learned, {truth[0]}, 2), std::invalid_argument);
}

TEST_CASE("a student started at the optimum stays there") {
    dcls::TrainConfig cfg;
    cfg.steps = 60;
    cfg.channels = 1;
    cfg.map = 12;
    cfg.init_at_teacher = true;
    cfg.weight_decay = 0.0;  // keep the optimum an exact stationary point
    cfg.snapshot_every = 20;
    cfg.seed = 4;

    dcls::TrainReport report = dcls::train_toy(cfg);
    REQUIRE_FALSE(report.diverged);
    CHECK(report.loss.front() <= 1e-20);  // residual is exactly zero at init
    CHECK(report.final_loss <= 1e-12);
    CHECK(report.max_position_error <= 1e-3);
    for (const double v : report.avg_speed) CHECK(v <= 1e-3);
}

TEST_CASE("a short training run makes progress and keeps its invariants") {
    dcls::TrainConfig cfg;
    cfg.steps = 250;
    cfg.warmup_steps = 25;
    cfg.channels = 1;
    cfg.map = 12;
    cfg.snapshot_every = 1;  // record positions after every step
    cfg.seed = 2;

    dcls::TrainReport report = dcls::train_toy(cfg);
    REQUIRE_FALSE(report.diverged);
    REQUIRE(report.loss.size() == 250);
    CHECK(report.final_loss < report.loss.front());
    CHECK(report.avg_speed.front() == doctest::Approx(0.0));

    // every post-step snapshot lies inside the clamp box
    dcls::KernelSpec spec = toy_spec(9, cfg.kernel_count, 1, 1, 1);
    for (const Tensor& snap : report.position_snapshots) {
        const std::size_t per_axis = snap.size() / 2;
        for (int d = 0; d < 2; ++d) {
            for (std::size_t i = 0; i < per_axis; ++i) {
                const double v = snap[static_cast<std::size_t>(d) * per_axis + i];
                CHECK(v >= spec.lower_bound(d));
                CHECK(v <= spec.upper_bound(d));
            }
        }
    }
}

TEST_CASE("synced branches hold identical positions throughout") {
    dcls::TrainConfig cfg;
    cfg.steps = 120;
    cfg.warmup_steps = 12;
    cfg.channels = 1;
    cfg.map = 12;
    cfg.sync_pair = true;
    cfg.seed = 6;

    dcls::TrainReport report = dcls::train_toy(cfg);
    REQUIRE_FALSE(report.diverged);
    CHECK(report.max_sync_divergence == doctest::Approx(0.0));
    REQUIRE(report.student.layers.size() == 2);
    const Tensor& a = report.student.layers[0].positions;
    const Tensor& b = report.student.layers[1].positions;
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("training configs are validated") {
    dcls::TrainConfig cfg;
    cfg.steps = 0;
    CHECK_THROWS_AS(dcls::train_toy(cfg), std::invalid_argument);
    cfg = {};
    cfg.map = 4;  // smaller than the window
    CHECK_THROWS_AS(dcls::train_toy(cfg), std::invalid_argument);
    cfg = {};
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(dcls::train_toy(cfg), std::invalid_argument);
}
