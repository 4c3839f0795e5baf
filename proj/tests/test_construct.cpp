#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dcls/construct.hpp"
#include "dcls/diagnostics.hpp"
#include "dcls/geometry.hpp"
#include "dcls/parallel.hpp"
#include "dcls/random.hpp"
#include "oracles.hpp"

using dcls::GradBundle;
using dcls::KernelSpec;
using dcls::Rng;
using dcls::Tensor;

namespace {

KernelSpec make_spec(int ndims, std::vector<int> sizes, int m, int cout = 1, int cin = 1,
                     int groups = 1) {
    KernelSpec spec;
    spec.ndims = ndims;
    spec.kernel_count = m;
    spec.dilated_size = std::move(sizes);
    spec.channels_out = cout;
    spec.channels_in_per_group = cin;
    spec.groups = groups;
    return spec;
}

/// Positions with fractional parts in [0.1, 0.9], safely off the lattice.
Tensor off_lattice_positions(const KernelSpec& spec, Rng& rng) {
    Tensor p(spec.position_shape(), 0.0);
    const std::size_t per_axis = p.size() / static_cast<std::size_t>(spec.ndims);
    for (int d = 0; d < spec.ndims; ++d) {
        for (std::size_t i = 0; i < per_axis; ++i) {
            const double span = spec.upper_bound(d) - spec.lower_bound(d);
            const int cells = std::max(1, static_cast<int>(span));
            const int cell = static_cast<int>(rng.below(static_cast<std::uint64_t>(cells)));
            p[static_cast<std::size_t>(d) * per_axis + i] =
                spec.lower_bound(d) + cell + rng.uniform(0.1, 0.9);
        }
    }
    return p;
}

}  // namespace

TEST_CASE("a unit weight spreads bilinearly over four cells") {
    // centered (0.25, 0.5) in a 3x3 window is absolute (1.25, 1.5)
    KernelSpec spec = make_spec(2, {3, 3}, 1);
    Tensor weights({1, 1, 1}, {1.0});
    Tensor positions({2, 1, 1, 1}, {0.25, 0.5});
    Tensor kernel = dcls::construct_forward(weights, positions, spec);

    CHECK(kernel(0, 0, 1, 1) == doctest::Approx(0.375).epsilon(1e-12));
    CHECK(kernel(0, 0, 2, 1) == doctest::Approx(0.125).epsilon(1e-12));
    CHECK(kernel(0, 0, 1, 2) == doctest::Approx(0.375).epsilon(1e-12));
    CHECK(kernel(0, 0, 2, 2) == doctest::Approx(0.125).epsilon(1e-12));

    double total = 0.0;
    for (std::size_t i = 0; i < kernel.size(); ++i) total += kernel[i];
    CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("1d construction with a half-cell offset") {
    KernelSpec spec = make_spec(1, {3}, 1);
    Tensor weights({1, 1, 1}, {2.0});
    Tensor positions({1, 1, 1, 1}, {-0.5});  // absolute 0.5
    Tensor kernel = dcls::construct_forward(weights, positions, spec);
    CHECK(kernel[0] == doctest::Approx(1.0));
    CHECK(kernel[1] == doctest::Approx(1.0));
    CHECK(kernel[2] == doctest::Approx(0.0));
}

TEST_CASE("backward against the worked 3x3 example") {
    KernelSpec spec = make_spec(2, {3, 3}, 1);
    Tensor weights({1, 1, 1}, {1.0});
    Tensor positions({2, 1, 1, 1}, {0.25, 0.5});  // absolute (1.25, 1.5)
    Tensor upstream({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});

    GradBundle grads = dcls::construct_backward(upstream, weights, positions, spec);
    CHECK(grads.d_weights[0] == doctest::Approx(6.25).epsilon(1e-12));
    CHECK(grads.d_positions[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(grads.d_positions[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("kernel mass equals the summed weights") {
    Rng rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        const int ndims = 1 + static_cast<int>(rng.below(3));
        std::vector<int> sizes;
        for (int d = 0; d < ndims; ++d) sizes.push_back(2 + static_cast<int>(rng.below(6)));
        const int m = 1 + static_cast<int>(rng.below(8));
        const int cout = 1 + static_cast<int>(rng.below(3));
        const int cin = 1 + static_cast<int>(rng.below(2));
        KernelSpec spec = make_spec(ndims, sizes, m, cout, cin);

        Tensor weights(spec.weight_shape(), 0.0);
        for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = rng.uniform(-2.0, 2.0);

        // mix boundary-exact, overlapping, and free positions
        Tensor positions(spec.position_shape(), 0.0);
        const std::size_t per_axis = positions.size() / static_cast<std::size_t>(ndims);
        for (int d = 0; d < ndims; ++d) {
            for (std::size_t i = 0; i < per_axis; ++i) {
                double v;
                const auto kind = rng.below(4);
                if (kind == 0) {
                    v = spec.lower_bound(d);
                } else if (kind == 1) {
                    v = spec.upper_bound(d);
                } else if (kind == 2) {
                    v = 0.0;  // everyone piles onto the center cell
                } else {
                    v = rng.uniform(spec.lower_bound(d), spec.upper_bound(d));
                }
                positions[static_cast<std::size_t>(d) * per_axis + i] = v;
            }
        }

        Tensor kernel = dcls::construct_forward(weights, positions, spec);
        const std::size_t m_sz = static_cast<std::size_t>(m);
        for (std::size_t slice = 0; slice < spec.channel_slices(); ++slice) {
            double cell_sum = 0.0;
            for (std::size_t c = 0; c < spec.cells_per_slice(); ++c) {
                cell_sum += kernel[slice * spec.cells_per_slice() + c];
            }
            double weight_sum = 0.0;
            for (std::size_t k = 0; k < m_sz; ++k) weight_sum += weights[slice * m_sz + k];
            CHECK(std::abs(cell_sum - weight_sum) <= 1e-12);
        }
    }
}

TEST_CASE("overlapping elements add their contributions") {
    KernelSpec one = make_spec(2, {5, 5}, 1);
    Tensor w1({1, 1, 1}, {0.8});
    Tensor p1({2, 1, 1, 1}, {0.3, -1.6});

    KernelSpec two = make_spec(2, {5, 5}, 2);
    Tensor w2({1, 1, 2}, {0.8, 0.8});
    Tensor p2({2, 1, 1, 2}, {0.3, 0.3, -1.6, -1.6});

    Tensor ka = dcls::construct_forward(w1, p1, one);
    Tensor kb = dcls::construct_forward(w2, p2, two);
    for (std::size_t i = 0; i < ka.size(); ++i) {
        CHECK(kb[i] == doctest::Approx(2.0 * ka[i]).epsilon(1e-12));
    }
}

TEST_CASE("a position at the window edge stays inside the grid") {
    KernelSpec spec = make_spec(1, {5}, 1);
    Tensor weights({1, 1, 1}, {3.0});
    Tensor positions({1, 1, 1, 1}, {2.0});  // absolute 4 = last cell, fraction 0
    Tensor kernel = dcls::construct_forward(weights, positions, spec);
    CHECK(kernel[4] == doctest::Approx(3.0));
    double total = 0.0;
    for (std::size_t i = 0; i < kernel.size(); ++i) total += kernel[i];
    CHECK(total == doctest::Approx(3.0));
}

TEST_CASE("out-of-bounds positions are rejected with a clamp hint") {
    KernelSpec spec = make_spec(1, {5}, 1);
    Tensor weights({1, 1, 1}, {1.0});
    Tensor positions({1, 1, 1, 1}, {2.5});  // past the upper clamp bound
    CHECK_THROWS_WITH_AS(dcls::construct_forward(weights, positions, spec),
                         doctest::Contains("clamp"), std::domain_error);
}

TEST_CASE("shape mismatches are rejected") {
    KernelSpec spec = make_spec(1, {5}, 2);
    Tensor weights({1, 1, 1}, {1.0});  // m disagrees with the spec
    Tensor positions({1, 1, 1, 2}, {0.5, -0.5});
    CHECK_THROWS_AS(dcls::construct_forward(weights, positions, spec), std::invalid_argument);

    Tensor upstream({1, 1, 4}, 0.0);  // wrong kernel extent
    Tensor ok_weights({1, 1, 2}, {1.0, 1.0});
    CHECK_THROWS_AS(dcls::construct_backward(upstream, ok_weights, positions, spec),
                    std::invalid_argument);
}

TEST_CASE("analytic construct gradients match finite differences") {
    Rng rng(7);
    for (int ndims = 1; ndims <= 3; ++ndims) {
        for (int trial = 0; trial < 5; ++trial) {
            std::vector<int> sizes;
            for (int d = 0; d < ndims; ++d) sizes.push_back(3 + static_cast<int>(rng.below(5)));
            const int m = 2 + static_cast<int>(rng.below(4));
            KernelSpec spec = make_spec(ndims, sizes, m, 2, 1, 1);

            Tensor weights(spec.weight_shape(), 0.0);
            for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = rng.uniform(-1.0, 1.0);
            Tensor positions = off_lattice_positions(spec, rng);

            // sum-loss: upstream of all ones
            Tensor ones(spec.kernel_shape(), 1.0);
            GradBundle grads = dcls::construct_backward(ones, weights, positions, spec);

            const std::vector<double> pos_flat(positions.data(),
                                               positions.data() + positions.size());
            const std::vector<double> pos_grad(grads.d_positions.data(),
                                               grads.d_positions.data() + grads.d_positions.size());
            const double pos_err = dcls::grad_check(
                [&](const std::vector<double>& p) {
                    Tensor probe(positions.shape(),
                                 std::vector<double>(p.begin(), p.end()));
                    Tensor k = dcls::construct_forward(weights, probe, spec);
                    double s = 0.0;
                    for (std::size_t i = 0; i < k.size(); ++i) s += k[i];
                    return s;
                },
                pos_flat, pos_grad, 1e-5);
            CHECK(pos_err <= 1e-6);

            const std::vector<double> w_flat(weights.data(), weights.data() + weights.size());
            const std::vector<double> w_grad(grads.d_weights.data(),
                                             grads.d_weights.data() + grads.d_weights.size());
            const double w_err = dcls::grad_check(
                [&](const std::vector<double>& w) {
                    Tensor probe(weights.shape(), std::vector<double>(w.begin(), w.end()));
                    Tensor k = dcls::construct_forward(probe, positions, spec);
                    double s = 0.0;
                    for (std::size_t i = 0; i < k.size(); ++i) s += k[i];
                    return s;
                },
                w_flat, w_grad, 1e-5, /*check_lattice=*/false);
            CHECK(w_err <= 1e-6);
        }
    }
}

TEST_CASE("construction is bitwise identical for any worker count") {
    Rng rng(99);
    KernelSpec spec = make_spec(2, {9, 9}, 6, 8, 2, 1);
    Tensor weights(spec.weight_shape(), 0.0);
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = rng.normal();
    Tensor positions = off_lattice_positions(spec, rng);

    dcls::set_num_workers(1);
    Tensor reference = dcls::construct_forward(weights, positions, spec);
    for (int workers : {2, 3, 4, 8}) {
        dcls::set_num_workers(workers);
        Tensor other = dcls::construct_forward(weights, positions, spec);
        for (std::size_t i = 0; i < reference.size(); ++i) {
            CHECK(other[i] == reference[i]);  // exact, not approximate
        }
    }
    dcls::set_num_workers(1);
}

TEST_CASE("float32 instantiation stays close to the float64 kernel") {
    Rng rng(5);
    KernelSpec spec = make_spec(2, {7, 7}, 4, 2, 2, 1);
    Tensor weights(spec.weight_shape(), 0.0);
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = rng.normal();
    Tensor positions = off_lattice_positions(spec, rng);

    dcls::TensorT<float> wf(weights.shape(), 0.0f);
    for (std::size_t i = 0; i < weights.size(); ++i) wf[i] = static_cast<float>(weights[i]);
    dcls::TensorT<float> pf(positions.shape(), 0.0f);
    for (std::size_t i = 0; i < positions.size(); ++i) pf[i] = static_cast<float>(positions[i]);

    Tensor k64 = dcls::construct_forward(weights, positions, spec);
    dcls::TensorT<float> k32 = dcls::construct_forward(wf, pf, spec);
    for (std::size_t i = 0; i < k64.size(); ++i) {
        CHECK(std::abs(static_cast<double>(k32[i]) - k64[i]) <= 1e-5);
    }
}
