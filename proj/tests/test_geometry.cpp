#include <doctest.h>

#include <stdexcept>

#include "dcls/geometry.hpp"

using dcls::KernelSpec;

namespace {

KernelSpec spec2d(int s0, int s1, int m = 1, int cout = 1, int cin = 1, int groups = 1) {
    KernelSpec spec;
    spec.ndims = 2;
    spec.kernel_count = m;
    spec.dilated_size = {s0, s1};
    spec.channels_out = cout;
    spec.channels_in_per_group = cin;
    spec.groups = groups;
    return spec;
}

}  // namespace

TEST_CASE("kernel spec validation rejects malformed specs") {
    CHECK_NOTHROW(spec2d(3, 3).validate());

    KernelSpec bad = spec2d(3, 3);
    bad.ndims = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad.ndims = 4;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = spec2d(3, 3);
    bad.dilated_size = {3};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = spec2d(0, 3);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = spec2d(3, 3);
    bad.kernel_count = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = spec2d(3, 3, 1, 3, 1, 2);  // 3 output channels cannot split into 2 groups
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("centered clamp bounds for odd and even windows") {
    KernelSpec odd = spec2d(17, 17);
    CHECK(odd.half_extent(0) == 8);
    CHECK(odd.lower_bound(0) == doctest::Approx(-8.0));
    CHECK(odd.upper_bound(0) == doctest::Approx(8.0));

    KernelSpec even = spec2d(4, 4);
    CHECK(even.half_extent(0) == 2);
    CHECK(even.lower_bound(0) == doctest::Approx(-2.0));
    CHECK(even.upper_bound(0) == doctest::Approx(1.0));
}

TEST_CASE("centered and absolute coordinates convert both ways") {
    KernelSpec spec = spec2d(3, 3);
    CHECK(dcls::to_absolute(0.25, spec, 0) == doctest::Approx(1.25));
    CHECK(dcls::to_centered(1.25, spec, 0) == doctest::Approx(0.25));

    KernelSpec wide = spec2d(17, 9);
    for (double p : {-8.0, -3.25, 0.0, 4.5, 8.0}) {
        CHECK(dcls::to_centered(dcls::to_absolute(p, wide, 0), wide, 0) == doctest::Approx(p));
    }
}

TEST_CASE("interpolation stencil splits absolute coordinates") {
    KernelSpec spec = spec2d(3, 3);
    const double abs_coords[2] = {1.25, 1.5};
    const dcls::InterpolationStencil st = dcls::stencil({abs_coords, 2}, spec);
    CHECK(st.floor_index[0] == 1);
    CHECK(st.floor_index[1] == 1);
    CHECK(st.frac[0] == doctest::Approx(0.25));
    CHECK(st.frac[1] == doctest::Approx(0.5));

    const double outside[2] = {3.5, 1.0};
    CHECK_THROWS_AS(dcls::stencil({outside, 2}, spec), std::domain_error);
    const double negative[2] = {-0.1, 1.0};
    CHECK_THROWS_AS(dcls::stencil({negative, 2}, spec), std::domain_error);
}

TEST_CASE("tensor shapes derived from the spec") {
    KernelSpec spec = spec2d(9, 7, 5, 4, 2, 2);
    CHECK(spec.weight_shape() == std::vector<std::size_t>{4, 2, 5});
    CHECK(spec.position_shape() == std::vector<std::size_t>{2, 4, 2, 5});
    CHECK(spec.kernel_shape() == std::vector<std::size_t>{4, 2, 9, 7});
    CHECK(spec.channel_slices() == 8);
    CHECK(spec.cells_per_slice() == 63);
}
