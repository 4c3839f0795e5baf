#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "dcls/tensor.hpp"

namespace dcls {

inline constexpr int kMaxDims = 3;

/// Geometry of one learnable-spacing kernel: how many movable elements it
/// has, the window they may move in, and the channel layout.
struct KernelSpec {
    int ndims = 2;
    int kernel_count = 1;            ///< elements per (out, in) channel pair
    std::vector<int> dilated_size;   ///< window extent per axis, ndims entries
    int channels_out = 1;
    int channels_in_per_group = 1;
    int groups = 1;

    /// Throws std::invalid_argument on any violated constraint.
    void validate() const;

    /// Shift applied when mapping centered coordinates to grid cells.
    int half_extent(int axis) const { return dilated_size[static_cast<std::size_t>(axis)] / 2; }

    /// Centered-coordinate clamp bounds along one axis.
    double lower_bound(int axis) const { return -half_extent(axis); }
    double upper_bound(int axis) const {
        return dilated_size[static_cast<std::size_t>(axis)] - 1 - half_extent(axis);
    }

    std::vector<std::size_t> weight_shape() const;    ///< [cout, cin_per_group, m]
    std::vector<std::size_t> position_shape() const;  ///< [ndims, cout, cin_per_group, m]
    std::vector<std::size_t> kernel_shape() const;    ///< [cout, cin_per_group, s1, ..., sn]

    std::size_t channel_slices() const {
        return static_cast<std::size_t>(channels_out) *
               static_cast<std::size_t>(channels_in_per_group);
    }
    std::size_t cells_per_slice() const;
};

/// Centered coordinate (0 at the window center) to absolute grid coordinate
/// on the 0-based window of extent s_axis.
double to_absolute(double p, const KernelSpec& spec, int axis);

/// Inverse shift of to_absolute.
double to_centered(double p_abs, const KernelSpec& spec, int axis);

/// Cell indices and sub-cell offsets of one element. frac[d] is in [0, 1),
/// and floor_index[d] + frac[d] reproduces the absolute coordinate exactly.
struct InterpolationStencil {
    int ndims = 0;
    std::array<int, kMaxDims> floor_index{};
    std::array<double, kMaxDims> frac{};
};

/// Decomposes an absolute position into floor indices and fractional parts.
/// Each coordinate must lie in [0, s_d - 1]; out-of-range coordinates raise
/// std::domain_error naming the axis. The floor function is treated as having
/// zero derivative everywhere; no gradient path differentiates through it.
InterpolationStencil stencil(std::span<const double> p_abs, const KernelSpec& spec);

}  // namespace dcls
