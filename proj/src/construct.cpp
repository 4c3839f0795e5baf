#include "dcls/construct.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "dcls/parallel.hpp"

namespace dcls {

namespace {

template <typename T>
void check_shapes(const TensorT<T>& weights, const TensorT<T>& positions, const KernelSpec& spec) {
    spec.validate();
    if (weights.shape() != spec.weight_shape()) {
        throw std::invalid_argument("construct: weight shape " + shape_string(weights.shape()) +
                                    " does not match spec " + shape_string(spec.weight_shape()));
    }
    if (positions.shape() != spec.position_shape()) {
        throw std::invalid_argument("construct: position shape " +
                                    shape_string(positions.shape()) + " does not match spec " +
                                    shape_string(spec.position_shape()));
    }
}

/// Verifies every centered position is inside the clamp box. Runs before the
/// parallel region so failures surface as one exception.
template <typename T>
void check_positions_in_bounds(const TensorT<T>& positions, const KernelSpec& spec) {
    const std::size_t per_axis = positions.size() / static_cast<std::size_t>(spec.ndims);
    for (int d = 0; d < spec.ndims; ++d) {
        const T lo = static_cast<T>(spec.lower_bound(d));
        const T hi = static_cast<T>(spec.upper_bound(d));
        const T* axis_data = positions.data() + static_cast<std::size_t>(d) * per_axis;
        for (std::size_t i = 0; i < per_axis; ++i) {
            const T p = axis_data[i];
            if (!(p >= lo && p <= hi)) {
                throw std::domain_error(
                    "construct: position " + std::to_string(static_cast<double>(p)) +
                    " on axis " + std::to_string(d) + " outside [" + std::to_string(static_cast<double>(lo)) +
                    ", " + std::to_string(static_cast<double>(hi)) + "]; clamp positions first");
            }
        }
    }
}

/// Per-element cell decomposition in absolute window coordinates.
template <typename T>
struct Cell {
    int floor_index[kMaxDims];
    T frac[kMaxDims];
};

template <typename T>
Cell<T> element_cell(const TensorT<T>& positions, const KernelSpec& spec, std::size_t slice,
                     std::size_t k) {
    const std::size_t per_axis = positions.size() / static_cast<std::size_t>(spec.ndims);
    const std::size_t m = static_cast<std::size_t>(spec.kernel_count);
    Cell<T> cell;
    for (int d = 0; d < spec.ndims; ++d) {
        const T p = positions.data()[static_cast<std::size_t>(d) * per_axis + slice * m + k] +
                    static_cast<T>(spec.half_extent(d));
        const T fl = std::floor(p);
        cell.floor_index[d] = static_cast<int>(fl);
        cell.frac[d] = p - fl;
    }
    return cell;
}

}  // namespace

template <typename T>
TensorT<T> construct_forward(const TensorT<T>& weights, const TensorT<T>& positions,
                             const KernelSpec& spec) {
    check_shapes(weights, positions, spec);
    check_positions_in_bounds(positions, spec);

    TensorT<T> kernel(spec.kernel_shape(), T{0});
    const std::size_t m = static_cast<std::size_t>(spec.kernel_count);
    const std::size_t cells = spec.cells_per_slice();
    const int nd = spec.ndims;
    const int corners = 1 << nd;

    // One worker owns whole (out, in) slices, so no two workers ever touch
    // the same output cell and results do not depend on the worker count.
    parallel_for(spec.channel_slices(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t slice = begin; slice < end; ++slice) {
            T* out = kernel.data() + slice * cells;
            for (std::size_t k = 0; k < m; ++k) {
                const Cell<T> cell = element_cell(positions, spec, slice, k);
                const T w = weights.data()[slice * m + k];
                for (int corner = 0; corner < corners; ++corner) {
                    T coeff = w;
                    std::size_t off = 0;
                    bool in_grid = true;
                    for (int d = 0; d < nd; ++d) {
                        const int s = spec.dilated_size[static_cast<std::size_t>(d)];
                        int idx = cell.floor_index[d];
                        if (corner >> d & 1) {
                            ++idx;
                            coeff *= cell.frac[d];
                        } else {
                            coeff *= T(1) - cell.frac[d];
                        }
                        if (idx >= s) {
                            // only reachable with frac == 0, where coeff is exactly 0
                            in_grid = false;
                            break;
                        }
                        off = off * static_cast<std::size_t>(s) + static_cast<std::size_t>(idx);
                    }
                    if (in_grid) out[off] += coeff;
                }
            }
        }
    });
    return kernel;
}

template <typename T>
GradBundleT<T> construct_backward(const TensorT<T>& upstream, const TensorT<T>& weights,
                                  const TensorT<T>& positions, const KernelSpec& spec) {
    check_shapes(weights, positions, spec);
    check_positions_in_bounds(positions, spec);
    if (upstream.shape() != spec.kernel_shape()) {
        throw std::invalid_argument("construct: upstream shape " + shape_string(upstream.shape()) +
                                    " does not match kernel " + shape_string(spec.kernel_shape()));
    }

    GradBundleT<T> grads{TensorT<T>(spec.weight_shape(), T{0}),
                         TensorT<T>(spec.position_shape(), T{0})};
    const std::size_t m = static_cast<std::size_t>(spec.kernel_count);
    const std::size_t cells = spec.cells_per_slice();
    const std::size_t per_axis = grads.d_positions.size() / static_cast<std::size_t>(spec.ndims);
    const int nd = spec.ndims;
    const int corners = 1 << nd;

    parallel_for(spec.channel_slices(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t slice = begin; slice < end; ++slice) {
            const T* g = upstream.data() + slice * cells;
            for (std::size_t k = 0; k < m; ++k) {
                const Cell<T> cell = element_cell(positions, spec, slice, k);
                const T w = weights.data()[slice * m + k];
                T dw = T{0};
                T dp[kMaxDims] = {};
                for (int corner = 0; corner < corners; ++corner) {
                    std::size_t off = 0;
                    bool in_grid = true;
                    for (int d = 0; d < nd; ++d) {
                        const int s = spec.dilated_size[static_cast<std::size_t>(d)];
                        const int idx = cell.floor_index[d] + (corner >> d & 1);
                        if (idx >= s) {
                            in_grid = false;
                            break;
                        }
                        off = off * static_cast<std::size_t>(s) + static_cast<std::size_t>(idx);
                    }
                    if (!in_grid) continue;  // cell reads past the window contribute zero
                    const T gval = g[off];

                    T coeff = T(1);
                    for (int d = 0; d < nd; ++d) {
                        coeff *= (corner >> d & 1) ? cell.frac[d] : T(1) - cell.frac[d];
                    }
                    dw += coeff * gval;

                    // signed product of the other axes' coefficients
                    for (int d = 0; d < nd; ++d) {
                        T partial = (corner >> d & 1) ? T(1) : T(-1);
                        for (int e = 0; e < nd; ++e) {
                            if (e == d) continue;
                            partial *= (corner >> e & 1) ? cell.frac[e] : T(1) - cell.frac[e];
                        }
                        dp[d] += partial * gval;
                    }
                }
                grads.d_weights.data()[slice * m + k] = dw;
                for (int d = 0; d < nd; ++d) {
                    grads.d_positions.data()[static_cast<std::size_t>(d) * per_axis + slice * m + k] =
                        w * dp[d];
                }
            }
        }
    });
    return grads;
}

template TensorT<float> construct_forward<float>(const TensorT<float>&, const TensorT<float>&,
                                                 const KernelSpec&);
template TensorT<double> construct_forward<double>(const TensorT<double>&, const TensorT<double>&,
                                                   const KernelSpec&);
template GradBundleT<float> construct_backward<float>(const TensorT<float>&, const TensorT<float>&,
                                                      const TensorT<float>&, const KernelSpec&);
template GradBundleT<double> construct_backward<double>(const TensorT<double>&,
                                                        const TensorT<double>&,
                                                        const TensorT<double>&, const KernelSpec&);

}  // namespace dcls
