#pragma once

#include "dcls/geometry.hpp"
#include "dcls/tensor.hpp"

namespace dcls {

template <typename T>
struct GradBundleT {
    TensorT<T> d_weights;    ///< shape of the weight tensor
    TensorT<T> d_positions;  ///< shape of the position tensor
};

using GradBundle = GradBundleT<double>;

/// Builds the dense kernel from weights [cout, cin_pg, m] and centered
/// positions [ndims, cout, cin_pg, m]. Each element spreads its weight over
/// the 2^ndims cells adjacent to its absolute position with multilinear
/// coefficients; coincident contributions accumulate. Cell writes that would
/// land at index s_d carry an exactly-zero coefficient and are skipped.
/// Positions must already be clamped into bounds; out-of-bounds positions
/// raise std::domain_error telling the caller to clamp first.
template <typename T>
TensorT<T> construct_forward(const TensorT<T>& weights, const TensorT<T>& positions,
                             const KernelSpec& spec);

/// Gradients of a scalar loss with respect to weights and positions, given
/// the loss gradient with respect to the constructed kernel. The weight
/// gradient gathers the 2^ndims touched upstream cells with the interpolation
/// coefficients; the position gradient along axis d is the weight times the
/// signed stencil difference of the upstream cells along that axis. Reads at
/// cell index s_d mirror the forward guard and contribute zero.
template <typename T>
GradBundleT<T> construct_backward(const TensorT<T>& upstream, const TensorT<T>& weights,
                                  const TensorT<T>& positions, const KernelSpec& spec);

extern template TensorT<float> construct_forward<float>(const TensorT<float>&,
                                                        const TensorT<float>&, const KernelSpec&);
extern template TensorT<double> construct_forward<double>(const TensorT<double>&,
                                                          const TensorT<double>&,
                                                          const KernelSpec&);
extern template GradBundleT<float> construct_backward<float>(const TensorT<float>&,
                                                             const TensorT<float>&,
                                                             const TensorT<float>&,
                                                             const KernelSpec&);
extern template GradBundleT<double> construct_backward<double>(const TensorT<double>&,
                                                               const TensorT<double>&,
                                                               const TensorT<double>&,
                                                               const KernelSpec&);

}  // namespace dcls
