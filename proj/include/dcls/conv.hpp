#pragma once

#include <utility>
#include <vector>

#include "dcls/construct.hpp"
#include "dcls/geometry.hpp"
#include "dcls/tensor.hpp"

namespace dcls {

/// Stride/padding/group geometry of one convolution. Empty per-axis vectors
/// mean stride 1, padding 0, dilation 1 on every axis. Dilation applies to
/// the fixed-grid baseline path only.
struct ConvConfig {
    std::vector<int> stride;
    std::vector<int> padding;
    std::vector<int> dilation;
    int groups = 1;
};

/// Cross-correlation of input [batch, cin, d1..dn] with a dense kernel
/// [cout, cin/groups, s1..sn]. Zero padding; no kernel flip. Reference
/// semantics are pinned by a brute-force oracle in the test suite.
template <typename T>
TensorT<T> conv_direct(const TensorT<T>& input, const TensorT<T>& kernel, const ConvConfig& cfg);

/// Fixed-grid dilated convolution: the small kernel's taps sit on a regular
/// grid with cfg.dilation spacing. Equivalent to conv_direct on the
/// zero-inflated kernel of extent d*(s-1)+1.
template <typename T>
TensorT<T> dilated_conv_baseline(const TensorT<T>& input, const TensorT<T>& weights,
                                 const ConvConfig& cfg);

/// Adjoint of conv_direct with respect to its input: maps an output-shaped
/// gradient back to an input-shaped one.
template <typename T>
TensorT<T> conv_input_adjoint(const TensorT<T>& upstream, const TensorT<T>& kernel,
                              const ConvConfig& cfg, const std::vector<std::size_t>& input_shape);

/// Adjoint of conv_direct with respect to its kernel.
template <typename T>
TensorT<T> conv_kernel_adjoint(const TensorT<T>& upstream, const TensorT<T>& input,
                               const ConvConfig& cfg, const std::vector<std::size_t>& kernel_shape);

/// Everything the backward pass needs from a forward call.
struct DclsConvContext {
    Tensor input;
    Tensor weights;
    Tensor positions;
    Tensor kernel;
    KernelSpec spec;
    ConvConfig cfg;
    std::vector<std::size_t> output_shape;
    bool valid = false;
};

struct DclsConvGrads {
    Tensor d_input;
    GradBundle params;
};

/// Kernel construction followed by conv_direct. The returned context feeds
/// dcls_conv_backward.
std::pair<Tensor, DclsConvContext> dcls_conv_forward(const Tensor& input, const Tensor& weights,
                                                     const Tensor& positions, const KernelSpec& spec,
                                                     const ConvConfig& cfg);

/// Pulls the upstream gradient through the convolution adjoints and the
/// kernel construction. Throws if the context is invalid or the upstream
/// shape does not match the forward output.
DclsConvGrads dcls_conv_backward(const DclsConvContext& ctx, const Tensor& upstream);

extern template TensorT<float> conv_direct<float>(const TensorT<float>&, const TensorT<float>&,
                                                  const ConvConfig&);
extern template TensorT<double> conv_direct<double>(const TensorT<double>&, const TensorT<double>&,
                                                    const ConvConfig&);
extern template TensorT<float> dilated_conv_baseline<float>(const TensorT<float>&,
                                                            const TensorT<float>&,
                                                            const ConvConfig&);
extern template TensorT<double> dilated_conv_baseline<double>(const TensorT<double>&,
                                                              const TensorT<double>&,
                                                              const ConvConfig&);
extern template TensorT<float> conv_input_adjoint<float>(const TensorT<float>&,
                                                         const TensorT<float>&, const ConvConfig&,
                                                         const std::vector<std::size_t>&);
extern template TensorT<double> conv_input_adjoint<double>(const TensorT<double>&,
                                                           const TensorT<double>&,
                                                           const ConvConfig&,
                                                           const std::vector<std::size_t>&);
extern template TensorT<float> conv_kernel_adjoint<float>(const TensorT<float>&,
                                                          const TensorT<float>&, const ConvConfig&,
                                                          const std::vector<std::size_t>&);
extern template TensorT<double> conv_kernel_adjoint<double>(const TensorT<double>&,
                                                            const TensorT<double>&,
                                                            const ConvConfig&,
                                                            const std::vector<std::size_t>&);

}  // namespace dcls
