#include "dcls/conv.hpp"

#include <array>
#include <sstream>
#include <stdexcept>

#include "dcls/parallel.hpp"

namespace dcls {
namespace {

struct AxisGeom {
    int in = 0;
    int out = 0;
    int size = 0;
    int stride = 1;
    int pad = 0;
    int dil = 1;
};

int axis_param(const std::vector<int>& v, std::size_t axis, int fallback, const char* name,
               std::size_t ndims) {
    if (v.empty()) return fallback;
    if (v.size() != ndims) {
        std::ostringstream msg;
        msg << name << " has " << v.size() << " entries for a " << ndims << "-d convolution";
        throw std::invalid_argument(msg.str());
    }
    return v[axis];
}

/// Fully resolved geometry of one convolution call.
struct ConvGeom {
    std::size_t ndims = 0;
    std::size_t batch = 0;
    std::size_t cin = 0;
    std::size_t cout = 0;
    std::size_t cpg = 0;   // input channels per group
    std::size_t ocpg = 0;  // output channels per group
    std::size_t groups = 1;
    std::array<AxisGeom, kMaxDims> axis;
    std::vector<std::size_t> output_shape;
};

ConvGeom resolve(const std::vector<std::size_t>& in_shape, const std::vector<std::size_t>& k_shape,
                 const ConvConfig& cfg) {
    if (k_shape.size() < 3 || k_shape.size() > 2 + kMaxDims) {
        throw std::invalid_argument("kernel must have shape [cout, cin_per_group, s1..sn] with 1 to " +
                                    std::to_string(kMaxDims) + " spatial axes, got " +
                                    shape_string(k_shape));
    }
    ConvGeom g;
    g.ndims = k_shape.size() - 2;
    if (in_shape.size() != g.ndims + 2) {
        throw std::invalid_argument("input shape " + shape_string(in_shape) +
                                    " does not match a " + std::to_string(g.ndims) +
                                    "-d kernel; expected [batch, channels, d1..dn]");
    }
    if (cfg.groups < 1) throw std::invalid_argument("groups must be >= 1");
    g.groups = static_cast<std::size_t>(cfg.groups);
    g.batch = in_shape[0];
    g.cin = in_shape[1];
    g.cout = k_shape[0];
    g.cpg = k_shape[1];
    if (g.cin != g.cpg * g.groups) {
        std::ostringstream msg;
        msg << "input has " << g.cin << " channels but the kernel expects "
            << g.cpg * g.groups << " (" << g.cpg << " per group x " << g.groups << " groups)";
        throw std::invalid_argument(msg.str());
    }
    if (g.cout % g.groups != 0) {
        throw std::invalid_argument("output channels (" + std::to_string(g.cout) +
                                    ") must divide evenly into " + std::to_string(g.groups) +
                                    " groups");
    }
    g.ocpg = g.cout / g.groups;

    g.output_shape = {g.batch, g.cout};
    for (std::size_t d = 0; d < g.ndims; ++d) {
        AxisGeom& ax = g.axis[d];
        ax.in = static_cast<int>(in_shape[d + 2]);
        ax.size = static_cast<int>(k_shape[d + 2]);
        ax.stride = axis_param(cfg.stride, d, 1, "stride", g.ndims);
        ax.pad = axis_param(cfg.padding, d, 0, "padding", g.ndims);
        ax.dil = axis_param(cfg.dilation, d, 1, "dilation", g.ndims);
        if (ax.stride < 1) throw std::invalid_argument("stride must be >= 1 on every axis");
        if (ax.pad < 0) throw std::invalid_argument("padding must be >= 0 on every axis");
        if (ax.dil < 1) throw std::invalid_argument("dilation must be >= 1 on every axis");
        const int span = (ax.size - 1) * ax.dil + 1;
        ax.out = (ax.in + 2 * ax.pad - span) / ax.stride + 1;
        if (ax.in + 2 * ax.pad < span || ax.out < 1) {
            std::ostringstream msg;
            msg << "axis " << d << ": kernel span " << span << " exceeds padded input extent "
                << ax.in + 2 * ax.pad;
            throw std::invalid_argument(msg.str());
        }
        g.output_shape.push_back(static_cast<std::size_t>(ax.out));
    }
    return g;
}

void require_unit_dilation(const ConvConfig& cfg) {
    for (int d : cfg.dilation) {
        if (d != 1) {
            throw std::invalid_argument(
                "conv_direct takes a dense kernel and no dilation; "
                "use dilated_conv_baseline for fixed-grid dilated convolutions");
        }
    }
}

/// Dense forward pass. Each (batch, out-channel) pair owns a disjoint slab of
/// the output, so chunking over those pairs is bitwise deterministic for any
/// worker count.
template <typename T>
TensorT<T> run_forward(const TensorT<T>& input, const TensorT<T>& kernel, const ConvGeom& g) {
    TensorT<T> out(g.output_shape, T(0));
    const T* in_ptr = input.data();
    const T* k_ptr = kernel.data();
    T* out_ptr = out.data();
    const auto& ax = g.axis;

    parallel_for(g.batch * g.cout, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t item = lo; item < hi; ++item) {
            const std::size_t b = item / g.cout;
            const std::size_t co = item % g.cout;
            const std::size_t ci0 = (co / g.ocpg) * g.cpg;
            switch (g.ndims) {
                case 1: {
                    const int w = ax[0].in, ow = ax[0].out, kw = ax[0].size;
                    T* o = out_ptr + item * static_cast<std::size_t>(ow);
                    for (int ox = 0; ox < ow; ++ox) {
                        T acc = 0;
                        for (std::size_t cil = 0; cil < g.cpg; ++cil) {
                            const T* x = in_ptr + (b * g.cin + ci0 + cil) * static_cast<std::size_t>(w);
                            const T* k = k_ptr + (co * g.cpg + cil) * static_cast<std::size_t>(kw);
                            const int base = ox * ax[0].stride - ax[0].pad;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = base + kx;
                                if (ix < 0 || ix >= w) continue;
                                acc += k[kx] * x[ix];
                            }
                        }
                        o[ox] = acc;
                    }
                    break;
                }
                case 2: {
                    const int h = ax[0].in, w = ax[1].in;
                    const int oh = ax[0].out, ow = ax[1].out;
                    const int kh = ax[0].size, kw = ax[1].size;
                    T* o = out_ptr + item * static_cast<std::size_t>(oh) * ow;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int ybase = oy * ax[0].stride - ax[0].pad;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int xbase = ox * ax[1].stride - ax[1].pad;
                            T acc = 0;
                            for (std::size_t cil = 0; cil < g.cpg; ++cil) {
                                const T* x = in_ptr +
                                             (b * g.cin + ci0 + cil) * static_cast<std::size_t>(h) * w;
                                const T* k = k_ptr +
                                             (co * g.cpg + cil) * static_cast<std::size_t>(kh) * kw;
                                for (int ky = 0; ky < kh; ++ky) {
                                    const int iy = ybase + ky;
                                    if (iy < 0 || iy >= h) continue;
                                    const T* xrow = x + static_cast<std::size_t>(iy) * w;
                                    const T* krow = k + static_cast<std::size_t>(ky) * kw;
                                    for (int kx = 0; kx < kw; ++kx) {
                                        const int ix = xbase + kx;
                                        if (ix < 0 || ix >= w) continue;
                                        acc += krow[kx] * xrow[ix];
                                    }
                                }
                            }
                            o[static_cast<std::size_t>(oy) * ow + ox] = acc;
                        }
                    }
                    break;
                }
                default: {
                    const int dd = ax[0].in, h = ax[1].in, w = ax[2].in;
                    const int od = ax[0].out, oh = ax[1].out, ow = ax[2].out;
                    const int kd = ax[0].size, kh = ax[1].size, kw = ax[2].size;
                    T* o = out_ptr + item * static_cast<std::size_t>(od) * oh * ow;
                    for (int oz = 0; oz < od; ++oz) {
                        const int zbase = oz * ax[0].stride - ax[0].pad;
                        for (int oy = 0; oy < oh; ++oy) {
                            const int ybase = oy * ax[1].stride - ax[1].pad;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int xbase = ox * ax[2].stride - ax[2].pad;
                                T acc = 0;
                                for (std::size_t cil = 0; cil < g.cpg; ++cil) {
                                    const T* x = in_ptr + (b * g.cin + ci0 + cil) *
                                                              static_cast<std::size_t>(dd) * h * w;
                                    const T* k = k_ptr + (co * g.cpg + cil) *
                                                             static_cast<std::size_t>(kd) * kh * kw;
                                    for (int kz = 0; kz < kd; ++kz) {
                                        const int iz = zbase + kz;
                                        if (iz < 0 || iz >= dd) continue;
                                        for (int ky = 0; ky < kh; ++ky) {
                                            const int iy = ybase + ky;
                                            if (iy < 0 || iy >= h) continue;
                                            const T* xrow =
                                                x + (static_cast<std::size_t>(iz) * h + iy) * w;
                                            const T* krow =
                                                k + (static_cast<std::size_t>(kz) * kh + ky) * kw;
                                            for (int kx = 0; kx < kw; ++kx) {
                                                const int ix = xbase + kx;
                                                if (ix < 0 || ix >= w) continue;
                                                acc += krow[kx] * xrow[ix];
                                            }
                                        }
                                    }
                                }
                                o[(static_cast<std::size_t>(oz) * oh + oy) * ow + ox] = acc;
                            }
                        }
                    }
                    break;
                }
            }
        }
    });
    return out;
}

}  // namespace

template <typename T>
TensorT<T> conv_direct(const TensorT<T>& input, const TensorT<T>& kernel, const ConvConfig& cfg) {
    require_unit_dilation(cfg);
    return run_forward(input, kernel, resolve(input.shape(), kernel.shape(), cfg));
}

/// Deliberately plain odometer-style loops, kept separate from the dense
/// engine so the two can cross-check each other.
template <typename T>
TensorT<T> dilated_conv_baseline(const TensorT<T>& input, const TensorT<T>& weights,
                                 const ConvConfig& cfg) {
    const ConvGeom g = resolve(input.shape(), weights.shape(), cfg);
    TensorT<T> out(g.output_shape, T(0));

    parallel_for(g.batch * g.cout, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t item = lo; item < hi; ++item) {
            const std::size_t b = item / g.cout;
            const std::size_t co = item % g.cout;
            const std::size_t ci0 = (co / g.ocpg) * g.cpg;

            std::size_t out_cells = 1;
            for (std::size_t d = 0; d < g.ndims; ++d) out_cells *= g.axis[d].out;
            std::size_t tap_cells = 1;
            for (std::size_t d = 0; d < g.ndims; ++d) tap_cells *= g.axis[d].size;

            for (std::size_t cell = 0; cell < out_cells; ++cell) {
                // decode the flat output cell into per-axis coordinates
                std::array<int, kMaxDims> oc{};
                std::size_t rem = cell;
                for (std::size_t d = g.ndims; d-- > 0;) {
                    oc[d] = static_cast<int>(rem % g.axis[d].out);
                    rem /= g.axis[d].out;
                }
                T acc = 0;
                for (std::size_t cil = 0; cil < g.cpg; ++cil) {
                    for (std::size_t tap = 0; tap < tap_cells; ++tap) {
                        std::array<int, kMaxDims> kc{};
                        std::size_t trem = tap;
                        for (std::size_t d = g.ndims; d-- > 0;) {
                            kc[d] = static_cast<int>(trem % g.axis[d].size);
                            trem /= g.axis[d].size;
                        }
                        // map tap kc at output oc onto the input lattice
                        std::size_t in_off = b * g.cin + ci0 + cil;
                        bool inside = true;
                        for (std::size_t d = 0; d < g.ndims; ++d) {
                            const AxisGeom& a = g.axis[d];
                            const int ix = oc[d] * a.stride - a.pad + kc[d] * a.dil;
                            if (ix < 0 || ix >= a.in) {
                                inside = false;
                                break;
                            }
                            in_off = in_off * static_cast<std::size_t>(a.in) +
                                     static_cast<std::size_t>(ix);
                        }
                        if (!inside) continue;
                        acc += weights[(co * g.cpg + cil) * tap_cells + tap] * input[in_off];
                    }
                }
                out[item * out_cells + cell] = acc;
            }
        }
    });
    return out;
}

/// Gather form of the input adjoint: every input cell collects the upstream
/// cells whose receptive field covers it. Each (batch, in-channel) pair owns
/// its slab of d_input, so the chunking is deterministic.
template <typename T>
TensorT<T> conv_input_adjoint(const TensorT<T>& upstream, const TensorT<T>& kernel,
                              const ConvConfig& cfg, const std::vector<std::size_t>& input_shape) {
    require_unit_dilation(cfg);
    const ConvGeom g = resolve(input_shape, kernel.shape(), cfg);
    if (upstream.shape() != g.output_shape) {
        throw std::invalid_argument("upstream gradient shape " + shape_string(upstream.shape()) +
                                    " does not match conv output " + shape_string(g.output_shape));
    }
    TensorT<T> d_input(input_shape, T(0));

    std::size_t in_cells = 1;
    for (std::size_t d = 0; d < g.ndims; ++d) in_cells *= g.axis[d].in;
    std::size_t out_cells = 1;
    for (std::size_t d = 0; d < g.ndims; ++d) out_cells *= g.axis[d].out;
    std::size_t tap_cells = 1;
    for (std::size_t d = 0; d < g.ndims; ++d) tap_cells *= g.axis[d].size;

    parallel_for(g.batch * g.cin, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t item = lo; item < hi; ++item) {
            const std::size_t b = item / g.cin;
            const std::size_t ci = item % g.cin;
            const std::size_t grp = ci / g.cpg;
            const std::size_t cil = ci % g.cpg;
            T* dst = d_input.data() + item * in_cells;

            for (std::size_t cell = 0; cell < in_cells; ++cell) {
                std::array<int, kMaxDims> ic{};
                std::size_t rem = cell;
                for (std::size_t d = g.ndims; d-- > 0;) {
                    ic[d] = static_cast<int>(rem % g.axis[d].in);
                    rem /= g.axis[d].in;
                }
                T acc = 0;
                for (std::size_t tap = 0; tap < tap_cells; ++tap) {
                    std::array<int, kMaxDims> kc{};
                    std::size_t trem = tap;
                    for (std::size_t d = g.ndims; d-- > 0;) {
                        kc[d] = static_cast<int>(trem % g.axis[d].size);
                        trem /= g.axis[d].size;
                    }
                    // the output cell that reads input ic through tap kc, if any
                    std::size_t out_cell = 0;
                    bool hit = true;
                    for (std::size_t d = 0; d < g.ndims; ++d) {
                        const AxisGeom& a = g.axis[d];
                        const int t = ic[d] + a.pad - kc[d];
                        if (t < 0 || t % a.stride != 0) {
                            hit = false;
                            break;
                        }
                        const int oy = t / a.stride;
                        if (oy >= a.out) {
                            hit = false;
                            break;
                        }
                        out_cell = out_cell * static_cast<std::size_t>(a.out) +
                                   static_cast<std::size_t>(oy);
                    }
                    if (!hit) continue;
                    for (std::size_t col = 0; col < g.ocpg; ++col) {
                        const std::size_t co = grp * g.ocpg + col;
                        acc += kernel[(co * g.cpg + cil) * tap_cells + tap] *
                               upstream[(b * g.cout + co) * out_cells + out_cell];
                    }
                }
                dst[cell] = acc;
            }
        }
    });
    return d_input;
}

/// Kernel adjoint. Each out-channel owns its slab of the gradient, and its
/// accumulation order is fixed by the loops below regardless of worker count.
template <typename T>
TensorT<T> conv_kernel_adjoint(const TensorT<T>& upstream, const TensorT<T>& input,
                               const ConvConfig& cfg, const std::vector<std::size_t>& kernel_shape) {
    require_unit_dilation(cfg);
    const ConvGeom g = resolve(input.shape(), kernel_shape, cfg);
    if (upstream.shape() != g.output_shape) {
        throw std::invalid_argument("upstream gradient shape " + shape_string(upstream.shape()) +
                                    " does not match conv output " + shape_string(g.output_shape));
    }
    TensorT<T> d_kernel(kernel_shape, T(0));

    std::size_t in_cells = 1;
    for (std::size_t d = 0; d < g.ndims; ++d) in_cells *= g.axis[d].in;
    std::size_t out_cells = 1;
    for (std::size_t d = 0; d < g.ndims; ++d) out_cells *= g.axis[d].out;
    std::size_t tap_cells = 1;
    for (std::size_t d = 0; d < g.ndims; ++d) tap_cells *= g.axis[d].size;

    parallel_for(g.cout, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t co = lo; co < hi; ++co) {
            const std::size_t ci0 = (co / g.ocpg) * g.cpg;
            T* dst = d_kernel.data() + co * g.cpg * tap_cells;

            for (std::size_t b = 0; b < g.batch; ++b) {
                const T* up = upstream.data() + (b * g.cout + co) * out_cells;
                for (std::size_t cell = 0; cell < out_cells; ++cell) {
                    const T u = up[cell];
                    if (u == T(0)) continue;
                    std::array<int, kMaxDims> oc{};
                    std::size_t rem = cell;
                    for (std::size_t d = g.ndims; d-- > 0;) {
                        oc[d] = static_cast<int>(rem % g.axis[d].out);
                        rem /= g.axis[d].out;
                    }
                    for (std::size_t tap = 0; tap < tap_cells; ++tap) {
                        std::array<int, kMaxDims> kc{};
                        std::size_t trem = tap;
                        for (std::size_t d = g.ndims; d-- > 0;) {
                            kc[d] = static_cast<int>(trem % g.axis[d].size);
                            trem /= g.axis[d].size;
                        }
                        std::size_t in_cell = 0;
                        bool inside = true;
                        for (std::size_t d = 0; d < g.ndims; ++d) {
                            const AxisGeom& a = g.axis[d];
                            const int ix = oc[d] * a.stride - a.pad + kc[d];
                            if (ix < 0 || ix >= a.in) {
                                inside = false;
                                break;
                            }
                            in_cell = in_cell * static_cast<std::size_t>(a.in) +
                                      static_cast<std::size_t>(ix);
                        }
                        if (!inside) continue;
                        for (std::size_t cil = 0; cil < g.cpg; ++cil) {
                            dst[cil * tap_cells + tap] +=
                                u * input[(b * g.cin + ci0 + cil) * in_cells + in_cell];
                        }
                    }
                }
            }
        }
    });
    return d_kernel;
}

std::pair<Tensor, DclsConvContext> dcls_conv_forward(const Tensor& input, const Tensor& weights,
                                                     const Tensor& positions, const KernelSpec& spec,
                                                     const ConvConfig& cfg) {
    if (cfg.groups != spec.groups) {
        throw std::invalid_argument("conv config declares " + std::to_string(cfg.groups) +
                                    " groups but the kernel spec has " +
                                    std::to_string(spec.groups));
    }
    Tensor kernel = construct_forward(weights, positions, spec);
    Tensor output = conv_direct(input, kernel, cfg);

    DclsConvContext ctx;
    ctx.input = input;
    ctx.weights = weights;
    ctx.positions = positions;
    ctx.kernel = std::move(kernel);
    ctx.spec = spec;
    ctx.cfg = cfg;
    ctx.output_shape = output.shape();
    ctx.valid = true;
    return {std::move(output), std::move(ctx)};
}

DclsConvGrads dcls_conv_backward(const DclsConvContext& ctx, const Tensor& upstream) {
    if (!ctx.valid) {
        throw std::logic_error("dcls_conv_backward needs the context of a previous forward call");
    }
    if (upstream.shape() != ctx.output_shape) {
        throw std::invalid_argument("upstream gradient shape " + shape_string(upstream.shape()) +
                                    " does not match the forward output " +
                                    shape_string(ctx.output_shape));
    }
    Tensor g_kernel = conv_kernel_adjoint(upstream, ctx.input, ctx.cfg, ctx.spec.kernel_shape());
    DclsConvGrads grads;
    grads.params = construct_backward(g_kernel, ctx.weights, ctx.positions, ctx.spec);
    grads.d_input = conv_input_adjoint(upstream, ctx.kernel, ctx.cfg, ctx.input.shape());
    return grads;
}

template TensorT<float> conv_direct<float>(const TensorT<float>&, const TensorT<float>&,
                                           const ConvConfig&);
template TensorT<double> conv_direct<double>(const TensorT<double>&, const TensorT<double>&,
                                             const ConvConfig&);
template TensorT<float> dilated_conv_baseline<float>(const TensorT<float>&, const TensorT<float>&,
                                                     const ConvConfig&);
template TensorT<double> dilated_conv_baseline<double>(const TensorT<double>&,
                                                       const TensorT<double>&, const ConvConfig&);
template TensorT<float> conv_input_adjoint<float>(const TensorT<float>&, const TensorT<float>&,
                                                  const ConvConfig&,
                                                  const std::vector<std::size_t>&);
template TensorT<double> conv_input_adjoint<double>(const TensorT<double>&, const TensorT<double>&,
                                                    const ConvConfig&,
                                                    const std::vector<std::size_t>&);
template TensorT<float> conv_kernel_adjoint<float>(const TensorT<float>&, const TensorT<float>&,
                                                   const ConvConfig&,
                                                   const std::vector<std::size_t>&);
template TensorT<double> conv_kernel_adjoint<double>(const TensorT<double>&, const TensorT<double>&,
                                                     const ConvConfig&,
                                                     const std::vector<std::size_t>&);

}  // namespace dcls
