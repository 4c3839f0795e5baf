#include "dcls/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "dcls/construct.hpp"
#include "dcls/conv.hpp"
#include "dcls/random.hpp"
#include "dcls/training.hpp"

namespace dcls {

double grad_check(const std::function<double(const std::vector<double>&)>& f,
                  const std::vector<double>& params, const std::vector<double>& analytic_grad,
                  double eps, bool check_lattice) {
    if (eps < 1e-6 || eps > 1e-3) {
        throw std::invalid_argument("finite-difference eps must lie in [1e-6, 1e-3], got " +
                                    std::to_string(eps));
    }
    if (params.size() != analytic_grad.size()) {
        throw std::invalid_argument("gradient has " + std::to_string(analytic_grad.size()) +
                                    " entries for " + std::to_string(params.size()) + " parameters");
    }
    if (check_lattice) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double frac = params[i] - std::floor(params[i]);
            if (frac < 0.05 || frac > 0.95) {
                throw std::invalid_argument(
                    "parameter " + std::to_string(i) + " sits on the interpolation lattice " +
                    "(fractional part " + std::to_string(frac) +
                    "); central differences straddle a cell boundary there");
            }
        }
    }

    double worst = 0.0;
    std::vector<double> probe = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        probe[i] = params[i] + eps;
        const double hi = f(probe);
        probe[i] = params[i] - eps;
        const double lo = f(probe);
        probe[i] = params[i];
        if (!std::isfinite(hi) || !std::isfinite(lo) || !std::isfinite(analytic_grad[i])) {
            throw std::runtime_error("non-finite value while checking parameter " +
                                     std::to_string(i));
        }
        const double numeric = (hi - lo) / (2.0 * eps);
        const double a = analytic_grad[i];
        const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
        worst = std::max(worst, rel);
    }
    return worst;
}

double avg_speed(const Tensor& prev, const Tensor& curr) {
    if (prev.shape() != curr.shape()) {
        throw std::invalid_argument("speed needs matching snapshots, got " +
                                    shape_string(prev.shape()) + " vs " +
                                    shape_string(curr.shape()));
    }
    if (prev.size() == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < prev.size(); ++i) acc += std::abs(curr[i] - prev[i]);
    return acc / static_cast<double>(prev.size());
}

std::vector<AxisHistogram> position_histogram(const Tensor& positions, const KernelSpec& spec,
                                              int bins) {
    if (bins < 2) throw std::invalid_argument("histogram needs at least 2 bins");
    if (positions.shape() != spec.position_shape()) {
        throw std::invalid_argument("position tensor shape " + shape_string(positions.shape()) +
                                    " does not match spec " + shape_string(spec.position_shape()));
    }
    const std::size_t per_axis = positions.size() / static_cast<std::size_t>(spec.ndims);
    std::vector<AxisHistogram> out(static_cast<std::size_t>(spec.ndims));
    for (int d = 0; d < spec.ndims; ++d) {
        AxisHistogram& h = out[static_cast<std::size_t>(d)];
        h.lo = spec.lower_bound(d);
        h.hi = spec.upper_bound(d);
        h.counts.assign(static_cast<std::size_t>(bins), 0);
        const double width = h.hi - h.lo;
        const double* axis = positions.data() + static_cast<std::size_t>(d) * per_axis;
        for (std::size_t i = 0; i < per_axis; ++i) {
            int bin = 0;
            if (width > 0.0) {
                bin = static_cast<int>((axis[i] - h.lo) / width * bins);
                bin = std::clamp(bin, 0, bins - 1);  // top edge lands in the last bin
            }
            ++h.counts[static_cast<std::size_t>(bin)];
        }
    }
    return out;
}

ErfMap erf_map(const Model& model, const Tensor& inputs) {
    const ModelForward fwd = model_forward(model, inputs);
    const std::vector<std::size_t>& oshape = fwd.output.shape();
    const std::size_t batch = oshape[0];
    const std::size_t cout = oshape[1];
    const std::size_t ndims = oshape.size() - 2;

    // unit gradient at the central output unit of every batch item / channel
    Tensor upstream(oshape, 0.0);
    std::size_t center = 0;
    for (std::size_t d = 0; d < ndims; ++d) {
        center = center * oshape[d + 2] + oshape[d + 2] / 2;
    }
    std::size_t out_cells = 1;
    for (std::size_t d = 0; d < ndims; ++d) out_cells *= oshape[d + 2];
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < cout; ++c) {
            upstream[(b * cout + c) * out_cells + center] = 1.0;
        }
    }

    const ModelGrads grads = model_backward(model, fwd, upstream);
    const std::vector<std::size_t>& ishape = inputs.shape();
    const std::size_t cin = ishape[1];
    std::size_t in_cells = 1;
    for (std::size_t d = 0; d < ndims; ++d) in_cells *= ishape[d + 2];

    Tensor map(std::vector<std::size_t>(ishape.begin() + 2, ishape.end()), 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < cin; ++c) {
            const double* g = grads.d_input.data() + (b * cin + c) * in_cells;
            for (std::size_t i = 0; i < in_cells; ++i) {
                if (!std::isfinite(g[i])) {
                    throw std::runtime_error("non-finite input gradient in the receptive field map");
                }
                map[i] += std::abs(g[i]);
            }
        }
    }
    double peak = 0.0;
    for (std::size_t i = 0; i < map.size(); ++i) peak = std::max(peak, map[i]);
    if (peak > 0.0) {
        for (std::size_t i = 0; i < map.size(); ++i) map[i] /= peak;
    }
    return ErfMap{std::move(map)};
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

/// Times one sweep point. Sub-millisecond stages are repeated in an inner
/// loop sized from the warmup measurement so each sample is long enough to
/// trust the clock.
template <typename T>
BenchRow time_point(int s, int m, int map, const BenchSweep& sweep, int repetitions) {
    KernelSpec spec;
    spec.ndims = 2;
    spec.kernel_count = m;
    spec.dilated_size = {s, s};
    spec.channels_out = sweep.channels;
    spec.channels_in_per_group = 1;
    spec.groups = sweep.channels;
    spec.validate();

    ConvConfig cfg;
    cfg.stride = {1, 1};
    cfg.padding = {s / 2, s / 2};
    cfg.groups = sweep.channels;

    Rng rng(sweep.seed);
    const Tensor weights64 = [&] {
        Tensor w(spec.weight_shape(), 0.0);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal();
        return w;
    }();
    const Tensor positions64 = init_positions(spec, InitDist::uniform, sweep.seed + 17);
    Tensor input64({static_cast<std::size_t>(sweep.batch), static_cast<std::size_t>(sweep.channels),
                    static_cast<std::size_t>(map), static_cast<std::size_t>(map)},
                   0.0);
    for (std::size_t i = 0; i < input64.size(); ++i) input64[i] = rng.normal();

    const auto cast = [](const Tensor& src) {
        TensorT<T> dst(src.shape(), T(0));
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]);
        return dst;
    };
    const TensorT<T> weights = cast(weights64);
    const TensorT<T> positions = cast(positions64);
    const TensorT<T> input = cast(input64);

    // warmup (discarded) also calibrates the inner repeat counts
    T sink = T(0);
    auto t0 = Clock::now();
    TensorT<T> kernel = construct_forward(weights, positions, spec);
    const double construct_once = seconds_since(t0);
    t0 = Clock::now();
    TensorT<T> out = conv_direct(input, kernel, cfg);
    const double conv_once = seconds_since(t0);
    sink += kernel[0] + out[0];

    const auto inner_count = [](double once) {
        if (once >= 1e-3) return 1;
        return static_cast<int>(std::ceil(1e-3 / std::max(once, 1e-8)));
    };
    const int construct_inner = inner_count(construct_once);
    const int conv_inner = inner_count(conv_once);

    std::vector<double> construct_ms, conv_ms;
    for (int rep = 0; rep < repetitions; ++rep) {
        t0 = Clock::now();
        for (int i = 0; i < construct_inner; ++i) {
            TensorT<T> k = construct_forward(weights, positions, spec);
            sink += k[0];
        }
        construct_ms.push_back(seconds_since(t0) * 1e3 / construct_inner);

        t0 = Clock::now();
        for (int i = 0; i < conv_inner; ++i) {
            TensorT<T> o = conv_direct(input, kernel, cfg);
            sink += o[0];
        }
        conv_ms.push_back(seconds_since(t0) * 1e3 / conv_inner);
    }
    if (!std::isfinite(static_cast<double>(sink))) {
        throw std::runtime_error("benchmark produced non-finite values");
    }

    BenchRow row;
    row.s = s;
    row.m = m;
    row.map = map;
    row.construct_ms = median(construct_ms);
    row.conv_ms = median(conv_ms);
    return row;
}

}  // namespace

std::vector<BenchRow> bench_construct_vs_conv(const BenchSweep& sweep, int repetitions) {
    if (repetitions < 1) throw std::invalid_argument("benchmark needs at least one repetition");
    std::vector<BenchRow> rows;
    for (int map : sweep.map_values) {
        for (int s : sweep.s_values) {
            for (int m : sweep.m_values) {
                rows.push_back(sweep.float32 ? time_point<float>(s, m, map, sweep, repetitions)
                                             : time_point<double>(s, m, map, sweep, repetitions));
            }
        }
    }
    return rows;
}

}  // namespace dcls
