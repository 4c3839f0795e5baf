#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dcls/geometry.hpp"
#include "dcls/model.hpp"
#include "dcls/tensor.hpp"

namespace dcls {

/// Compares an analytic gradient against central finite differences of `f`,
/// one perturbed coordinate at a time, and returns the worst relative error
/// |a - n| / max(1, |a|, |n|).
///
/// `check_lattice` guards interpolation parameters: finite differences
/// straddle a cell boundary when a coordinate sits near the lattice, so such
/// points are rejected. Turn it off for parameters without that hazard
/// (weights, inputs).
double grad_check(const std::function<double(const std::vector<double>&)>& f,
                  const std::vector<double>& params, const std::vector<double>& analytic_grad,
                  double eps, bool check_lattice = true);

/// Mean absolute per-coordinate displacement between two position snapshots.
double avg_speed(const Tensor& prev, const Tensor& curr);

struct AxisHistogram {
    double lo = 0.0;  // clamp box edges for this axis
    double hi = 0.0;
    std::vector<std::size_t> counts;
};

/// Per-axis binned counts of position coordinates over the clamp box.
std::vector<AxisHistogram> position_histogram(const Tensor& positions, const KernelSpec& spec,
                                              int bins);

struct ErfMap {
    Tensor map;  // input spatial extents, values in [0, 1], max 1
};

/// Effective receptive field: backpropagates a unit gradient from the central
/// output unit of every channel and averages the absolute input gradient over
/// batch and channels, normalized so the peak is 1.
ErfMap erf_map(const Model& model, const Tensor& inputs);

struct BenchRow {
    int s = 0;
    int m = 0;
    int map = 0;
    double construct_ms = 0.0;
    double conv_ms = 0.0;
};

struct BenchSweep {
    std::vector<int> s_values = {7, 17};
    std::vector<int> m_values = {8, 17, 26, 34};
    std::vector<int> map_values = {28, 56};
    int channels = 16;  // depthwise
    int batch = 1;
    bool float32 = false;
    std::uint64_t seed = 1;
};

/// Median wall-clock milliseconds per stage (construct, conv) per sweep
/// point, after one discarded warmup iteration.
std::vector<BenchRow> bench_construct_vs_conv(const BenchSweep& sweep, int repetitions);

}  // namespace dcls
