// Python surface for the core operations. Arrays cross the boundary as
// float64 C-contiguous numpy buffers and are copied into Tensor storage;
// nothing here keeps references to caller memory.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcls/construct.hpp"
#include "dcls/conv.hpp"
#include "dcls/diagnostics.hpp"
#include "dcls/geometry.hpp"
#include "dcls/parallel.hpp"
#include "dcls/training.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

dcls::Tensor to_tensor(const Array& a) {
    const py::buffer_info info = a.request();
    std::vector<std::size_t> shape(info.shape.begin(), info.shape.end());
    dcls::Tensor t(shape, 0.0);
    std::memcpy(t.data(), info.ptr, t.size() * sizeof(double));
    return t;
}

py::array to_array(const dcls::Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::memcpy(out.mutable_data(), t.data(), t.size() * sizeof(double));
    return out;
}

dcls::ConvConfig make_cfg(const std::vector<int>& stride, const std::vector<int>& padding,
                          const std::vector<int>& dilation, int groups) {
    dcls::ConvConfig cfg;
    cfg.stride = stride;
    cfg.padding = padding;
    cfg.dilation = dilation;
    cfg.groups = groups;
    return cfg;
}

dcls::InitDist parse_dist(const std::string& name) {
    if (name == "normal") return dcls::InitDist::normal;
    if (name == "uniform") return dcls::InitDist::uniform;
    throw std::invalid_argument("unknown init distribution '" + name +
                                "' (normal or uniform)");
}

}  // namespace

PYBIND11_MODULE(_dcls, mod) {
    mod.doc() = "sparse kernels with learnable element positions";

    py::class_<dcls::KernelSpec>(mod, "KernelSpec")
        .def(py::init([](int ndims, int kernel_count, std::vector<int> dilated_size,
                         int channels_out, int channels_in_per_group, int groups) {
                 dcls::KernelSpec spec;
                 spec.ndims = ndims;
                 spec.kernel_count = kernel_count;
                 spec.dilated_size = std::move(dilated_size);
                 spec.channels_out = channels_out;
                 spec.channels_in_per_group = channels_in_per_group;
                 spec.groups = groups;
                 spec.validate();
                 return spec;
             }),
             py::arg("ndims"), py::arg("kernel_count"), py::arg("dilated_size"),
             py::arg("channels_out"), py::arg("channels_in_per_group") = 1,
             py::arg("groups") = 1)
        .def_readonly("ndims", &dcls::KernelSpec::ndims)
        .def_readonly("kernel_count", &dcls::KernelSpec::kernel_count)
        .def_readonly("dilated_size", &dcls::KernelSpec::dilated_size)
        .def_readonly("channels_out", &dcls::KernelSpec::channels_out)
        .def_readonly("channels_in_per_group", &dcls::KernelSpec::channels_in_per_group)
        .def_readonly("groups", &dcls::KernelSpec::groups)
        .def("lower_bound", &dcls::KernelSpec::lower_bound, py::arg("axis"))
        .def("upper_bound", &dcls::KernelSpec::upper_bound, py::arg("axis"))
        .def("weight_shape", &dcls::KernelSpec::weight_shape)
        .def("position_shape", &dcls::KernelSpec::position_shape)
        .def("kernel_shape", &dcls::KernelSpec::kernel_shape)
        .def("__repr__", [](const dcls::KernelSpec& s) {
            std::string r = "KernelSpec(ndims=" + std::to_string(s.ndims) +
                            ", kernel_count=" + std::to_string(s.kernel_count) + ", dilated_size=[";
            for (std::size_t d = 0; d < s.dilated_size.size(); ++d) {
                r += (d ? "," : "") + std::to_string(s.dilated_size[d]);
            }
            return r + "], channels_out=" + std::to_string(s.channels_out) +
                   ", channels_in_per_group=" + std::to_string(s.channels_in_per_group) +
                   ", groups=" + std::to_string(s.groups) + ")";
        });

    mod.def(
        "construct_kernel",
        [](const Array& weights, const Array& positions, const dcls::KernelSpec& spec) {
            return to_array(dcls::construct_forward(to_tensor(weights), to_tensor(positions), spec));
        },
        py::arg("weights"), py::arg("positions"), py::arg("spec"),
        "Scatter weighted elements into the dense window by multilinear interpolation.");

    mod.def(
        "construct_kernel_grad",
        [](const Array& upstream, const Array& weights, const Array& positions,
           const dcls::KernelSpec& spec) {
            const dcls::GradBundle g = dcls::construct_backward(
                to_tensor(upstream), to_tensor(weights), to_tensor(positions), spec);
            return py::make_tuple(to_array(g.d_weights), to_array(g.d_positions));
        },
        py::arg("upstream"), py::arg("weights"), py::arg("positions"), py::arg("spec"),
        "Adjoint of construct_kernel: returns (d_weights, d_positions).");

    mod.def(
        "conv",
        [](const Array& input, const Array& kernel, const std::vector<int>& stride,
           const std::vector<int>& padding, int groups) {
            return to_array(dcls::conv_direct(to_tensor(input), to_tensor(kernel),
                                              make_cfg(stride, padding, {}, groups)));
        },
        py::arg("input"), py::arg("kernel"), py::arg("stride") = std::vector<int>{},
        py::arg("padding") = std::vector<int>{}, py::arg("groups") = 1,
        "Direct cross-correlation with zero padding and channel groups.");

    mod.def(
        "dilated_conv",
        [](const Array& input, const Array& kernel, const std::vector<int>& stride,
           const std::vector<int>& padding, const std::vector<int>& dilation, int groups) {
            return to_array(dcls::dilated_conv_baseline(to_tensor(input), to_tensor(kernel),
                                                        make_cfg(stride, padding, dilation, groups)));
        },
        py::arg("input"), py::arg("kernel"), py::arg("stride") = std::vector<int>{},
        py::arg("padding") = std::vector<int>{}, py::arg("dilation") = std::vector<int>{},
        py::arg("groups") = 1, "Classical dilated convolution on a regular grid.");

    mod.def(
        "dcls_conv",
        [](const Array& input, const Array& weights, const Array& positions,
           const dcls::KernelSpec& spec, const std::vector<int>& stride,
           const std::vector<int>& padding) {
            dcls::ConvConfig cfg = make_cfg(stride, padding, {}, spec.groups);
            return to_array(dcls::dcls_conv_forward(to_tensor(input), to_tensor(weights),
                                                    to_tensor(positions), spec, cfg)
                                .first);
        },
        py::arg("input"), py::arg("weights"), py::arg("positions"), py::arg("spec"),
        py::arg("stride") = std::vector<int>{}, py::arg("padding") = std::vector<int>{},
        "Construct the kernel from (weights, positions) and convolve in one call.");

    mod.def(
        "dcls_conv_grad",
        [](const Array& upstream, const Array& input, const Array& weights, const Array& positions,
           const dcls::KernelSpec& spec, const std::vector<int>& stride,
           const std::vector<int>& padding) {
            dcls::ConvConfig cfg = make_cfg(stride, padding, {}, spec.groups);
            auto [out, ctx] = dcls::dcls_conv_forward(to_tensor(input), to_tensor(weights),
                                                      to_tensor(positions), spec, cfg);
            (void)out;
            const dcls::DclsConvGrads g = dcls::dcls_conv_backward(ctx, to_tensor(upstream));
            return py::make_tuple(to_array(g.d_input), to_array(g.params.d_weights),
                                  to_array(g.params.d_positions));
        },
        py::arg("upstream"), py::arg("input"), py::arg("weights"), py::arg("positions"),
        py::arg("spec"), py::arg("stride") = std::vector<int>{},
        py::arg("padding") = std::vector<int>{},
        "Full adjoint of dcls_conv: returns (d_input, d_weights, d_positions).");

    mod.def(
        "init_positions",
        [](const dcls::KernelSpec& spec, const std::string& dist, std::uint64_t seed) {
            return to_array(dcls::init_positions(spec, parse_dist(dist), seed));
        },
        py::arg("spec"), py::arg("dist") = "uniform", py::arg("seed") = 1,
        "Seeded position initialization, already clamped to the window.");

    mod.def(
        "clamp_positions",
        [](const Array& positions, const dcls::KernelSpec& spec) {
            dcls::Tensor p = to_tensor(positions);
            const std::size_t changed = dcls::clamp_positions(p, spec);
            return py::make_tuple(to_array(p), changed);
        },
        py::arg("positions"), py::arg("spec"),
        "Project positions into the window; returns (clamped, changed_count).");

    mod.def(
        "avg_speed",
        [](const Array& prev, const Array& curr) {
            return dcls::avg_speed(to_tensor(prev), to_tensor(curr));
        },
        py::arg("prev"), py::arg("curr"),
        "Mean absolute per-coordinate position movement between two snapshots.");

    mod.def(
        "repulsive_loss",
        [](const Array& positions, const dcls::KernelSpec& spec, double radius) {
            return dcls::repulsive_loss(to_tensor(positions), spec, radius);
        },
        py::arg("positions"), py::arg("spec"), py::arg("radius") = 1.0);

    mod.def(
        "repulsive_loss_grad",
        [](const Array& positions, const dcls::KernelSpec& spec, double radius) {
            return to_array(dcls::repulsive_loss_grad(to_tensor(positions), spec, radius));
        },
        py::arg("positions"), py::arg("spec"), py::arg("radius") = 1.0);

    mod.def("num_workers", &dcls::num_workers);
    mod.def("set_num_workers", &dcls::set_num_workers, py::arg("workers"));
}
