#include "dcls/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dcls {

void KernelSpec::validate() const {
    if (ndims < 1 || ndims > kMaxDims) {
        throw std::invalid_argument("KernelSpec: ndims must be 1, 2 or 3, got " +
                                    std::to_string(ndims));
    }
    if (dilated_size.size() != static_cast<std::size_t>(ndims)) {
        throw std::invalid_argument("KernelSpec: dilated_size needs " + std::to_string(ndims) +
                                    " entries, got " + std::to_string(dilated_size.size()));
    }
    for (int d = 0; d < ndims; ++d) {
        if (dilated_size[static_cast<std::size_t>(d)] < 1) {
            throw std::invalid_argument("KernelSpec: dilated_size[" + std::to_string(d) +
                                        "] must be >= 1");
        }
    }
    if (kernel_count < 1) throw std::invalid_argument("KernelSpec: kernel_count must be >= 1");
    if (channels_out < 1 || channels_in_per_group < 1 || groups < 1) {
        throw std::invalid_argument("KernelSpec: channel/group counts must be >= 1");
    }
    if (channels_out % groups != 0) {
        throw std::invalid_argument("KernelSpec: channels_out (" + std::to_string(channels_out) +
                                    ") not divisible by groups (" + std::to_string(groups) + ")");
    }
}

std::vector<std::size_t> KernelSpec::weight_shape() const {
    return {static_cast<std::size_t>(channels_out),
            static_cast<std::size_t>(channels_in_per_group),
            static_cast<std::size_t>(kernel_count)};
}

std::vector<std::size_t> KernelSpec::position_shape() const {
    return {static_cast<std::size_t>(ndims), static_cast<std::size_t>(channels_out),
            static_cast<std::size_t>(channels_in_per_group),
            static_cast<std::size_t>(kernel_count)};
}

std::vector<std::size_t> KernelSpec::kernel_shape() const {
    std::vector<std::size_t> shape = {static_cast<std::size_t>(channels_out),
                                      static_cast<std::size_t>(channels_in_per_group)};
    for (int d = 0; d < ndims; ++d) {
        shape.push_back(static_cast<std::size_t>(dilated_size[static_cast<std::size_t>(d)]));
    }
    return shape;
}

std::size_t KernelSpec::cells_per_slice() const {
    std::size_t n = 1;
    for (int d = 0; d < ndims; ++d) n *= static_cast<std::size_t>(dilated_size[static_cast<std::size_t>(d)]);
    return n;
}

double to_absolute(double p, const KernelSpec& spec, int axis) {
    return p + spec.half_extent(axis);
}

double to_centered(double p_abs, const KernelSpec& spec, int axis) {
    return p_abs - spec.half_extent(axis);
}

InterpolationStencil stencil(std::span<const double> p_abs, const KernelSpec& spec) {
    InterpolationStencil st;
    st.ndims = static_cast<int>(p_abs.size());
    for (int d = 0; d < st.ndims; ++d) {
        const double p = p_abs[static_cast<std::size_t>(d)];
        const double top = spec.dilated_size[static_cast<std::size_t>(d)] - 1;
        if (!(p >= 0.0 && p <= top)) {
            throw std::domain_error("stencil: coordinate " + std::to_string(p) + " on axis " +
                                    std::to_string(d) + " outside [0, " + std::to_string(top) +
                                    "]");
        }
        const double fl = std::floor(p);
        st.floor_index[static_cast<std::size_t>(d)] = static_cast<int>(fl);
        st.frac[static_cast<std::size_t>(d)] = p - fl;
    }
    return st;
}

}  // namespace dcls
