#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dcls/conv.hpp"
#include "dcls/geometry.hpp"
#include "dcls/tensor.hpp"

namespace dcls {

/// One DCLS convolution: learnable weights and positions plus the conv
/// geometry they are applied with.
struct DclsLayer {
    KernelSpec spec;
    ConvConfig cfg;
    Tensor weights;
    Tensor positions;
};

DclsLayer make_layer(const KernelSpec& spec, const ConvConfig& cfg);

enum class ParamKind { weights, positions };

/// A named view onto one trainable tensor of a model. `kind` is optional so
/// that grouping code can reject parameters nobody classified.
struct Parameter {
    std::string name;
    Tensor* value = nullptr;
    std::optional<ParamKind> kind;
};

/// A plain sequential stack of DCLS layers (no nonlinearities; enough for
/// receptive-field probes and the toy trainer).
struct Model {
    std::vector<DclsLayer> layers;

    std::vector<Parameter> parameters();
};

struct ModelForward {
    Tensor output;
    std::vector<DclsConvContext> contexts;
};

struct ModelGrads {
    Tensor d_input;
    std::vector<GradBundle> layers;
};

ModelForward model_forward(const Model& model, const Tensor& input);

/// Chain rule over the stack, innermost layer last. `fwd` must come from
/// model_forward on the same model instance.
ModelGrads model_backward(const Model& model, const ModelForward& fwd, const Tensor& upstream);

}  // namespace dcls
