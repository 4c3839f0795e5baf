#include "dcls/model.hpp"

#include <stdexcept>

namespace dcls {

DclsLayer make_layer(const KernelSpec& spec, const ConvConfig& cfg) {
    spec.validate();
    DclsLayer layer;
    layer.spec = spec;
    layer.cfg = cfg;
    layer.weights = Tensor(spec.weight_shape(), 0.0);
    layer.positions = Tensor(spec.position_shape(), 0.0);
    return layer;
}

std::vector<Parameter> Model::parameters() {
    std::vector<Parameter> out;
    out.reserve(layers.size() * 2);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string prefix = "layer" + std::to_string(i) + ".";
        out.push_back({prefix + "weights", &layers[i].weights, ParamKind::weights});
        out.push_back({prefix + "positions", &layers[i].positions, ParamKind::positions});
    }
    return out;
}

ModelForward model_forward(const Model& model, const Tensor& input) {
    if (model.layers.empty()) throw std::invalid_argument("model has no layers");
    ModelForward fwd;
    fwd.contexts.reserve(model.layers.size());
    Tensor current = input;
    for (const DclsLayer& layer : model.layers) {
        auto [out, ctx] =
            dcls_conv_forward(current, layer.weights, layer.positions, layer.spec, layer.cfg);
        fwd.contexts.push_back(std::move(ctx));
        current = std::move(out);
    }
    fwd.output = std::move(current);
    return fwd;
}

ModelGrads model_backward(const Model& model, const ModelForward& fwd, const Tensor& upstream) {
    if (fwd.contexts.size() != model.layers.size()) {
        throw std::invalid_argument("forward record has " + std::to_string(fwd.contexts.size()) +
                                    " contexts for a model with " +
                                    std::to_string(model.layers.size()) + " layers");
    }
    ModelGrads grads;
    grads.layers.resize(model.layers.size());
    Tensor g = upstream;
    for (std::size_t i = model.layers.size(); i-- > 0;) {
        DclsConvGrads lg = dcls_conv_backward(fwd.contexts[i], g);
        grads.layers[i] = std::move(lg.params);
        g = std::move(lg.d_input);
    }
    grads.d_input = std::move(g);
    return grads;
}

}  // namespace dcls
