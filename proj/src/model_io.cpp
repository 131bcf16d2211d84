#include "nbcv/model_io.hpp"

#include <fstream>
#include <json.hpp>

namespace nbcv {

using nlohmann::json;

namespace {

json matrix_to_json(const Tensor& w) {
    std::size_t rows = w.shape[0], cols = w.shape[1];
    json out = json::array();
    for (std::size_t r = 0; r < rows; ++r) {
        json row = json::array();
        for (std::size_t c = 0; c < cols; ++c) row.push_back(w.data[r * cols + c]);
        out.push_back(std::move(row));
    }
    return out;
}

Tensor matrix_from_json(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw SchemaError("model: " + path + " must be a 2-D array");
    std::size_t rows = j.size(), cols = j[0].size();
    Tensor w = Tensor::zeros({rows, cols});
    for (std::size_t r = 0; r < rows; ++r) {
        if (!j[r].is_array() || j[r].size() != cols)
            throw SchemaError("model: " + path + "[" + std::to_string(r) + "] is ragged");
        for (std::size_t c = 0; c < cols; ++c) w.data[r * cols + c] = j[r][c].get<double>();
    }
    return w;
}

Tensor vector_from_json(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) throw SchemaError("model: " + path + " must be an array");
    Tensor v = Tensor::zeros({j.size()});
    for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
    return v;
}

}  // namespace

std::string model_to_json(const Network& net, std::uint64_t seed) {
    json layers = json::array();
    for (const Layer& layer : net.layers()) {
        json jl;
        if (const auto* a = std::get_if<AffineLayer>(&layer)) {
            jl["kind"] = "affine";
            jl["w"] = matrix_to_json(a->w);
            jl["b"] = a->b.data;
        } else if (const auto* c = std::get_if<Conv2dLayer>(&layer)) {
            jl["kind"] = "conv2d";
            jl["shape"] = c->kernels.shape;
            jl["kernels"] = c->kernels.data;
            jl["bias"] = c->bias.data;
            jl["stride"] = {c->stride_h, c->stride_w};
            jl["padding"] = {c->pad_h, c->pad_w};
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            jl["kind"] = "relu";
        } else {
            jl["kind"] = "flatten";
        }
        layers.push_back(std::move(jl));
    }
    json doc;
    doc["layers"] = std::move(layers);
    doc["meta"] = {{"input_shape", net.input_shape()}, {"seed", seed}};
    return doc.dump();
}

Network model_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("model: invalid JSON: ") + e.what());
    }
    if (!doc.contains("layers")) throw SchemaError("model: missing field \"layers\"");
    if (!doc["layers"].is_array()) throw SchemaError("model: \"layers\" must be an array");
    if (!doc.contains("meta")) throw SchemaError("model: missing field \"meta\"");
    if (!doc["meta"].contains("input_shape"))
        throw SchemaError("model: missing field \"meta.input_shape\"");

    std::vector<std::size_t> input_shape =
        doc["meta"]["input_shape"].get<std::vector<std::size_t>>();

    std::vector<Layer> layers;
    for (std::size_t i = 0; i < doc["layers"].size(); ++i) {
        const json& jl = doc["layers"][i];
        std::string where = "layers[" + std::to_string(i) + "]";
        if (!jl.contains("kind")) throw SchemaError("model: missing field \"" + where + ".kind\"");
        std::string kind = jl["kind"].get<std::string>();
        if (kind == "affine") {
            if (!jl.contains("w")) throw SchemaError("model: missing field \"" + where + ".w\"");
            if (!jl.contains("b")) throw SchemaError("model: missing field \"" + where + ".b\"");
            AffineLayer a;
            a.w = matrix_from_json(jl["w"], where + ".w");
            a.b = vector_from_json(jl["b"], where + ".b");
            layers.emplace_back(std::move(a));
        } else if (kind == "conv2d") {
            for (const char* f : {"shape", "kernels", "bias", "stride", "padding"})
                if (!jl.contains(f))
                    throw SchemaError("model: missing field \"" + where + "." + f + "\"");
            Conv2dLayer c;
            std::vector<std::size_t> kshape = jl["shape"].get<std::vector<std::size_t>>();
            std::vector<double> kdata = jl["kernels"].get<std::vector<double>>();
            c.kernels = Tensor(kshape, std::move(kdata));
            c.bias = vector_from_json(jl["bias"], where + ".bias");
            auto stride = jl["stride"].get<std::vector<std::size_t>>();
            auto padding = jl["padding"].get<std::vector<std::size_t>>();
            if (stride.size() != 2 || padding.size() != 2)
                throw SchemaError("model: " + where + ".stride/padding must have 2 entries");
            c.stride_h = stride[0];
            c.stride_w = stride[1];
            c.pad_h = padding[0];
            c.pad_w = padding[1];
            layers.emplace_back(std::move(c));
        } else if (kind == "relu") {
            layers.emplace_back(ReluLayer{});
        } else if (kind == "flatten") {
            layers.emplace_back(FlattenLayer{});
        } else {
            throw SchemaError("model: unknown layer kind \"" + kind + "\" at " + where);
        }
    }

    try {
        return Network(std::move(input_shape), std::move(layers));
    } catch (const std::exception& e) {
        throw SchemaError(std::string("model: ") + e.what());
    }
}

void save_model(const std::string& path, const Network& net, std::uint64_t seed) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_model: cannot write " + path);
    out << model_to_json(net, seed) << "\n";
}

Network load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_model: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return model_from_json(text);
}

}  // namespace nbcv
