#ifndef NBCV_MODEL_IO_HPP
#define NBCV_MODEL_IO_HPP

#include <cstdint>
#include <string>

#include "nbcv/network.hpp"

namespace nbcv {

// Model file schema violations carry the offending field path.
struct SchemaError : std::runtime_error {
    explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

void save_model(const std::string& path, const Network& net, std::uint64_t seed = 0);
Network load_model(const std::string& path);

std::string model_to_json(const Network& net, std::uint64_t seed = 0);
Network model_from_json(const std::string& text);

}  // namespace nbcv

#endif
