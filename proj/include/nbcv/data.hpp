#ifndef NBCV_DATA_HPP
#define NBCV_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "nbcv/tensor.hpp"

namespace nbcv {

struct Dataset {
    std::vector<Tensor> inputs;  // each scaled to [0,1]
    std::vector<std::size_t> labels;
    std::size_t num_classes = 0;
    std::string split;       // "train" | "test"
    std::string provenance;  // where the data came from

    std::size_t size() const { return inputs.size(); }
    void validate() const;
};

// Big-endian IDX (magic 0x803 images / 0x801 labels); pixels scaled by /255.
// Takes the first limit_per_class images of each class in file order;
// limit_per_class == 0 means no limit.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       std::size_t limit_per_class);

// Bit-exact IDX writers (bytes are inputs * 255 rounded to nearest).
void write_idx_images(const std::string& path, const std::vector<Tensor>& images);
void write_idx_labels(const std::string& path, const std::vector<std::size_t>& labels);

enum class SyntheticKind { blobs, moons };

// 2-D two-class dataset in [0,1]^2; round-robin class assignment.
Dataset gen_synthetic(SyntheticKind kind, std::size_t n, double noise, std::uint64_t seed);

// Ten-class 28x28 glyph images (seven-segment style digits with position and
// intensity jitter); the MNIST-shaped stand-in used when no IDX files are at
// hand. Returns per_class images of every class, interleaved 0..9, 0..9, ...
std::vector<Tensor> gen_digit_images(std::size_t per_class, std::uint64_t seed,
                                     std::vector<std::size_t>& labels_out);

std::string dataset_to_csv(const Dataset& ds);  // x1, x2, label (2-D data)

}  // namespace nbcv

#endif
