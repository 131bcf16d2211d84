#include "nbcv/data.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "nbcv/rng.hpp"

namespace nbcv {

void Dataset::validate() const {
    if (inputs.size() != labels.size())
        throw std::runtime_error("Dataset: input/label count mismatch");
    for (const Tensor& t : inputs) {
        t.ensure_finite("dataset input");
        for (double v : t.data)
            if (v < 0.0 || v > 1.0) throw std::runtime_error("Dataset: input outside [0,1]");
    }
    for (std::size_t label : labels)
        if (label >= num_classes) throw std::runtime_error("Dataset: label out of range");
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("IDX: truncated " + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       std::size_t limit_per_class) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("IDX: cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("IDX: cannot open " + labels_path);

    std::uint32_t img_magic = read_be32(img, "image magic");
    if (img_magic != 0x00000803u)
        throw std::runtime_error("IDX: bad image magic in " + images_path);
    std::uint32_t n_images = read_be32(img, "image count");
    std::uint32_t rows = read_be32(img, "row count");
    std::uint32_t cols = read_be32(img, "column count");

    std::uint32_t lab_magic = read_be32(lab, "label magic");
    if (lab_magic != 0x00000801u)
        throw std::runtime_error("IDX: bad label magic in " + labels_path);
    std::uint32_t n_labels = read_be32(lab, "label count");
    if (n_images != n_labels)
        throw std::runtime_error("IDX: image/label count mismatch");

    std::size_t pixels = static_cast<std::size_t>(rows) * cols;
    std::vector<unsigned char> buf(pixels);

    Dataset ds;
    ds.num_classes = 10;
    ds.provenance = images_path;
    std::array<std::size_t, 10> per_class{};

    for (std::uint32_t i = 0; i < n_images; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
        if (!img) throw std::runtime_error("IDX: truncated image payload");
        char lc;
        lab.read(&lc, 1);
        if (!lab) throw std::runtime_error("IDX: truncated label payload");
        std::size_t label = static_cast<unsigned char>(lc);
        if (label >= 10) throw std::runtime_error("IDX: label byte out of range");
        if (limit_per_class != 0 && per_class[label] >= limit_per_class) continue;
        per_class[label] += 1;

        Tensor t = Tensor::zeros({pixels});
        for (std::size_t p = 0; p < pixels; ++p) t[p] = buf[p] / 255.0;
        ds.inputs.push_back(std::move(t));
        ds.labels.push_back(label);
    }
    ds.validate();
    return ds;
}

void write_idx_images(const std::string& path, const std::vector<Tensor>& images) {
    if (images.empty()) throw std::invalid_argument("write_idx_images: empty set");
    std::size_t pixels = images.front().size();
    std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(double(pixels))));
    if (side * side != pixels)
        throw std::invalid_argument("write_idx_images: images must be square");

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("IDX: cannot write " + path);
    write_be32(out, 0x00000803u);
    write_be32(out, static_cast<std::uint32_t>(images.size()));
    write_be32(out, static_cast<std::uint32_t>(side));
    write_be32(out, static_cast<std::uint32_t>(side));
    std::vector<unsigned char> buf(pixels);
    for (const Tensor& t : images) {
        if (t.size() != pixels) throw std::invalid_argument("write_idx_images: ragged images");
        for (std::size_t p = 0; p < pixels; ++p) {
            double v = std::min(std::max(t[p], 0.0), 1.0);
            buf[p] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(pixels));
    }
}

void write_idx_labels(const std::string& path, const std::vector<std::size_t>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("IDX: cannot write " + path);
    write_be32(out, 0x00000801u);
    write_be32(out, static_cast<std::uint32_t>(labels.size()));
    for (std::size_t label : labels) out.put(static_cast<char>(label & 0xff));
}

Dataset gen_synthetic(SyntheticKind kind, std::size_t n, double noise, std::uint64_t seed) {
    if (n < 2) throw std::invalid_argument("gen_synthetic: need n >= 2");
    RngStream rng(seed, kind == SyntheticKind::blobs ? "synthetic/blobs" : "synthetic/moons");

    Dataset ds;
    ds.num_classes = 2;
    ds.provenance = kind == SyntheticKind::blobs ? "blobs" : "moons";
    auto clamp01 = [](double v) { return std::min(std::max(v, 0.0), 1.0); };

    for (std::size_t i = 0; i < n; ++i) {
        std::size_t label = i % 2;  // round-robin keeps class counts within 1
        double x = 0.0, y = 0.0;
        if (kind == SyntheticKind::blobs) {
            double cx = label == 0 ? 0.25 : 0.75;
            double cy = label == 0 ? 0.25 : 0.75;
            x = cx + noise * rng.normal();
            y = cy + noise * rng.normal();
        } else {
            double t = rng.uniform01() * 3.14159265358979323846;
            if (label == 0) {
                x = 0.5 + 0.35 * std::cos(t);
                y = 0.45 + 0.35 * std::sin(t);
            } else {
                x = 0.5 - 0.35 * std::cos(t);
                y = 0.55 - 0.35 * std::sin(t);
            }
            x += noise * rng.normal();
            y += noise * rng.normal();
        }
        ds.inputs.push_back(Tensor::vec({clamp01(x), clamp01(y)}));
        ds.labels.push_back(label);
    }
    ds.validate();
    return ds;
}

namespace {

// segment bit order: top, top-left, top-right, middle, bottom-left,
// bottom-right, bottom
constexpr std::array<unsigned, 10> kSegments = {
    0b1110111,  // 0
    0b0010010,  // 1
    0b1011101,  // 2
    0b1011011,  // 3
    0b0111010,  // 4
    0b1101011,  // 5
    0b1101111,  // 6
    0b1010010,  // 7
    0b1111111,  // 8
    0b1111011,  // 9
};

void fill_rect(std::vector<double>& img, int x0, int y0, int x1, int y1, double v) {
    for (int y = y0; y <= y1; ++y) {
        if (y < 0 || y >= 28) continue;
        for (int x = x0; x <= x1; ++x) {
            if (x < 0 || x >= 28) continue;
            img[static_cast<std::size_t>(y) * 28 + x] = std::max(img[std::size_t(y) * 28 + x], v);
        }
    }
}

}  // namespace

std::vector<Tensor> gen_digit_images(std::size_t per_class, std::uint64_t seed,
                                     std::vector<std::size_t>& labels_out) {
    RngStream rng(seed, "digits");
    std::vector<Tensor> images;
    labels_out.clear();

    for (std::size_t rep = 0; rep < per_class; ++rep) {
        for (std::size_t digit = 0; digit < 10; ++digit) {
            std::vector<double> img(28 * 28, 0.0);
            int dx = static_cast<int>(rng.index(3)) - 1;
            int dy = static_cast<int>(rng.index(3)) - 1;

            // glyph occupies a 16x20 cell anchored at (6,4) before jitter;
            // each segment carries its own ink level. A quarter of the
            // samples are faint enough to be flippable inside a 0.1 ball.
            bool faint = rng.uniform01() < 0.4;
            int lx = 6 + dx, rx = 21 + dx;
            int ty = 4 + dy, my = 13 + dy, by = 23 + dy;
            unsigned seg = kSegments[digit];
            auto ink = [&] {
                return faint ? 0.16 + 0.06 * rng.uniform01() : 0.85 + 0.15 * rng.uniform01();
            };
            if (seg & 0b1000000) fill_rect(img, lx, ty, rx, ty + 1, ink());        // top
            if (seg & 0b0100000) fill_rect(img, lx, ty, lx + 1, my, ink());        // top-left
            if (seg & 0b0010000) fill_rect(img, rx - 1, ty, rx, my, ink());        // top-right
            if (seg & 0b0001000) fill_rect(img, lx, my - 1, rx, my, ink());        // middle
            if (seg & 0b0000100) fill_rect(img, lx, my, lx + 1, by, ink());        // bottom-left
            if (seg & 0b0000010) fill_rect(img, rx - 1, my, rx, by, ink());        // bottom-right
            if (seg & 0b0000001) fill_rect(img, lx, by - 1, rx, by, ink());        // bottom

            for (double& v : img) {
                v = std::min(std::max(v, 0.0), 1.0);
            }
            images.push_back(Tensor({28 * 28}, std::move(img)));
            labels_out.push_back(digit);
        }
    }
    return images;
}

std::string dataset_to_csv(const Dataset& ds) {
    std::string out = "x1,x2,label\n";
    char line[96];
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.inputs[i].size() != 2)
            throw std::invalid_argument("dataset_to_csv: expects 2-D inputs");
        std::snprintf(line, sizeof line, "%.17g,%.17g,%zu\n", ds.inputs[i][0], ds.inputs[i][1],
                      ds.labels[i]);
        out += line;
    }
    return out;
}

}  // namespace nbcv
