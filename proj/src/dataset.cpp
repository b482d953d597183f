#include "daq/dataset.hpp"

#include <cmath>
#include <fstream>

#include "daq/error.hpp"
#include "daq/rng.hpp"

namespace daq {

namespace {

constexpr std::uint8_t kIdxUByte = 0x08;

struct IdxHeader {
    std::uint8_t type = 0;
    std::vector<std::uint32_t> dims;
};

std::vector<std::uint8_t> read_all(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                     std::istreambuf_iterator<char>());
}

std::uint32_t be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

// Magic layout: two zero bytes, a type code, and the dimension count.
IdxHeader parse_idx_header(const std::vector<std::uint8_t>& bytes, const std::string& path) {
    if (bytes.size() < 4 || bytes[0] != 0 || bytes[1] != 0)
        throw IoError("bad IDX magic in '" + path + "'");
    IdxHeader h;
    h.type = bytes[2];
    const int ndim = bytes[3];
    if (h.type != kIdxUByte)
        throw IoError("bad IDX magic in '" + path + "': unsupported type code " +
                      std::to_string(int(h.type)));
    if (ndim < 1 || ndim > 4) throw IoError("bad IDX magic in '" + path + "': ndim " +
                                            std::to_string(ndim));
    const size_t header_len = 4 + 4 * static_cast<size_t>(ndim);
    if (bytes.size() < header_len)
        throw IoError("truncated IDX file '" + path + "': expected at least " +
                      std::to_string(header_len) + " bytes, got " +
                      std::to_string(bytes.size()));
    for (int i = 0; i < ndim; ++i) h.dims.push_back(be32(bytes.data() + 4 + 4 * i));
    std::size_t payload = 1;
    for (auto d : h.dims) payload *= d;
    const std::size_t expected = header_len + payload;
    if (bytes.size() != expected)
        throw IoError("truncated IDX file '" + path + "': expected " +
                      std::to_string(expected) + " bytes, got " + std::to_string(bytes.size()));
    return h;
}

} // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img_bytes = read_all(images_path);
    const IdxHeader img_h = parse_idx_header(img_bytes, images_path);
    if (img_h.dims.size() != 3)
        throw IoError("IDX image file '" + images_path + "' must have 3 dims, got " +
                      std::to_string(img_h.dims.size()));
    const auto lbl_bytes = read_all(labels_path);
    const IdxHeader lbl_h = parse_idx_header(lbl_bytes, labels_path);
    if (lbl_h.dims.size() != 1)
        throw IoError("IDX label file '" + labels_path + "' must have 1 dim, got " +
                      std::to_string(lbl_h.dims.size()));
    if (img_h.dims[0] != lbl_h.dims[0])
        throw IoError("IDX count mismatch: " + std::to_string(img_h.dims[0]) + " images vs " +
                      std::to_string(lbl_h.dims[0]) + " labels");

    const std::int64_t n = img_h.dims[0];
    const std::int64_t rows = img_h.dims[1];
    const std::int64_t cols = img_h.dims[2];
    Dataset ds;
    ds.images = Tensor({n, 1, rows, cols}, DType::kF32);
    const std::uint8_t* px = img_bytes.data() + 4 + 4 * 3;
    for (std::int64_t i = 0; i < ds.images.numel(); ++i)
        ds.images[i] = static_cast<double>(static_cast<float>(px[i] / 255.0f));
    const std::uint8_t* lb = lbl_bytes.data() + 4 + 4 * 1;
    ds.labels.resize(static_cast<size_t>(n));
    int max_label = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        ds.labels[static_cast<size_t>(i)] = lb[i];
        max_label = std::max(max_label, int(lb[i]));
    }
    ds.classes = max_label + 1;
    ds.tag = images_path;
    return ds;
}

Dataset make_blobs(long n, int classes, int dim, double spread, std::uint64_t seed) {
    if (classes < 2) throw ConfigError("make_blobs: classes must be >= 2");
    if (dim < 2) throw ConfigError("make_blobs: dim must be >= 2");
    if (n < 1) throw ConfigError("make_blobs: n must be >= 1");
    if (!(spread > 0)) throw ConfigError("make_blobs: spread must be positive");

    const double pi = 3.14159265358979323846;
    const double radius = 2.0 * spread / std::sin(pi / static_cast<double>(classes));
    std::vector<std::vector<double>> centers(static_cast<size_t>(classes),
                                             std::vector<double>(static_cast<size_t>(dim), 0.0));
    for (int k = 0; k < classes; ++k) {
        const double theta = 2.0 * pi * k / static_cast<double>(classes);
        centers[static_cast<size_t>(k)][0] = radius * std::cos(theta);
        centers[static_cast<size_t>(k)][1] = radius * std::sin(theta);
    }

    Dataset ds;
    ds.images = Tensor({n, 1, 1, dim});
    ds.labels.resize(static_cast<size_t>(n));
    ds.classes = classes;
    ds.tag = "blobs";
    Rng rng(seed);
    for (long i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % classes);
        ds.labels[static_cast<size_t>(i)] = label;
        for (int d = 0; d < dim; ++d)
            ds.images[i * dim + d] =
                centers[static_cast<size_t>(label)][static_cast<size_t>(d)] +
                spread * rng.normal();
    }
    return ds;
}

} // namespace daq
