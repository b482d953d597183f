#ifndef DAQ_DATASET_HPP
#define DAQ_DATASET_HPP

// Dataset ingestion: big-endian IDX image/label files (MNIST layout) and a
// synthetic Gaussian-blobs fixture for desk-scale experiments.

#include <cstdint>
#include <string>
#include <vector>

#include "daq/tensor.hpp"

namespace daq {

struct Dataset {
    Tensor images; // [N, C, H, W], values in [0, 1] for IDX data
    std::vector<int> labels;
    int classes = 0;
    std::string tag;

    std::int64_t size() const { return images.numel() ? images.dim(0) : 0; }
};

// Parses an images/labels IDX pair. Pixel bytes are scaled by 1/255 and
// stored as an F32 tensor [N,1,rows,cols]. Bad magic, truncation, and an
// image/label count mismatch raise distinct IoErrors.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Gaussian clusters with round-robin labels. Class k's center sits on a
// circle of radius 2*spread/sin(pi/classes) in the first two feature
// dimensions (zero elsewhere), so centers are >= 4*spread apart. Images come
// out as [n, 1, 1, dim].
Dataset make_blobs(long n, int classes, int dim, double spread, std::uint64_t seed);

} // namespace daq

#endif // DAQ_DATASET_HPP
