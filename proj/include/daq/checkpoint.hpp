#ifndef DAQ_CHECKPOINT_HPP
#define DAQ_CHECKPOINT_HPP

// Self-describing binary checkpoint container, little-endian throughout:
//
//   "DAQCKPT\0"  magic
//   u32 version, u64 seed, u32 epoch
//   u32 tensor count
//     per tensor: u32 name length, name bytes, u8 dtype (0=f32, 1=f64),
//                 u8 ndim, u32 dims[ndim], raw element data
//   u32 quantizer record count
//     per record: u32 name length, name bytes, f64 lower, f64 upper,
//                 f64 conv scale, u8 learn_lower

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "daq/network.hpp"
#include "daq/tensor.hpp"

namespace daq {

struct QuantParamRecord {
    std::string name; // "layerN.wq" or "layerN.aq" or "layerN" for the scale
    double lower = 0;
    double upper = 0;
    double conv_scale = 1;
    bool learn_lower = true;
};

struct Checkpoint {
    std::uint32_t version = 1;
    std::uint64_t seed = 0;
    std::uint32_t epoch = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::vector<QuantParamRecord> quant_params;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    static Checkpoint from_network(const Network& net, std::uint64_t seed,
                                   std::uint32_t epoch);
    // Copies stored tensors and quantizer records into a built network;
    // throws on missing names or shape mismatches.
    void apply_to(Network& net) const;
};

} // namespace daq

#endif // DAQ_CHECKPOINT_HPP
