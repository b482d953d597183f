#ifndef DAQ_CONFIG_HPP
#define DAQ_CONFIG_HPP

// Experiment configuration: flat dotted keys in a plain text file
// ("section.key = value", '#' comments), every key overridable by a CLI flag
// of the same name. Validated before any compute.

#include <cstdint>
#include <string>
#include <vector>

#include "daq/baselines.hpp"
#include "daq/network.hpp"

namespace daq {

struct RunConfig {
    // network
    std::string network_kind = "mlp"; // mlp | conv
    std::vector<int> hidden = {64, 64};
    bool quantize_all = false;

    // dataset
    std::string dataset_kind = "blobs"; // blobs | idx
    long blobs_n = 800;
    long blobs_val_n = 200;
    int blobs_classes = 4;
    int blobs_dim = 16;
    double blobs_spread = 1.0;
    std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;

    // quantization (32 = full precision)
    int bits_w = 1;
    int bits_a = 32;
    std::string weight_kind = "daq";
    std::string act_kind = "daq";

    // training
    int epochs = 60;
    int batch_size = 32;
    double lr_weights = 1e-2;
    double lr_quant = 1e-4;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::uint64_t seed = 1;
    std::string init_checkpoint;

    std::string out_dir = ".";
    bool quiet = false;

    void validate() const;
    void set(const std::string& key, const std::string& value); // throws on unknown key
    static RunConfig from_file(const std::string& path);
    static const std::vector<std::string>& keys();

    QuantizerKind parsed_weight_kind() const { return QuantizerKind::parse(weight_kind); }
    QuantizerKind parsed_act_kind() const { return QuantizerKind::parse(act_kind); }

    // Expands the config into the layer stack (needs the dataset geometry).
    std::vector<LayerSpec> layer_specs(std::int64_t channels, std::int64_t height,
                                       std::int64_t width, int classes) const;
};

} // namespace daq

#endif // DAQ_CONFIG_HPP
