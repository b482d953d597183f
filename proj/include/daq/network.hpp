#ifndef DAQ_NETWORK_HPP
#define DAQ_NETWORK_HPP

// Layer descriptions and the network container: owns the parameter tensors,
// builds the tape graph for a batch, and exposes named parameters for the
// optimizers and checkpoints. Quantized layers run
//   o = s * (scale(Q(standardize(W))) (*) scale(Q(a))) + bias
// with the weight/activation scaling of the target ranges [-1,1] / [0,1].

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "daq/tape.hpp"
#include "daq/tensor.hpp"

namespace daq {

enum class LayerKind { kDense, kConv2d, kRelu, kFlatten };

struct LayerSpec {
    LayerKind kind = LayerKind::kDense;
    std::int64_t in = 0, out = 0; // features (dense) or channels (conv)
    int kernel = 3, stride = 1, pad = 1;
    std::optional<QuantizerKind> weight_quantizer;
    std::optional<QuantizerKind> activation_quantizer;
    int bits_w = 32, bits_a = 32; // 32 = full precision

    bool weighted() const { return kind == LayerKind::kDense || kind == LayerKind::kConv2d; }
    bool quantizes_weights() const { return weight_quantizer.has_value() && bits_w != 32; }
    bool quantizes_activations() const {
        return activation_quantizer.has_value() && bits_a != 32;
    }
};

struct QuantizerSlot {
    QuantizerSpec spec;
    QuantizerKind kind;
    Tensor lower = Tensor::scalar(-3.0);
    Tensor upper = Tensor::scalar(3.0);
    bool learn_lower = true;
};

struct Layer {
    LayerSpec spec;
    Tensor weight; // empty shape for relu/flatten
    Tensor bias;
    Tensor scale = Tensor::scalar(1.0); // conv-output scale s, used iff quantized()
    std::optional<QuantizerSlot> wq;
    std::optional<QuantizerSlot> aq;

    bool quantized() const { return wq.has_value() || aq.has_value(); }
};

struct ForwardOptions {
    QuantizeMode mode = QuantizeMode::kTraining;
    bool bypass_quantizers = false; // plain full-precision pass
    double anneal_beta = -1.0;      // direct override for annealed slots
    int epoch = -1;                 // when set with total_epochs, annealed slots
    int total_epochs = -1;          //   derive their beta from the schedule
    // slot name -> frozen per-element contexts, required by kSurrogate
    const std::map<std::string, std::vector<QuantSavedElem>>* frozen = nullptr;
};

struct ForwardResult {
    ValueId logits = -1;
    std::map<std::string, ValueId> param_ids;                  // name -> leaf id
    std::vector<std::pair<std::string, ValueId>> quant_nodes;  // slot name -> quantize output
    std::vector<std::pair<std::string, ValueId>> layer_inputs; // "layerN" -> input value
};

class Network {
public:
    // Builds tensors for the given layer stack; weights use He-normal init
    // (one rng stream per layer), biases start at zero.
    static Network build(std::vector<LayerSpec> specs, std::uint64_t seed);

    ForwardResult forward(Tape& tape, const Tensor& input, const ForwardOptions& opt) const;

    struct ParamRef {
        std::string name;
        Tensor* tensor;
        bool quantizer_param; // true for lower/upper/scale (Adam group, no weight decay)
    };
    // Trainable parameters in a fixed order; frozen lower bounds are skipped.
    std::vector<ParamRef> trainable_params();
    // Every parameter including frozen bounds, for checkpoints.
    std::vector<ParamRef> all_params();

    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }

    // True if the input of layer i is the output of a ReLU (looking through
    // flatten); used by the activation-quantizer initialization.
    bool input_is_relu(size_t layer_index) const;

private:
    std::vector<Layer> layers_;
};

// Per-spec initialization of the quantizer intervals: weight quantizers get
// (-3, 3); activation quantizers get +/-3 sigma of the layer's input
// activations on the calibration batch, with the lower bound fixed at zero
// after a ReLU. Zero-variance activations fall back to sigma=1 with a warning.
void init_quantizers(Network& net, const Tensor& calibration_batch,
                     std::ostream* warn_log = nullptr);

} // namespace daq

#endif // DAQ_NETWORK_HPP
