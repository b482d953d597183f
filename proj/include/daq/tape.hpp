#ifndef DAQ_TAPE_HPP
#define DAQ_TAPE_HPP

// Reverse-mode autodiff over a fixed operator set. Values are recorded in
// creation order (already a topological order), backward runs one reverse
// sweep and accumulates gradients by addition, so fan-out just works.
// Quantizer nodes carry custom gradients and save their per-element contexts
// at forward time.

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "daq/baselines.hpp"
#include "daq/dasr.hpp"
#include "daq/tensor.hpp"

namespace daq {

using ValueId = std::int32_t;

// Per-element context saved by a quantizer node for its backward pass.
struct QuantSavedElem {
    double x = 0; // normalized input
    CellContext<double> ctx;
    double beta = 0; // beta* for daq, the fixed/scheduled beta otherwise, 0 for ste
    NormalizeGrads<double> ngrads;
};

enum class QuantizeMode {
    kTraining,  // each kind's training-time forward (staircase for daq/ste/ste_dasr)
    kRounding,  // test-time discretizer for every kind
    kSurrogate, // the smooth function backward differentiates, at frozen contexts
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    ValueId leaf(const Tensor& t);

    ValueId add(ValueId a, ValueId b);
    ValueId mul(ValueId a, ValueId b);
    ValueId sum(ValueId a);
    ValueId relu(ValueId x);
    ValueId flatten(ValueId x);
    ValueId dense(ValueId x, ValueId w, ValueId b = kNoBias);
    ValueId conv2d(ValueId x, ValueId w, ValueId b, int stride, int pad);
    ValueId bias_add(ValueId x, ValueId b); // broadcast over rows (2-d) or channels (4-d)
    ValueId weight_standardize(ValueId w);
    ValueId scale_by(ValueId x, ValueId s); // s is a 1-element tensor
    ValueId affine(ValueId x, double slope, double intercept);
    ValueId softmax_cross_entropy(ValueId logits, const std::vector<int>& labels);

    // Custom-gradient quantizer node: normalize + kind-specific forward on
    // element level, lower/upper as 1-element parameter tensors. anneal_beta
    // feeds the annealed kind's current schedule value; frozen supplies the
    // saved contexts required by kSurrogate.
    ValueId quantize(ValueId x, ValueId lower, ValueId upper, const QuantizerSpec& spec,
                     const QuantizerKind& kind, QuantizeMode mode, double anneal_beta = -1.0,
                     const std::vector<QuantSavedElem>* frozen = nullptr);

    static constexpr ValueId kNoBias = -1;

    void backward(ValueId loss);

    const Tensor& value(ValueId id) const { return values_.at(static_cast<size_t>(id)); }
    const Tensor& grad(ValueId id) const;
    const std::vector<QuantSavedElem>& quantize_saved(ValueId quantize_output) const;

    size_t size() const { return values_.size(); }

private:
    struct Node {
        std::string op;
        std::vector<ValueId> inputs;
        std::function<void()> back; // empty for leaves
    };

    ValueId push(Tensor value, std::string op, std::vector<ValueId> inputs,
                 std::function<void()> back);
    void check_same_shape(const char* op, ValueId a, ValueId b) const;

    std::vector<Tensor> values_;
    std::vector<Tensor> grads_;
    std::vector<Node> nodes_;
    std::unordered_map<ValueId, std::vector<QuantSavedElem>> quant_saved_;
    bool backward_done_ = false;
};

// Evaluates the smooth surrogate a quantizer node's backward pass
// differentiates, using contexts frozen from a previous forward: daq and
// ste_dasr rescale the soft assignment at the frozen temperature, ste is the
// identity on the normalized value, soft kinds are their own forward.
// Used by finite-difference audits.
double quantize_surrogate(const QuantizerKind& kind, const QuantizerSpec& spec,
                          const QuantSavedElem& saved, double xhat, double lower, double upper);

} // namespace daq

#endif // DAQ_TAPE_HPP
