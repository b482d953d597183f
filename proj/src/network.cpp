#include "daq/network.hpp"

#include <cmath>

#include "daq/rng.hpp"

namespace daq {

namespace {

std::string layer_prefix(size_t i) { return "layer" + std::to_string(i); }

} // namespace

Network Network::build(std::vector<LayerSpec> specs, std::uint64_t seed) {
    Network net;
    Rng rng(seed);
    for (size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& ls = specs[i];
        Layer layer;
        layer.spec = ls;
        if (ls.kind == LayerKind::kDense) {
            if (ls.in < 1 || ls.out < 1) throw ConfigError("dense layer needs in/out dims");
            Rng lr = rng.fork(i);
            const double stddev = std::sqrt(2.0 / static_cast<double>(ls.in));
            layer.weight = Tensor::randn({ls.out, ls.in}, lr, stddev);
            layer.bias = Tensor::zeros({ls.out});
        } else if (ls.kind == LayerKind::kConv2d) {
            if (ls.in < 1 || ls.out < 1 || ls.kernel < 1)
                throw ConfigError("conv layer needs channels and kernel size");
            Rng lr = rng.fork(i);
            const double fan_in = static_cast<double>(ls.in * ls.kernel * ls.kernel);
            layer.weight = Tensor::randn({ls.out, ls.in, ls.kernel, ls.kernel}, lr,
                                         std::sqrt(2.0 / fan_in));
            layer.bias = Tensor::zeros({ls.out});
        }
        if (ls.weighted() && ls.quantizes_weights()) {
            QuantizerSlot slot;
            slot.spec = QuantizerSpec::for_role(Role::kWeight, ls.bits_w);
            slot.kind = *ls.weight_quantizer;
            layer.wq = slot;
        }
        if (ls.weighted() && ls.quantizes_activations()) {
            QuantizerSlot slot;
            slot.spec = QuantizerSpec::for_role(Role::kActivation, ls.bits_a);
            slot.kind = *ls.activation_quantizer;
            layer.aq = slot;
        }
        net.layers_.push_back(std::move(layer));
    }
    return net;
}

bool Network::input_is_relu(size_t layer_index) const {
    for (size_t j = layer_index; j-- > 0;) {
        if (layers_[j].spec.kind == LayerKind::kFlatten) continue;
        return layers_[j].spec.kind == LayerKind::kRelu;
    }
    return false;
}

ForwardResult Network::forward(Tape& tape, const Tensor& input,
                               const ForwardOptions& opt) const {
    ForwardResult res;
    ValueId cur = tape.leaf(input);
    for (size_t i = 0; i < layers_.size(); ++i) {
        const Layer& layer = layers_[i];
        const std::string prefix = layer_prefix(i);
        switch (layer.spec.kind) {
        case LayerKind::kRelu:
            cur = tape.relu(cur);
            break;
        case LayerKind::kFlatten:
            cur = tape.flatten(cur);
            break;
        case LayerKind::kDense:
        case LayerKind::kConv2d: {
            res.layer_inputs.emplace_back(prefix, cur);
            const ValueId w_leaf = tape.leaf(layer.weight);
            const ValueId b_leaf = tape.leaf(layer.bias);
            res.param_ids[prefix + ".W"] = w_leaf;
            res.param_ids[prefix + ".b"] = b_leaf;

            ValueId w_in = w_leaf;
            ValueId x_in = cur;
            const bool quantizing = layer.quantized() && !opt.bypass_quantizers;
            auto slot_beta = [&](const QuantizerSlot& q) {
                if (q.kind.tag == QuantizerKindTag::kAnnealed && opt.epoch >= 0 &&
                    opt.total_epochs > 0)
                    return anneal_schedule(opt.epoch, opt.total_epochs, q.kind);
                return opt.anneal_beta;
            };
            if (quantizing && layer.wq) {
                const QuantizerSlot& q = *layer.wq;
                const ValueId lo = tape.leaf(q.lower);
                const ValueId hi = tape.leaf(q.upper);
                res.param_ids[prefix + ".wq.lower"] = lo;
                res.param_ids[prefix + ".wq.upper"] = hi;
                const ValueId wstd = tape.weight_standardize(w_leaf);
                const std::string slot = prefix + ".wq";
                const std::vector<QuantSavedElem>* frozen =
                    opt.frozen ? &opt.frozen->at(slot) : nullptr;
                const ValueId grid = tape.quantize(wstd, lo, hi, q.spec, q.kind, opt.mode,
                                                   slot_beta(q), frozen);
                res.quant_nodes.emplace_back(slot, grid);
                w_in = tape.affine(grid, scale_quantized_slope<double>(q.spec), -1.0);
            }
            if (quantizing && layer.aq) {
                const QuantizerSlot& q = *layer.aq;
                const ValueId lo = tape.leaf(q.lower);
                const ValueId hi = tape.leaf(q.upper);
                res.param_ids[prefix + ".aq.lower"] = lo;
                res.param_ids[prefix + ".aq.upper"] = hi;
                const std::string slot = prefix + ".aq";
                const std::vector<QuantSavedElem>* frozen =
                    opt.frozen ? &opt.frozen->at(slot) : nullptr;
                const ValueId grid = tape.quantize(cur, lo, hi, q.spec, q.kind, opt.mode,
                                                   slot_beta(q), frozen);
                res.quant_nodes.emplace_back(slot, grid);
                x_in = tape.affine(grid, scale_quantized_slope<double>(q.spec), 0.0);
            }

            ValueId y;
            if (layer.spec.kind == LayerKind::kDense) {
                y = quantizing ? tape.dense(x_in, w_in) : tape.dense(x_in, w_in, b_leaf);
            } else {
                y = tape.conv2d(x_in, w_in, quantizing ? Tape::kNoBias : b_leaf,
                                layer.spec.stride, layer.spec.pad);
            }
            if (quantizing) {
                const ValueId s_leaf = tape.leaf(layer.scale);
                res.param_ids[prefix + ".s"] = s_leaf;
                y = tape.scale_by(y, s_leaf);
                y = tape.bias_add(y, b_leaf);
            }
            cur = y;
            break;
        }
        }
    }
    res.logits = cur;
    return res;
}

std::vector<Network::ParamRef> Network::all_params() {
    std::vector<ParamRef> out;
    for (size_t i = 0; i < layers_.size(); ++i) {
        Layer& layer = layers_[i];
        if (!layer.spec.weighted()) continue;
        const std::string prefix = layer_prefix(i);
        out.push_back({prefix + ".W", &layer.weight, false});
        out.push_back({prefix + ".b", &layer.bias, false});
        if (layer.quantized()) out.push_back({prefix + ".s", &layer.scale, true});
        if (layer.wq) {
            out.push_back({prefix + ".wq.lower", &layer.wq->lower, true});
            out.push_back({prefix + ".wq.upper", &layer.wq->upper, true});
        }
        if (layer.aq) {
            out.push_back({prefix + ".aq.lower", &layer.aq->lower, true});
            out.push_back({prefix + ".aq.upper", &layer.aq->upper, true});
        }
    }
    return out;
}

std::vector<Network::ParamRef> Network::trainable_params() {
    std::vector<ParamRef> out;
    for (size_t i = 0; i < layers_.size(); ++i) {
        Layer& layer = layers_[i];
        if (!layer.spec.weighted()) continue;
        const std::string prefix = layer_prefix(i);
        out.push_back({prefix + ".W", &layer.weight, false});
        out.push_back({prefix + ".b", &layer.bias, false});
        if (layer.quantized()) out.push_back({prefix + ".s", &layer.scale, true});
        if (layer.wq) {
            if (layer.wq->learn_lower)
                out.push_back({prefix + ".wq.lower", &layer.wq->lower, true});
            out.push_back({prefix + ".wq.upper", &layer.wq->upper, true});
        }
        if (layer.aq) {
            if (layer.aq->learn_lower)
                out.push_back({prefix + ".aq.lower", &layer.aq->lower, true});
            out.push_back({prefix + ".aq.upper", &layer.aq->upper, true});
        }
    }
    return out;
}

void init_quantizers(Network& net, const Tensor& calibration_batch, std::ostream* warn_log) {
    if (calibration_batch.numel() == 0)
        throw ContractError("init_quantizers: empty calibration batch");
    Tape tape;
    ForwardOptions opt;
    opt.bypass_quantizers = true;
    const ForwardResult res = net.forward(tape, calibration_batch, opt);

    std::map<std::string, ValueId> inputs(res.layer_inputs.begin(), res.layer_inputs.end());
    auto& layers = net.layers();
    for (size_t i = 0; i < layers.size(); ++i) {
        Layer& layer = layers[i];
        if (layer.wq) {
            layer.wq->lower = Tensor::scalar(-3.0);
            layer.wq->upper = Tensor::scalar(3.0);
            layer.wq->learn_lower = true;
        }
        if (layer.aq) {
            const Tensor& act = tape.value(inputs.at("layer" + std::to_string(i)));
            double mean = 0;
            for (std::int64_t k = 0; k < act.numel(); ++k) mean += act[k];
            mean /= static_cast<double>(act.numel());
            double var = 0;
            for (std::int64_t k = 0; k < act.numel(); ++k)
                var += (act[k] - mean) * (act[k] - mean);
            var /= static_cast<double>(act.numel());
            double sigma = std::sqrt(var);
            if (sigma == 0.0) {
                sigma = 1.0;
                if (warn_log)
                    *warn_log << "warning: layer" << i
                              << " activation calibration has zero variance; using sigma=1\n";
            }
            if (net.input_is_relu(i)) {
                layer.aq->lower = Tensor::scalar(0.0);
                layer.aq->learn_lower = false;
            } else {
                layer.aq->lower = Tensor::scalar(-3.0 * sigma);
                layer.aq->learn_lower = true;
            }
            layer.aq->upper = Tensor::scalar(3.0 * sigma);
        }
        if (layer.quantized()) layer.scale = Tensor::scalar(1.0);
    }
}

} // namespace daq
