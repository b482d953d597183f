#include <cmath>

#include "daq/tape.hpp"

namespace daq {

namespace {

// Derivative w.r.t. the normalized input of the function whose gradient the
// kind's backward pass propagates, evaluated at the saved context.
double local_grad_x(const QuantizerKind& kind, const QuantizerSpec& spec,
                    const QuantSavedElem& e) {
    const double f_prime = 1.0 / (1.0 - 2.0 * spec.lambda());
    switch (kind.tag) {
    case QuantizerKindTag::kDaqAdaptive:
    case QuantizerKindTag::kSteCombinedDasr:
        return f_prime * soft_assignment_grad_x(e.x, e.beta, e.ctx, spec);
    case QuantizerKindTag::kSte:
        return 1.0;
    case QuantizerKindTag::kKernelSoftFixed:
    case QuantizerKindTag::kAnnealed:
        return soft_assignment_grad_x(e.x, e.beta, e.ctx, spec);
    case QuantizerKindTag::kPlainSoftFixed:
        return plain_soft_argmax_grad_x(e.x, e.beta, e.ctx, spec);
    case QuantizerKindTag::kSigmoidSoft:
        return sigmoid_soft_grad_x(e.x, e.beta, e.ctx);
    }
    throw ContractError("local_grad_x: unhandled kind");
}

double pick_beta(const QuantizerKind& kind, double anneal_beta, const QuantSavedElem& e,
                 const QuantizerSpec& spec) {
    switch (kind.tag) {
    case QuantizerKindTag::kDaqAdaptive:
        return adaptive_temperature(e.x, e.ctx, spec);
    case QuantizerKindTag::kSte:
        return 0.0;
    case QuantizerKindTag::kAnnealed:
        return anneal_beta > 0 ? anneal_beta : kind.beta_end;
    default:
        return kind.beta;
    }
}

} // namespace

ValueId Tape::quantize(ValueId x, ValueId lower, ValueId upper, const QuantizerSpec& spec,
                       const QuantizerKind& kind, QuantizeMode mode, double anneal_beta,
                       const std::vector<QuantSavedElem>* frozen) {
    spec.validate();
    kind.validate();
    const Tensor& vx = value(x);
    if (value(lower).numel() != 1 || value(upper).numel() != 1)
        throw ShapeError("quantize: lower/upper must be 1-element tensors");
    if (mode == QuantizeMode::kSurrogate &&
        (!frozen || static_cast<std::int64_t>(frozen->size()) != vx.numel()))
        throw ContractError("quantize: surrogate mode needs frozen contexts matching the input");
    QuantizerParams params;
    params.lower = value(lower)[0];
    params.upper = value(upper)[0];
    params.validate();

    Tensor out(vx.shape());
    std::vector<QuantSavedElem> saved(static_cast<size_t>(vx.numel()));
    for (std::int64_t i = 0; i < vx.numel(); ++i) {
        QuantSavedElem& e = saved[static_cast<size_t>(i)];
        e.x = normalize(vx[i], params, spec);
        e.ctx = cell_context(e.x, spec);
        e.ngrads = normalize_grads(vx[i], params, spec);
        switch (mode) {
        case QuantizeMode::kRounding:
            e.beta = pick_beta(kind, anneal_beta, e, spec);
            out[i] = rounding_output(e.x, spec);
            break;
        case QuantizeMode::kTraining:
            e.beta = pick_beta(kind, anneal_beta, e, spec);
            out[i] = training_time_value(kind, e.x, spec, e.beta);
            break;
        case QuantizeMode::kSurrogate: {
            // the node *is* the frozen surrogate: its backward must
            // differentiate the same frozen cell and temperature
            const QuantSavedElem& fz = (*frozen)[static_cast<size_t>(i)];
            e.ctx = fz.ctx;
            e.beta = fz.beta;
            out[i] = quantize_surrogate(kind, spec, fz, vx[i], params.lower, params.upper);
            break;
        }
        }
    }

    ValueId id = push(std::move(out), "quantize", {x, lower, upper}, {});
    quant_saved_[id] = std::move(saved);
    nodes_.back().back = [this, id, x, lower, upper, spec, kind]() {
        const Tensor& g = grads_[static_cast<size_t>(id)];
        Tensor& gx = grads_[static_cast<size_t>(x)];
        Tensor& gl = grads_[static_cast<size_t>(lower)];
        Tensor& gu = grads_[static_cast<size_t>(upper)];
        const std::vector<QuantSavedElem>& sv = quant_saved_.at(id);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            const QuantSavedElem& e = sv[static_cast<size_t>(i)];
            const double local = g[i] * local_grad_x(kind, spec, e);
            gx[i] += local * e.ngrads.d_input;
            gl[0] += local * e.ngrads.d_lower;
            gu[0] += local * e.ngrads.d_upper;
        }
    };
    return id;
}

double quantize_surrogate(const QuantizerKind& kind, const QuantizerSpec& spec,
                          const QuantSavedElem& saved, double xhat, double lower,
                          double upper) {
    QuantizerParams params;
    params.lower = lower;
    params.upper = upper;
    const double x = normalize(xhat, params, spec);
    switch (kind.tag) {
    case QuantizerKindTag::kDaqAdaptive:
    case QuantizerKindTag::kSteCombinedDasr:
        return rescale(soft_assignment(x, saved.beta, saved.ctx, spec), saved.ctx, spec);
    case QuantizerKindTag::kSte:
        return x;
    case QuantizerKindTag::kKernelSoftFixed:
    case QuantizerKindTag::kAnnealed:
        return soft_assignment(x, saved.beta, saved.ctx, spec);
    case QuantizerKindTag::kPlainSoftFixed:
        return plain_soft_argmax(x, saved.beta, saved.ctx, spec);
    case QuantizerKindTag::kSigmoidSoft:
        return sigmoid_soft(x, saved.beta, saved.ctx);
    }
    throw ContractError("quantize_surrogate: unhandled kind");
}

} // namespace daq
