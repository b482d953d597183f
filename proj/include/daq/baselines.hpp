#ifndef DAQ_BASELINES_HPP
#define DAQ_BASELINES_HPP

// Comparison quantizers and training-time schedules: clipped STE, the
// per-cell sigmoid soft quantizer, plain and kernel soft argmax with fixed
// temperatures, linear temperature annealing, and the STE+DASR combination.
// All of them share DAQ's normalization and test-time rounding.

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "daq/dasr.hpp"
#include "daq/error.hpp"

namespace daq {

enum class QuantizerKindTag {
    kDaqAdaptive,
    kKernelSoftFixed,
    kPlainSoftFixed,
    kSigmoidSoft,
    kSte,
    kSteCombinedDasr,
    kAnnealed,
};

struct QuantizerKind {
    QuantizerKindTag tag = QuantizerKindTag::kDaqAdaptive;
    double beta = 4.0;       // fixed temperature (kernel/plain/sigmoid/ste_dasr)
    double beta_start = 2.0; // annealing endpoints
    double beta_end = 48.0;

    bool uses_fixed_beta() const {
        return tag == QuantizerKindTag::kKernelSoftFixed ||
               tag == QuantizerKindTag::kPlainSoftFixed ||
               tag == QuantizerKindTag::kSigmoidSoft ||
               tag == QuantizerKindTag::kSteCombinedDasr;
    }

    void validate() const {
        if (uses_fixed_beta() && !(beta > 0.0))
            throw ConfigError("quantizer kind '" + to_string() + "' requires beta > 0");
        if (tag == QuantizerKindTag::kAnnealed && !(beta_start < beta_end))
            throw ConfigError("annealed quantizer requires beta_start < beta_end");
    }

    std::string to_string() const {
        std::ostringstream os;
        switch (tag) {
        case QuantizerKindTag::kDaqAdaptive: return "daq";
        case QuantizerKindTag::kSte: return "ste";
        case QuantizerKindTag::kKernelSoftFixed: os << "kernel:" << beta; break;
        case QuantizerKindTag::kPlainSoftFixed: os << "plain:" << beta; break;
        case QuantizerKindTag::kSigmoidSoft: os << "sigmoid:" << beta; break;
        case QuantizerKindTag::kSteCombinedDasr: os << "ste_dasr:" << beta; break;
        case QuantizerKindTag::kAnnealed: os << "annealed:" << beta_start << ":" << beta_end; break;
        }
        return os.str();
    }

    static const char* valid_names() {
        return "daq, kernel:<beta>, plain:<beta>, sigmoid:<beta>, ste, "
               "ste_dasr[:<beta>], annealed[:<start>:<end>]";
    }

    // Accepts "daq", "ste", "kernel:4", "plain:10", "sigmoid:4",
    // "ste_dasr" (default beta 4), "annealed" or "annealed:2:48".
    static QuantizerKind parse(const std::string& text) {
        std::vector<std::string> parts;
        std::string cur;
        for (char c : text) {
            if (c == ':') { parts.push_back(cur); cur.clear(); }
            else cur.push_back(c);
        }
        parts.push_back(cur);
        const std::string& name = parts[0];
        auto num = [&](size_t i, double fallback) {
            if (parts.size() <= i || parts[i].empty()) return fallback;
            try {
                size_t pos = 0;
                double v = std::stod(parts[i], &pos);
                if (pos != parts[i].size()) throw std::invalid_argument(parts[i]);
                return v;
            } catch (const std::exception&) {
                throw ConfigError("bad numeric parameter '" + parts[i] + "' in quantizer '" +
                                  text + "'");
            }
        };
        QuantizerKind k;
        if (name == "daq") k.tag = QuantizerKindTag::kDaqAdaptive;
        else if (name == "ste") k.tag = QuantizerKindTag::kSte;
        else if (name == "kernel") { k.tag = QuantizerKindTag::kKernelSoftFixed; k.beta = num(1, 4.0); }
        else if (name == "plain") { k.tag = QuantizerKindTag::kPlainSoftFixed; k.beta = num(1, 10.0); }
        else if (name == "sigmoid") { k.tag = QuantizerKindTag::kSigmoidSoft; k.beta = num(1, 4.0); }
        else if (name == "ste_dasr") { k.tag = QuantizerKindTag::kSteCombinedDasr; k.beta = num(1, 4.0); }
        else if (name == "annealed") {
            k.tag = QuantizerKindTag::kAnnealed;
            k.beta_start = num(1, 2.0);
            k.beta_end = num(2, 48.0);
        } else {
            throw ConfigError("unknown quantizer '" + text + "'; valid: " +
                              std::string(valid_names()));
        }
        k.validate();
        return k;
    }
};

// Round-half-down staircase on the normalized value; the shared test-time
// discretizer and the forward of every staircase-forward kind.
template <typename Real>
Real rounding_output(Real x, const QuantizerSpec& spec) {
    const CellContext<Real> ctx = cell_context(x, spec);
    return (x <= ctx.transition) ? Real(ctx.q_floor) : Real(ctx.q_ceil);
}

template <typename Real>
struct SteResult {
    Real q = 0;
    NormalizeGrads<Real> grads; // identity through the rounding, clipped outside [l,u]
};

// Clipped STE: exact staircase forward, derivative of normalize alone in the
// backward pass.
template <typename Real>
SteResult<Real> ste_forward_backward(Real xhat, const QuantizerParams& params,
                                     const QuantizerSpec& spec) {
    SteResult<Real> r;
    const Real x = normalize(xhat, params, spec);
    r.q = rounding_output(x, spec);
    r.grads = normalize_grads(xhat, params, spec);
    return r;
}

// Per-cell shifted sigmoid between adjacent levels (QNet-style shape).
template <typename Real>
Real sigmoid_soft(Real x, Real beta, const CellContext<Real>& ctx) {
    return Real(ctx.q_floor) + detail::stable_sigmoid(beta * (x - ctx.transition));
}

template <typename Real>
Real sigmoid_soft_grad_x(Real x, Real beta, const CellContext<Real>& ctx) {
    const Real m = detail::stable_sigmoid(beta * (x - ctx.transition));
    return beta * m * (Real(1) - m);
}

// Kernel soft argmax with the kernel replaced by the constant 1.
template <typename Real>
Real plain_soft_argmax(Real x, Real beta, const CellContext<Real>& ctx,
                       const QuantizerSpec& /*spec*/) {
    const Real df = distance_score(x, ctx.q_floor);
    const Real dc = distance_score(x, ctx.q_ceil);
    return Real(ctx.q_floor) + detail::stable_sigmoid(beta * (dc - df));
}

template <typename Real>
Real plain_soft_argmax_grad_x(Real x, Real beta, const CellContext<Real>& ctx,
                              const QuantizerSpec& /*spec*/) {
    const Real df = distance_score(x, ctx.q_floor);
    const Real dc = distance_score(x, ctx.q_ceil);
    const Real mc = detail::stable_sigmoid(beta * (dc - df));
    const Real ddf = df * detail::sign_away_from(x, ctx.q_floor);
    const Real ddc = dc * detail::sign_away_from(x, ctx.q_ceil);
    return beta * mc * (Real(1) - mc) * (ddc - ddf);
}

// Linear ramp of the temperature across training epochs.
inline double anneal_schedule(int epoch, int total_epochs, const QuantizerKind& kind) {
    if (epoch < 0 || epoch >= total_epochs)
        throw ContractError("anneal_schedule: epoch " + std::to_string(epoch) +
                            " outside [0, " + std::to_string(total_epochs) + ")");
    if (total_epochs == 1) return kind.beta_end;
    const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs - 1);
    return kind.beta_start + (kind.beta_end - kind.beta_start) * t;
}

template <typename Real>
struct SteCombinedResult {
    Real q = 0;
    DaqGrads<Real> grads;
};

// Discrete rounding forward, rescaled DASR derivative (at a fixed beta)
// backward.
template <typename Real>
SteCombinedResult<Real> ste_combined_dasr(Real xhat, const QuantizerParams& params,
                                          const QuantizerSpec& spec, Real beta) {
    if (!(beta > 0)) throw ContractError("ste_combined_dasr: beta must be positive");
    SteCombinedResult<Real> r;
    const Real x = normalize(xhat, params, spec);
    const CellContext<Real> ctx = cell_context(x, spec);
    r.q = rounding_output(x, spec);
    const NormalizeGrads<Real> ng = normalize_grads(xhat, params, spec);
    const Real lambda = Real(spec.lambda());
    const Real local = soft_assignment_grad_x(x, beta, ctx, spec) /
                       (Real(1) - Real(2) * lambda);
    r.grads.d_input = local * ng.d_input;
    r.grads.d_lower = local * ng.d_lower;
    r.grads.d_upper = local * ng.d_upper;
    return r;
}

// Training-time forward on the normalized domain. Staircase kinds (daq, ste,
// ste_dasr) emit the exact grid value; soft kinds emit their relaxation.
// anneal_beta supplies the current schedule value for the annealed kind;
// outside training it defaults to the converged beta_end.
template <typename Real>
Real training_time_value(const QuantizerKind& kind, Real x, const QuantizerSpec& spec,
                         double anneal_beta = -1.0) {
    const CellContext<Real> ctx = cell_context(x, spec);
    switch (kind.tag) {
    case QuantizerKindTag::kDaqAdaptive:
    case QuantizerKindTag::kSte:
    case QuantizerKindTag::kSteCombinedDasr:
        return rounding_output(x, spec);
    case QuantizerKindTag::kKernelSoftFixed:
        return soft_assignment(x, Real(kind.beta), ctx, spec);
    case QuantizerKindTag::kPlainSoftFixed:
        return plain_soft_argmax(x, Real(kind.beta), ctx, spec);
    case QuantizerKindTag::kSigmoidSoft:
        return sigmoid_soft(x, Real(kind.beta), ctx);
    case QuantizerKindTag::kAnnealed: {
        const Real b = Real(anneal_beta > 0 ? anneal_beta : kind.beta_end);
        return soft_assignment(x, b, ctx, spec);
    }
    }
    throw ContractError("training_time_value: unhandled kind");
}

// Derivative (w.r.t. the normalized input) of the function each kind's
// backward pass uses.
template <typename Real>
Real training_time_grad_x(const QuantizerKind& kind, Real x, const QuantizerSpec& spec,
                          double anneal_beta = -1.0) {
    const CellContext<Real> ctx = cell_context(x, spec);
    const Real f_prime = Real(1) / (Real(1) - Real(2) * Real(spec.lambda()));
    switch (kind.tag) {
    case QuantizerKindTag::kDaqAdaptive: {
        const Real beta_star = adaptive_temperature(x, ctx, spec);
        return f_prime * soft_assignment_grad_x(x, beta_star, ctx, spec);
    }
    case QuantizerKindTag::kSte:
        return Real(1);
    case QuantizerKindTag::kSteCombinedDasr:
        return f_prime * soft_assignment_grad_x(x, Real(kind.beta), ctx, spec);
    case QuantizerKindTag::kKernelSoftFixed:
        return soft_assignment_grad_x(x, Real(kind.beta), ctx, spec);
    case QuantizerKindTag::kPlainSoftFixed:
        return plain_soft_argmax_grad_x(x, Real(kind.beta), ctx, spec);
    case QuantizerKindTag::kSigmoidSoft:
        return sigmoid_soft_grad_x(x, Real(kind.beta), ctx);
    case QuantizerKindTag::kAnnealed: {
        const Real b = Real(anneal_beta > 0 ? anneal_beta : kind.beta_end);
        return soft_assignment_grad_x(x, b, ctx, spec);
    }
    }
    throw ContractError("training_time_grad_x: unhandled kind");
}

struct GapReport {
    double mean = 0;
    double max = 0;
};

// Mean |training-time forward - rounding| over an equally spaced sweep of the
// normalized range (midpoint rule, so kinks never land on a sample).
inline GapReport quantizer_gap_report(const QuantizerKind& kind, const QuantizerSpec& spec,
                                      long n_samples, double anneal_beta = -1.0) {
    if (n_samples < 1) throw ContractError("quantizer_gap: n_samples must be >= 1");
    const double top = static_cast<double>(spec.qmax());
    GapReport rep;
    double sum = 0;
    for (long i = 0; i < n_samples; ++i) {
        const double x = top * (static_cast<double>(i) + 0.5) / static_cast<double>(n_samples);
        const double soft = training_time_value(kind, x, spec, anneal_beta);
        const double hard = rounding_output(x, spec);
        const double dev = std::abs(soft - hard);
        sum += dev;
        rep.max = std::max(rep.max, dev);
    }
    rep.mean = sum / static_cast<double>(n_samples);
    return rep;
}

inline double quantizer_gap(const QuantizerKind& kind, const QuantizerSpec& spec,
                            long n_samples) {
    return quantizer_gap_report(kind, spec, n_samples).mean;
}

} // namespace daq

#endif // DAQ_BASELINES_HPP
