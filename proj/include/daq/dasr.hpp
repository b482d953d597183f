#ifndef DAQ_DASR_HPP
#define DAQ_DASR_HPP

// Distance-aware soft rounding: normalization, per-cell distance scores,
// kernel soft argmax, the adaptive temperature controller, the closed-form
// forward with its rescale, and the analytic backward pass.
//
// Everything here is a pure function of its arguments and is templated on
// the floating type so the same math can be checked in float and double.

#include <algorithm>
#include <cmath>
#include <string>

#include "daq/error.hpp"

namespace daq {

enum class Role { kWeight, kActivation };

// Static description of one quantizer.
struct QuantizerSpec {
    int bits = 8;
    double gamma = 2.0;
    double kernel_sigma = 1.0;
    Role role = Role::kWeight;
    double beta_cap = 1e6;      // upper bound on the adaptive temperature
    double denom_floor = 1e-12; // floor for the temperature denominator

    int qmax() const { return (1 << bits) - 1; }

    // Constant offset of the closed-form output, removed by rescale().
    double lambda() const { return 1.0 / (std::exp(gamma) + 1.0); }

    void validate() const {
        if (bits < 1 || bits > 8)
            throw ConfigError("quantizer bits must be in [1,8], got " + std::to_string(bits));
        if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
        if (!(kernel_sigma > 0.0)) throw ConfigError("kernel_sigma must be positive");
        if (!(beta_cap >= gamma)) throw ConfigError("beta_cap must be >= gamma");
        if (!(denom_floor > 0.0)) throw ConfigError("denom_floor must be positive");
    }

    // sigma defaults: 1 for weight quantizers, 2 for activation quantizers.
    static QuantizerSpec for_role(Role role, int bits) {
        QuantizerSpec s;
        s.bits = bits;
        s.role = role;
        s.kernel_sigma = (role == Role::kWeight) ? 1.0 : 2.0;
        s.validate();
        return s;
    }
};

// Learnable per-layer state.
struct QuantizerParams {
    double lower = -3.0;
    double upper = 3.0;
    double conv_scale = 1.0;

    void validate() const {
        if (!(upper > lower))
            throw ConfigError("quantizer interval requires upper > lower, got [" +
                              std::to_string(lower) + ", " + std::to_string(upper) + "]");
    }
};

// The two candidate grid values around a normalized input, plus the
// transition point and the kernel center.
template <typename Real>
struct CellContext {
    int q_floor = 0;
    int q_ceil = 1;
    Real transition = Real(0.5);
    int q_nearest = 0;
};

template <typename Real>
struct NormalizeGrads {
    Real d_input = 0;
    Real d_lower = 0;
    Real d_upper = 0;
};

template <typename Real>
struct DistanceProbability {
    Real m_floor = 0;
    Real m_ceil = 0;
};

namespace detail {
template <typename Real>
inline Real stable_sigmoid(Real z) {
    if (z >= 0) {
        const Real e = std::exp(-z);
        return Real(1) / (Real(1) + e);
    }
    const Real e = std::exp(z);
    return e / (Real(1) + e);
}
} // namespace detail

// Clip xhat to [l,u] and map onto [0, 2^b-1]. The final clamp keeps roundoff
// from pushing the result past the range endpoints.
template <typename Real>
Real normalize(Real xhat, const QuantizerParams& params, const QuantizerSpec& spec) {
    if (!std::isfinite(static_cast<double>(xhat)))
        throw ContractError("normalize: non-finite input");
    params.validate();
    const Real l = Real(params.lower);
    const Real u = Real(params.upper);
    const Real clipped = std::min(std::max(xhat, l), u);
    const Real x = Real(spec.qmax()) * (clipped - l) / (u - l);
    return std::min(std::max(x, Real(0)), Real(spec.qmax()));
}

// Branch-wise derivatives of normalize. Clipped inputs get zero in all three
// slots; ties xhat == l or xhat == u take the interior branch.
template <typename Real>
NormalizeGrads<Real> normalize_grads(Real xhat, const QuantizerParams& params,
                                     const QuantizerSpec& spec) {
    if (!std::isfinite(static_cast<double>(xhat)))
        throw ContractError("normalize_grads: non-finite input");
    params.validate();
    NormalizeGrads<Real> g;
    const Real l = Real(params.lower);
    const Real u = Real(params.upper);
    if (xhat < l || xhat > u) return g;
    const Real range = u - l;
    const Real levels = Real(spec.qmax());
    g.d_input = levels / range;
    g.d_lower = levels * (xhat - u) / (range * range);
    g.d_upper = -levels * (xhat - l) / (range * range);
    return g;
}

// Locate the floor/ceil candidate pair for a normalized input. The floor
// candidate is clamped to 2^b-2 so q_ceil - q_floor == 1 even at the top of
// the range; the tie x == q_t keeps the floor candidate as the kernel center.
template <typename Real>
CellContext<Real> cell_context(Real x, const QuantizerSpec& spec) {
    const Real top = Real(spec.qmax());
    if (!(x >= Real(0) && x <= top))
        throw ContractError("cell_context: normalized input " + std::to_string(double(x)) +
                            " outside [0, " + std::to_string(spec.qmax()) + "]");
    CellContext<Real> ctx;
    ctx.q_floor = std::min(static_cast<int>(std::floor(static_cast<double>(x))), spec.qmax() - 1);
    ctx.q_ceil = ctx.q_floor + 1;
    ctx.transition = Real(ctx.q_floor) + Real(0.5);
    ctx.q_nearest = (x <= ctx.transition) ? ctx.q_floor : ctx.q_ceil;
    return ctx;
}

template <typename Real>
Real distance_score(Real x, int q) {
    return std::exp(-std::abs(x - Real(q)));
}

// Unnormalized Gaussian centered on the nearest candidate: the nearest
// candidate's distance score is retained at full strength, the other one is
// suppressed by exp(-1/(2 sigma^2)).
template <typename Real>
Real kernel_weight(int q, const CellContext<Real>& ctx, const QuantizerSpec& spec) {
    if (q != ctx.q_floor && q != ctx.q_ceil)
        throw ContractError("kernel_weight: q=" + std::to_string(q) + " is not a cell candidate");
    const Real diff = Real(q - ctx.q_nearest);
    const Real sigma = Real(spec.kernel_sigma);
    return std::exp(-(diff * diff) / (Real(2) * sigma * sigma));
}

template <typename Real>
Real weighted_score(Real x, int q, const CellContext<Real>& ctx, const QuantizerSpec& spec) {
    return kernel_weight(q, ctx, spec) * distance_score(x, q);
}

// Two-way softmax over the temperature-scaled weighted scores, evaluated in
// the max-subtracted form so m_floor + m_ceil == 1 to machine precision.
template <typename Real>
DistanceProbability<Real> distance_probability(Real x, Real beta, const CellContext<Real>& ctx,
                                               const QuantizerSpec& spec) {
    const Real sf = weighted_score(x, ctx.q_floor, ctx, spec);
    const Real sc = weighted_score(x, ctx.q_ceil, ctx, spec);
    const Real af = beta * sf;
    const Real ac = beta * sc;
    const Real m = std::max(af, ac);
    const Real zf = std::exp(af - m);
    const Real zc = std::exp(ac - m);
    DistanceProbability<Real> p;
    p.m_floor = zf / (zf + zc);
    p.m_ceil = zc / (zf + zc);
    return p;
}

// Probability-weighted average of the two candidates; equals q_floor + m_ceil.
template <typename Real>
Real soft_assignment(Real x, Real beta, const CellContext<Real>& ctx, const QuantizerSpec& spec) {
    const DistanceProbability<Real> p = distance_probability(x, beta, ctx, spec);
    return p.m_floor * Real(ctx.q_floor) + p.m_ceil * Real(ctx.q_ceil);
}

// Temperature controller: beta* = gamma / |s(q_f) - s(q_c)|, floored and
// capped. Rises toward the transition point, falls toward the cell endpoints.
template <typename Real>
Real adaptive_temperature(Real x, const CellContext<Real>& ctx, const QuantizerSpec& spec) {
    const Real sf = weighted_score(x, ctx.q_floor, ctx, spec);
    const Real sc = weighted_score(x, ctx.q_ceil, ctx, spec);
    const Real denom = std::max(std::abs(sf - sc), Real(spec.denom_floor));
    return std::min(Real(spec.gamma) / denom, Real(spec.beta_cap));
}

// What the soft assignment collapses to once beta* is plugged in:
// q_f + lambda below the transition point, q_c - lambda above it.
template <typename Real>
Real closed_form_output(Real x, const CellContext<Real>& ctx, const QuantizerSpec& spec) {
    const Real lambda = Real(spec.lambda());
    return (x <= ctx.transition) ? Real(ctx.q_floor) + lambda : Real(ctx.q_ceil) - lambda;
}

// Affine map removing the lambda offsets; fixes the transition point and has
// slope 1/(1-2 lambda) > 1.
template <typename Real>
Real rescale(Real y, const CellContext<Real>& ctx, const QuantizerSpec& spec) {
    const Real lambda = Real(spec.lambda());
    return (y - ctx.transition) / (Real(1) - Real(2) * lambda) + ctx.transition;
}

// Everything the backward pass needs, captured at forward time. beta_star is
// stored rather than recomputed so both passes see the identical temperature.
template <typename Real>
struct DaqSaved {
    Real x = 0;                  // normalized input
    CellContext<Real> ctx;
    Real beta_star = 0;
    NormalizeGrads<Real> ngrads; // zero in the clipped branches
};

template <typename Real>
struct DaqForwardResult {
    Real q = 0; // exact grid value in {0, ..., 2^b-1}
    DaqSaved<Real> saved;
};

// Full forward: normalize, then the rescaled closed form evaluated exactly.
// rescale(closed_form_output(x)) simplifies to the round-half-down staircase,
// so the grid value is produced without any softmax arithmetic.
template <typename Real>
DaqForwardResult<Real> daq_forward(Real xhat, const QuantizerParams& params,
                                   const QuantizerSpec& spec) {
    DaqForwardResult<Real> r;
    const Real x = normalize(xhat, params, spec);
    r.saved.x = x;
    r.saved.ctx = cell_context(x, spec);
    r.saved.beta_star = adaptive_temperature(x, r.saved.ctx, spec);
    r.saved.ngrads = normalize_grads(xhat, params, spec);
    r.q = (x <= r.saved.ctx.transition) ? Real(r.saved.ctx.q_floor) : Real(r.saved.ctx.q_ceil);
    return r;
}

namespace detail {
template <typename Real>
inline Real sign_away_from(Real x, int q) {
    // d/dx exp(-|x-q|) = exp(-|x-q|) * sign(q-x), with sign(0) = 0.
    if (Real(q) > x) return Real(1);
    if (Real(q) < x) return Real(-1);
    return Real(0);
}
} // namespace detail

// d soft_assignment / dx at fixed beta and fixed cell:
// beta * m_f * m_c * (ds_c/dx - ds_f/dx), with ds_i/dx = s_i * sign(q_i - x).
template <typename Real>
Real soft_assignment_grad_x(Real x, Real beta, const CellContext<Real>& ctx,
                            const QuantizerSpec& spec) {
    const Real sf = weighted_score(x, ctx.q_floor, ctx, spec);
    const Real sc = weighted_score(x, ctx.q_ceil, ctx, spec);
    const DistanceProbability<Real> p = distance_probability(x, beta, ctx, spec);
    const Real dsf = sf * detail::sign_away_from(x, ctx.q_floor);
    const Real dsc = sc * detail::sign_away_from(x, ctx.q_ceil);
    return beta * p.m_floor * p.m_ceil * (dsc - dsf);
}

template <typename Real>
struct DaqGrads {
    Real d_input = 0;
    Real d_lower = 0;
    Real d_upper = 0;
};

// Analytic backward. beta* is held constant (a per-input hyperparameter) and
// the cell candidates are piecewise constant, so the local gradient is the
// rescale slope times the soft-assignment derivative times the normalize
// chain. Clipped inputs produce all-zero gradients through ngrads.
template <typename Real>
DaqGrads<Real> daq_backward(const DaqSaved<Real>& saved, const QuantizerSpec& spec,
                            Real upstream) {
    const Real lambda = Real(spec.lambda());
    const Real f_prime = Real(1) / (Real(1) - Real(2) * lambda);
    const Real phi_prime = soft_assignment_grad_x(saved.x, saved.beta_star, saved.ctx, spec);
    const Real local = upstream * f_prime * phi_prime;
    DaqGrads<Real> g;
    g.d_input = local * saved.ngrads.d_input;
    g.d_lower = local * saved.ngrads.d_lower;
    g.d_upper = local * saved.ngrads.d_upper;
    return g;
}

// Map a grid value onto the role's target range: weights to [-1,1],
// activations to [0,1]. Linear, so the gradient is the constant slope.
template <typename Real>
Real scale_quantized(Real q, const QuantizerSpec& spec) {
    const Real levels = Real(spec.qmax());
    if (spec.role == Role::kWeight) return Real(2) * q / levels - Real(1);
    return q / levels;
}

template <typename Real>
Real scale_quantized_slope(const QuantizerSpec& spec) {
    const Real levels = Real(spec.qmax());
    return (spec.role == Role::kWeight) ? Real(2) / levels : Real(1) / levels;
}

} // namespace daq

#endif // DAQ_DASR_HPP
