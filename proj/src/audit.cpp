#include "daq/audit.hpp"

#include <algorithm>

#include "daq/rng.hpp"

namespace daq {

namespace {

double rel_err(double fd, double analytic) {
    const double denom = std::max(std::abs(analytic), 1e-12);
    return std::abs(fd - analytic) / denom;
}

} // namespace

AuditReport audit_soft_assignment(int bits, double beta, long n_points, double h,
                                  std::uint64_t seed, double margin) {
    QuantizerSpec spec;
    spec.bits = bits;
    spec.validate();
    if (!(h > 0)) throw ContractError("audit: h must be positive");
    Rng rng(seed);
    AuditReport rep;
    const double top = static_cast<double>(spec.qmax());
    for (long i = 0; i < n_points; ++i) {
        const double x = rng.uniform(0.0, top);
        if (kink_distance(x) < margin || x < margin || top - x < margin) {
            ++rep.excluded;
            continue;
        }
        const CellContext<double> ctx = cell_context(x, spec);
        // FD on the smaller softmax component: it carries full relative
        // precision, where the dominant one saturates toward 1 and would
        // cancel catastrophically. d(m_floor)/dx = -d(m_ceil)/dx.
        const bool floor_minor = x > ctx.transition;
        auto minor = [&](double xx) {
            const auto p = distance_probability(xx, beta, ctx, spec);
            return floor_minor ? p.m_floor : p.m_ceil;
        };
        const double sign = floor_minor ? -1.0 : 1.0;
        const double fd = sign * (minor(x + h) - minor(x - h)) / (2.0 * h);
        const double analytic = soft_assignment_grad_x(x, beta, ctx, spec);
        rep.worst_rel_err = std::max(rep.worst_rel_err, rel_err(fd, analytic));
        ++rep.audited;
    }
    return rep;
}

AuditReport audit_daq_chain(int bits, long n_points, double h, std::uint64_t seed,
                            double lower, double upper, double margin) {
    QuantizerSpec spec;
    spec.bits = bits;
    spec.validate();
    if (!(h > 0)) throw ContractError("audit: h must be positive");
    QuantizerParams params;
    params.lower = lower;
    params.upper = upper;
    params.validate();
    Rng rng(seed);
    AuditReport rep;
    const double top = static_cast<double>(spec.qmax());
    for (long i = 0; i < n_points; ++i) {
        const double xhat = rng.uniform(lower, upper);
        const double x = normalize(xhat, params, spec);
        if (kink_distance(x) < margin || x < margin || top - x < margin) {
            ++rep.excluded;
            continue;
        }
        const DaqForwardResult<double> base = daq_forward(xhat, params, spec);
        const DaqGrads<double> analytic = daq_backward(base.saved, spec, 1.0);

        // surrogate with frozen cell and temperature
        auto surrogate = [&](double xh, double lo, double up) {
            QuantizerParams p;
            p.lower = lo;
            p.upper = up;
            const double xn = normalize(xh, p, spec);
            return rescale(soft_assignment(xn, base.saved.beta_star, base.saved.ctx, spec),
                           base.saved.ctx, spec);
        };
        const double fd_x =
            (surrogate(xhat + h, lower, upper) - surrogate(xhat - h, lower, upper)) / (2 * h);
        const double fd_l =
            (surrogate(xhat, lower + h, upper) - surrogate(xhat, lower - h, upper)) / (2 * h);
        const double fd_u =
            (surrogate(xhat, lower, upper + h) - surrogate(xhat, lower, upper - h)) / (2 * h);
        rep.worst_rel_err = std::max({rep.worst_rel_err, rel_err(fd_x, analytic.d_input),
                                      rel_err(fd_l, analytic.d_lower),
                                      rel_err(fd_u, analytic.d_upper)});
        ++rep.audited;
    }
    return rep;
}

} // namespace daq
