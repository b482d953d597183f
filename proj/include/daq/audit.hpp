#ifndef DAQ_AUDIT_HPP
#define DAQ_AUDIT_HPP

// Finite-difference audits of the analytic gradients: the soft assignment at
// fixed temperatures and the full DAQ chain (normalize + rescaled soft
// assignment at the frozen adaptive temperature, including the interval
// gradients). Sample points are drawn uniformly; points within the margin of
// a kink (integers and transition points, i.e. multiples of 1/2 on the
// normalized axis) are excluded and counted.

#include <cstdint>

#include "daq/dasr.hpp"

namespace daq {

struct AuditReport {
    double worst_rel_err = 0;
    long audited = 0;
    long excluded = 0;
};

inline double kink_distance(double x) {
    const double nearest = std::round(x * 2.0) / 2.0;
    return std::abs(x - nearest);
}

// FD vs analytic d(soft_assignment)/dx at fixed beta, over n points in
// [0, 2^bits - 1]. The FD oracle differentiates the cell-local probability
// m_ceil (same derivative, without the integer offset).
AuditReport audit_soft_assignment(int bits, double beta, long n_points, double h,
                                  std::uint64_t seed, double margin = 0.05);

// FD vs daq_backward for the full chain at fixed (lower, upper), probing the
// input and both interval bounds of the frozen-temperature surrogate.
AuditReport audit_daq_chain(int bits, long n_points, double h, std::uint64_t seed,
                            double lower = -1.0, double upper = 1.0, double margin = 0.05);

} // namespace daq

#endif // DAQ_AUDIT_HPP
