#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "daq/dasr.hpp"
#include "daq/rng.hpp"

using namespace daq;

namespace {

QuantizerSpec spec_b(int bits, double sigma = 1.0, double gamma = 2.0) {
    QuantizerSpec s;
    s.bits = bits;
    s.kernel_sigma = sigma;
    s.gamma = gamma;
    s.validate();
    return s;
}

QuantizerParams params_lu(double l, double u) {
    QuantizerParams p;
    p.lower = l;
    p.upper = u;
    return p;
}

// Independent staircase oracle: round-half-down is ceil(x - 1/2), clamped.
double staircase_oracle(double x, int bits) {
    const double top = static_cast<double>((1 << bits) - 1);
    return std::min(std::max(std::ceil(x - 0.5), 0.0), top);
}

// Frozen oracle values (30-digit arithmetic, direct evaluation of the
// formulas named in each test).
constexpr double kExpM03 = 0.740818220681717866;  // e^-0.3
constexpr double kExpM07 = 0.496585303791409515;  // e^-0.7
constexpr double kExpM05 = 0.606530659712633424;  // e^-0.5
constexpr double kExpM18 = 0.882496902584595403;  // e^-(1/8)
constexpr double kExpM12 = 0.301194211912202097;  // e^-1.2
constexpr double kLambda2 = 0.119202922022117556; // 1/(e^2+1)
constexpr double kSig2 = 0.880797077977882444;    // sigmoid(2)
constexpr double kBetaStar03 = 4.549342074373721; // 2/(e^-0.3 - e^-1.2)
constexpr double kBetaStar05 = 8.380430706473853; // 2/(e^-0.5 - e^-1)
constexpr double kBetaStar00 = 2.574433833577736; // 2/(1 - e^-1.5)
constexpr double kAssignAtGrid4 = 0.042799790818709728; // sigmoid(4(e^-1.5 - 1))
constexpr double kDaqLocal03 = 0.653522670925467956;

} // namespace

TEST_CASE("normalize matches the clipped affine map") {
    const QuantizerSpec spec = spec_b(2);
    const QuantizerParams p = params_lu(-1.0, 1.0);
    CHECK(normalize(-1.0, p, spec) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(normalize(0.0, p, spec) == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(normalize(5.0, p, spec) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(normalize(-7.0, p, spec) == 0.0);

    CHECK_THROWS_AS(normalize(std::nan(""), p, spec), ContractError);
    CHECK_THROWS_AS(normalize(0.5, params_lu(1.0, 1.0), spec), ConfigError);
    CHECK_THROWS_AS(normalize(0.5, params_lu(2.0, 1.0), spec), ConfigError);
}

TEST_CASE("normalize_grads agrees with central finite differences") {
    const QuantizerSpec spec2 = spec_b(2);
    const QuantizerParams p = params_lu(-1.0, 1.0);

    auto g = normalize_grads(0.0, p, spec2);
    CHECK(g.d_input == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(g.d_lower == doctest::Approx(-0.75).epsilon(1e-12));
    CHECK(g.d_upper == doctest::Approx(-0.75).epsilon(1e-12));

    auto gs = normalize_grads(5.0, p, spec2);
    CHECK(gs.d_input == 0.0);
    CHECK(gs.d_lower == 0.0);
    CHECK(gs.d_upper == 0.0);

    auto g1 = normalize_grads(0.5, params_lu(0.0, 1.0), spec_b(1));
    CHECK(g1.d_input == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(g1.d_lower == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(g1.d_upper == doctest::Approx(-0.5).epsilon(1e-12));

    // FD oracle over random interior points
    Rng rng(11);
    const double h = 1e-6;
    for (int trial = 0; trial < 200; ++trial) {
        const double l = rng.uniform(-2.0, 0.0);
        const double u = l + rng.uniform(0.5, 2.5);
        const double x = rng.uniform(l + 0.01, u - 0.01);
        const QuantizerParams pp = params_lu(l, u);
        const auto an = normalize_grads(x, pp, spec2);
        const double fdx =
            (normalize(x + h, pp, spec2) - normalize(x - h, pp, spec2)) / (2 * h);
        const double fdl = (normalize(x, params_lu(l + h, u), spec2) -
                            normalize(x, params_lu(l - h, u), spec2)) /
                           (2 * h);
        const double fdu = (normalize(x, params_lu(l, u + h), spec2) -
                            normalize(x, params_lu(l, u - h), spec2)) /
                           (2 * h);
        CHECK(an.d_input == doctest::Approx(fdx).epsilon(1e-5));
        CHECK(an.d_lower == doctest::Approx(fdl).epsilon(1e-5));
        CHECK(an.d_upper == doctest::Approx(fdu).epsilon(1e-5));
    }

    // ties at the bounds take the interior branch
    const auto gtie = normalize_grads(-1.0, p, spec2);
    CHECK(gtie.d_input == doctest::Approx(1.5));
}

TEST_CASE("cell_context locates candidates and clamps the top cell") {
    const auto c1 = cell_context(0.3, spec_b(1));
    CHECK(c1.q_floor == 0);
    CHECK(c1.q_ceil == 1);
    CHECK(c1.transition == 0.5);
    CHECK(c1.q_nearest == 0);

    const auto c2 = cell_context(3.0, spec_b(2));
    CHECK(c2.q_floor == 2);
    CHECK(c2.q_ceil == 3);
    CHECK(c2.transition == 2.5);
    CHECK(c2.q_nearest == 3);

    const auto c3 = cell_context(1.5, spec_b(2));
    CHECK(c3.q_floor == 1);
    CHECK(c3.q_ceil == 2);
    CHECK(c3.transition == 1.5);
    CHECK(c3.q_nearest == 1); // tie goes to the floor candidate

    // candidate-pair invariant across the range, every bit-width
    Rng rng(3);
    for (int bits = 1; bits <= 8; ++bits) {
        const QuantizerSpec s = spec_b(bits);
        for (int i = 0; i < 500; ++i) {
            const double x = rng.uniform(0.0, double(s.qmax()));
            const auto c = cell_context(x, s);
            CHECK(c.q_ceil - c.q_floor == 1);
            CHECK(c.q_floor >= 0);
            CHECK(c.q_floor <= s.qmax() - 1);
        }
        const auto top = cell_context(double(s.qmax()), s);
        CHECK(top.q_ceil - top.q_floor == 1);
    }

    CHECK_THROWS_AS(cell_context(-0.1, spec_b(2)), ContractError);
    CHECK_THROWS_AS(cell_context(3.1, spec_b(2)), ContractError);
}

TEST_CASE("distance_score is exp(-|x-q|)") {
    CHECK(distance_score(1.0, 1) == 1.0);
    CHECK(distance_score(0.3, 0) == doctest::Approx(kExpM03).epsilon(1e-12));
    CHECK(distance_score(0.3, 1) == doctest::Approx(kExpM07).epsilon(1e-12));
    CHECK(distance_score(0.3, 1) == doctest::Approx(std::exp(-0.7)).epsilon(1e-15));
}

TEST_CASE("kernel_weight retains the nearest candidate at full strength") {
    const auto ctx = cell_context(0.3, spec_b(1));
    CHECK(kernel_weight(0, ctx, spec_b(1)) == 1.0);
    CHECK(kernel_weight(1, ctx, spec_b(1)) == doctest::Approx(kExpM05).epsilon(1e-12));
    CHECK(kernel_weight(1, ctx, spec_b(1, 2.0)) == doctest::Approx(kExpM18).epsilon(1e-12));
    CHECK_THROWS_AS(kernel_weight(2, ctx, spec_b(1)), ContractError);
}

TEST_CASE("weighted_score multiplies kernel and distance score") {
    const QuantizerSpec s = spec_b(1);
    const auto ctx = cell_context(0.3, s);
    CHECK(weighted_score(0.3, 0, ctx, s) == doctest::Approx(kExpM03).epsilon(1e-12));
    CHECK(weighted_score(0.3, 1, ctx, s) == doctest::Approx(kExpM12).epsilon(1e-12));
    const auto ctx0 = cell_context(0.0, s);
    CHECK(weighted_score(0.0, 0, ctx0, s) == 1.0);
}

TEST_CASE("distance_probability normalizes and matches the sigmoid form") {
    const QuantizerSpec s = spec_b(1);
    const auto ctx = cell_context(0.3, s);
    const double beta_star = adaptive_temperature(0.3, ctx, s);
    const auto p = distance_probability(0.3, beta_star, ctx, s);
    CHECK(p.m_floor == doctest::Approx(kSig2).epsilon(1e-12));
    CHECK(p.m_ceil == doctest::Approx(kLambda2).epsilon(1e-12));

    // beta -> 0 flattens the softmax
    const auto flat = distance_probability(0.3, 1e-300, ctx, s);
    CHECK(flat.m_floor == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(flat.m_ceil == doctest::Approx(0.5).epsilon(1e-12));

    // equal scores by construction: a kernel wide enough to be exactly 1 in
    // double makes x = q_t score-symmetric
    const QuantizerSpec wide = spec_b(1, 1e9);
    const auto ctx_t = cell_context(0.5, wide);
    const auto sym = distance_probability(0.5, 7.0, ctx_t, wide);
    CHECK(sym.m_floor == 0.5);
    CHECK(sym.m_ceil == 0.5);

    // normalization invariant
    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
        const double x = rng.uniform(0.0, 1.0);
        const double beta = rng.uniform(0.1, 50.0);
        const auto pr = distance_probability(x, beta, cell_context(x, s), s);
        CHECK(std::abs(pr.m_floor + pr.m_ceil - 1.0) <= 1e-15);
        CHECK(pr.m_floor > 0.0);
        CHECK(pr.m_ceil > 0.0);
    }
}

TEST_CASE("soft_assignment interpolates strictly inside the cell") {
    const QuantizerSpec s = spec_b(1);
    const auto ctx = cell_context(0.3, s);
    const double beta_star = adaptive_temperature(0.3, ctx, s);
    CHECK(soft_assignment(0.3, beta_star, ctx, s) ==
          doctest::Approx(kLambda2).epsilon(1e-10));

    const auto ctx0 = cell_context(0.0, s);
    CHECK(soft_assignment(0.0, 4.0, ctx0, s) ==
          doctest::Approx(kAssignAtGrid4).epsilon(1e-10));

    // equal weighted scores put the assignment at the transition point
    const QuantizerSpec wide = spec_b(1, 1e9);
    CHECK(soft_assignment(0.5, 9.0, cell_context(0.5, wide), wide) == 0.5);

    Rng rng(6);
    for (int bits : {1, 2, 4}) {
        const QuantizerSpec sb = spec_b(bits);
        for (int i = 0; i < 500; ++i) {
            const double x = rng.uniform(0.0, double(sb.qmax()));
            const double beta = rng.uniform(0.1, 40.0);
            const auto c = cell_context(x, sb);
            const double y = soft_assignment(x, beta, c, sb);
            CHECK(y > double(c.q_floor));
            CHECK(y < double(c.q_ceil));
        }
    }
}

TEST_CASE("soft_assignment is strictly increasing within a cell for fixed beta") {
    Rng rng(7);
    for (int bits : {1, 3}) {
        const QuantizerSpec s = spec_b(bits);
        for (double beta : {0.5, 4.0, 24.0}) {
            for (int cell = 0; cell < s.qmax(); ++cell) {
                double prev_x = -1, prev_y = -1;
                for (int i = 0; i <= 200; ++i) {
                    const double x = cell + (i + 0.5) / 201.0;
                    const double y = soft_assignment(x, beta, cell_context(x, s), s);
                    if (prev_x >= 0) CHECK(y > prev_y);
                    prev_x = x;
                    prev_y = y;
                }
            }
        }
    }
    (void)rng;
}

TEST_CASE("adaptive_temperature matches the controller formula") {
    const QuantizerSpec s = spec_b(1);
    CHECK(adaptive_temperature(0.3, cell_context(0.3, s), s) ==
          doctest::Approx(kBetaStar03).epsilon(1e-10));
    CHECK(adaptive_temperature(0.5, cell_context(0.5, s), s) ==
          doctest::Approx(kBetaStar05).epsilon(1e-10));
    CHECK(adaptive_temperature(0.0, cell_context(0.0, s), s) ==
          doctest::Approx(kBetaStar00).epsilon(1e-10));

    // cap engages
    QuantizerSpec capped = spec_b(1);
    capped.beta_cap = 3.0;
    CHECK(adaptive_temperature(0.5, cell_context(0.5, capped), capped) == 3.0);

    // floor absorbs a vanishing denominator (degenerate wide kernel at q_t)
    const QuantizerSpec wide = spec_b(1, 1e9);
    CHECK(adaptive_temperature(0.5, cell_context(0.5, wide), wide) == wide.beta_cap);

    // temperature is larger near the transition point than near the grid point
    for (int bits : {1, 2, 4}) {
        for (double sigma : {1.0, 2.0}) {
            const QuantizerSpec sb = spec_b(bits, sigma);
            for (int cell = 0; cell < sb.qmax(); ++cell) {
                const double qt = cell + 0.5;
                const double near_grid = adaptive_temperature(
                    cell + 0.01, cell_context(cell + 0.01, sb), sb);
                for (double xt : {qt - 0.01, qt + 0.01}) {
                    const double near_t =
                        adaptive_temperature(xt, cell_context(xt, sb), sb);
                    CHECK(near_t > near_grid);
                }
            }
        }
    }
}

TEST_CASE("closed_form_output and rescale reproduce Eq.-style identities") {
    const QuantizerSpec s = spec_b(1);
    CHECK(closed_form_output(0.3, cell_context(0.3, s), s) ==
          doctest::Approx(kLambda2).epsilon(1e-12));
    CHECK(closed_form_output(0.7, cell_context(0.7, s), s) ==
          doctest::Approx(1.0 - kLambda2).epsilon(1e-12));
    CHECK(closed_form_output(0.5, cell_context(0.5, s), s) ==
          doctest::Approx(kLambda2).epsilon(1e-12)); // tie branch

    // rescale maps q_f + lambda -> q_f, q_c - lambda -> q_c, fixes q_t
    Rng rng(9);
    for (int bits : {1, 2, 8}) {
        const QuantizerSpec sb = spec_b(bits);
        const double lam = sb.lambda();
        for (int cell = 0; cell < sb.qmax(); ++cell) {
            const double x = cell + rng.uniform(0.01, 0.99);
            const auto ctx = cell_context(x, sb);
            CHECK(rescale(ctx.q_floor + lam, ctx, sb) ==
                  doctest::Approx(double(ctx.q_floor)).epsilon(1e-12));
            CHECK(rescale(ctx.q_ceil - lam, ctx, sb) ==
                  doctest::Approx(double(ctx.q_ceil)).epsilon(1e-12));
            CHECK(rescale(ctx.transition, ctx, sb) == ctx.transition);
        }
    }
}

TEST_CASE("daq_forward is the exact round-half-down staircase") {
    const QuantizerSpec s2 = spec_b(2);
    // x = 1.5 ties down to 1 (round-half-down)
    CHECK(daq_forward(0.0, params_lu(-1, 1), s2).q == 1.0);
    CHECK(daq_forward(-1.0, params_lu(-1, 1), s2).q == 0.0);
    CHECK(daq_forward(0.3, params_lu(0, 1), spec_b(1)).q == 0.0);

    // exactness against the independent staircase oracle, plus the rescaled
    // closed form evaluated through floating point
    Rng rng(10);
    for (int bits = 1; bits <= 8; ++bits) {
        const QuantizerSpec s = spec_b(bits);
        const QuantizerParams p = params_lu(0.0, double(s.qmax()));
        double worst = 0;
        for (int i = 0; i < 100000; ++i) {
            const double x = rng.uniform(0.0, double(s.qmax()));
            const auto r = daq_forward(x, p, s);
            CHECK(r.q == staircase_oracle(x, bits));
            const auto ctx = cell_context(x, s);
            const double via_rescale = rescale(closed_form_output(x, ctx, s), ctx, s);
            worst = std::max(worst, std::abs(via_rescale - r.q));
        }
        CHECK(worst <= 1e-12);
    }

    // idempotence: grid values mapped into [l,u] come back unchanged
    Rng rng2(12);
    for (int trial = 0; trial < 500; ++trial) {
        const int bits = 1 + int(rng2.below(8));
        const QuantizerSpec s = spec_b(bits);
        const double l = rng2.uniform(-3.0, 0.0);
        const double u = l + rng2.uniform(0.5, 4.0);
        const int q0 = int(rng2.below(std::uint64_t(s.qmax() + 1)));
        const double xhat = l + q0 * (u - l) / double(s.qmax());
        CHECK(daq_forward(xhat, params_lu(l, u), s).q == double(q0));
    }
}

TEST_CASE("daq_backward matches the frozen value and its FD oracle") {
    const QuantizerSpec s = spec_b(1);
    const QuantizerParams p = params_lu(0.0, 1.0);
    const auto fwd = daq_forward(0.3, p, s);
    const auto g = daq_backward(fwd.saved, s, 1.0);
    CHECK(g.d_input == doctest::Approx(kDaqLocal03).epsilon(1e-10));

    // FD oracle: rescale(soft_assignment(.; beta frozen)) at the saved cell
    const double h = 1e-6;
    auto frozen_chain = [&](double xhat) {
        const double xn = normalize(xhat, p, s);
        return rescale(soft_assignment(xn, fwd.saved.beta_star, fwd.saved.ctx, s),
                       fwd.saved.ctx, s);
    };
    const double fd = (frozen_chain(0.3 + h) - frozen_chain(0.3 - h)) / (2 * h);
    CHECK(g.d_input == doctest::Approx(fd).epsilon(1e-6));

    // upstream scales linearly
    const auto g3 = daq_backward(fwd.saved, s, 3.0);
    CHECK(g3.d_input == doctest::Approx(3.0 * g.d_input).epsilon(1e-12));

    // clipped input kills the chain
    const auto clipped = daq_forward(1.7, p, s);
    const auto gc = daq_backward(clipped.saved, s, 1.0);
    CHECK(gc.d_input == 0.0);
    CHECK(gc.d_lower == 0.0);
    CHECK(gc.d_upper == 0.0);

    // phi' is symmetric about the transition point
    for (int bits : {1, 3}) {
        const QuantizerSpec sb = spec_b(bits);
        for (int cell = 0; cell < sb.qmax(); ++cell) {
            const double qt = cell + 0.5;
            const double delta = 0.01;
            auto phi_prime_at = [&](double x) {
                const auto ctx = cell_context(x, sb);
                return soft_assignment_grad_x(x, adaptive_temperature(x, ctx, sb), ctx, sb);
            };
            CHECK(phi_prime_at(qt - delta) ==
                  doctest::Approx(phi_prime_at(qt + delta)).epsilon(1e-12));
        }
    }
}

TEST_CASE("closed-form equivalence of the adaptive soft assignment") {
    Rng rng(13);
    for (int bits = 1; bits <= 8; ++bits) {
        const QuantizerSpec s = spec_b(bits);
        double worst = 0;
        for (int i = 0; i < 10000; ++i) {
            const double x = rng.uniform(0.0, double(s.qmax()));
            const auto ctx = cell_context(x, s);
            const double beta_star = adaptive_temperature(x, ctx, s);
            if (beta_star >= s.beta_cap) continue;
            const double soft = soft_assignment(x, beta_star, ctx, s);
            const double closed = closed_form_output(x, ctx, s);
            worst = std::max(worst, std::abs(soft - closed));
        }
        CHECK(worst <= 1e-9);
    }
}

TEST_CASE("scale_quantized maps grids onto the role ranges") {
    QuantizerSpec w = spec_b(2);
    w.role = Role::kWeight;
    QuantizerSpec a = spec_b(2);
    a.role = Role::kActivation;
    CHECK(scale_quantized(0.0, w) == -1.0);
    CHECK(scale_quantized(3.0, w) == 1.0);
    CHECK(scale_quantized(1.0, a) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    for (int bits = 1; bits <= 8; ++bits) {
        QuantizerSpec sw = spec_b(bits);
        sw.role = Role::kWeight;
        QuantizerSpec sa = spec_b(bits);
        sa.role = Role::kActivation;
        const double levels = double(sw.qmax());
        for (int q = 0; q <= sw.qmax(); ++q) {
            const double vw = scale_quantized(double(q), sw);
            const double va = scale_quantized(double(q), sa);
            CHECK(vw == doctest::Approx(2.0 * q / levels - 1.0).epsilon(1e-15));
            CHECK(va == doctest::Approx(q / levels).epsilon(1e-15));
            CHECK(vw >= -1.0);
            CHECK(vw <= 1.0);
            CHECK(va >= 0.0);
            CHECK(va <= 1.0);
        }
        CHECK(scale_quantized(0.0, sw) == -1.0);
        CHECK(scale_quantized(levels, sw) == 1.0);
        CHECK(scale_quantized(0.0, sa) == 0.0);
        CHECK(scale_quantized(levels, sa) == 1.0);
    }
}

TEST_CASE("single-precision instantiation keeps staircase exactness") {
    Rng rng(14);
    for (int bits = 1; bits <= 8; ++bits) {
        const QuantizerSpec s = spec_b(bits);
        const QuantizerParams p = params_lu(0.0, double(s.qmax()));
        float worst_exact = 0, worst_rel = 0;
        for (int i = 0; i < 100000; ++i) {
            const float x = static_cast<float>(rng.uniform(0.0, double(s.qmax())));
            const auto r = daq_forward(x, p, s);
            worst_exact = std::max(
                worst_exact, std::abs(r.q - float(staircase_oracle(double(x), bits))));
            const auto ctx = cell_context(x, s);
            const float via_rescale = rescale(closed_form_output(x, ctx, s), ctx, s);
            worst_rel = std::max(worst_rel, std::abs(via_rescale - r.q) / (1.0f + r.q));
        }
        CHECK(worst_exact <= 1e-6f); // the forward itself stays bit-exact
        CHECK(worst_rel <= 1e-6f);   // the arithmetic route, one ulp per cell
    }
}

TEST_CASE("quantizer spec invariants are enforced") {
    QuantizerSpec s;
    s.bits = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.bits = 9;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.bits = 4;
    s.gamma = -1;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.gamma = 2;
    s.kernel_sigma = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.kernel_sigma = 1;
    s.beta_cap = 1.0; // below gamma
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.beta_cap = 1e6;
    s.denom_floor = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.denom_floor = 1e-12;
    s.validate();

    // lambda = 1/(e^gamma + 1) in (0, 0.5)
    for (double gamma : {0.5, 2.0, 6.0}) {
        QuantizerSpec g = spec_b(2, 1.0, gamma);
        CHECK(g.lambda() > 0.0);
        CHECK(g.lambda() < 0.5);
    }
}
