#include "daq/tape.hpp"

#include <algorithm>
#include <cmath>

namespace daq {

ValueId Tape::push(Tensor value, std::string op, std::vector<ValueId> inputs,
                   std::function<void()> back) {
    values_.push_back(std::move(value));
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(back)});
    return static_cast<ValueId>(values_.size() - 1);
}

void Tape::check_same_shape(const char* op, ValueId a, ValueId b) const {
    if (!value(a).same_shape(value(b)))
        throw ShapeError(std::string(op) + ": " + shape_str(value(a).shape()) + " vs " +
                         shape_str(value(b).shape()));
}

ValueId Tape::leaf(const Tensor& t) { return push(t, "leaf", {}, {}); }

const Tensor& Tape::grad(ValueId id) const {
    if (!backward_done_) throw ContractError("grad requested before backward()");
    return grads_.at(static_cast<size_t>(id));
}

const std::vector<QuantSavedElem>& Tape::quantize_saved(ValueId quantize_output) const {
    auto it = quant_saved_.find(quantize_output);
    if (it == quant_saved_.end())
        throw ContractError("value is not a quantizer output");
    return it->second;
}

ValueId Tape::add(ValueId a, ValueId b) {
    check_same_shape("add", a, b);
    Tensor out = value(a);
    const Tensor& tb = value(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += tb[i];
    ValueId id = push(std::move(out), "add", {a, b}, {});
    nodes_.back().back = [this, id, a, b]() {
        const Tensor& g = grads_[static_cast<size_t>(id)];
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            grads_[static_cast<size_t>(a)][i] += g[i];
            grads_[static_cast<size_t>(b)][i] += g[i];
        }
    };
    return id;
}

ValueId Tape::mul(ValueId a, ValueId b) {
    check_same_shape("mul", a, b);
    Tensor out = value(a);
    const Tensor& tb = value(b);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= tb[i];
    ValueId id = push(std::move(out), "mul", {a, b}, {});
    nodes_.back().back = [this, id, a, b]() {
        const Tensor& g = grads_[static_cast<size_t>(id)];
        const Tensor& va = values_[static_cast<size_t>(a)];
        const Tensor& vb = values_[static_cast<size_t>(b)];
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            grads_[static_cast<size_t>(a)][i] += g[i] * vb[i];
            grads_[static_cast<size_t>(b)][i] += g[i] * va[i];
        }
    };
    return id;
}

ValueId Tape::sum(ValueId a) {
    double s = 0;
    for (std::int64_t i = 0; i < value(a).numel(); ++i) s += value(a)[i];
    ValueId id = push(Tensor::scalar(s), "sum", {a}, {});
    nodes_.back().back = [this, id, a]() {
        const double g = grads_[static_cast<size_t>(id)][0];
        Tensor& ga = grads_[static_cast<size_t>(a)];
        for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    };
    return id;
}

ValueId Tape::relu(ValueId x) {
    Tensor out = value(x);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, out[i]);
    ValueId id = push(std::move(out), "relu", {x}, {});
    nodes_.back().back = [this, id, x]() {
        const Tensor& g = grads_[static_cast<size_t>(id)];
        const Tensor& vx = values_[static_cast<size_t>(x)];
        Tensor& gx = grads_[static_cast<size_t>(x)];
        for (std::int64_t i = 0; i < g.numel(); ++i)
            if (vx[i] > 0) gx[i] += g[i];
    };
    return id;
}

ValueId Tape::flatten(ValueId x) {
    const Tensor& in = value(x);
    if (in.rank() < 1) throw ShapeError("flatten: scalar input");
    const std::int64_t n = in.dim(0);
    Tensor out = in.reshaped({n, in.numel() / n});
    ValueId id = push(std::move(out), "flatten", {x}, {});
    nodes_.back().back = [this, id, x]() {
        const Tensor& g = grads_[static_cast<size_t>(id)];
        Tensor& gx = grads_[static_cast<size_t>(x)];
        for (std::int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    };
    return id;
}

ValueId Tape::dense(ValueId x, ValueId w, ValueId b) {
    const Tensor& vx = value(x);
    const Tensor& vw = value(w);
    const bool biased = (b != kNoBias);
    if (vx.rank() != 2 || vw.rank() != 2 || vx.dim(1) != vw.dim(1))
        throw ShapeError("dense: x " + shape_str(vx.shape()) + ", w " + shape_str(vw.shape()));
    if (biased && (value(b).rank() != 1 || vw.dim(0) != value(b).dim(0)))
        throw ShapeError("dense: w " + shape_str(vw.shape()) + ", b " +
                         shape_str(value(b).shape()));
    const std::int64_t n = vx.dim(0), din = vx.dim(1), dout = vw.dim(0);
    Tensor out({n, dout});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t o = 0; o < dout; ++o) {
            double acc = biased ? value(b)[o] : 0.0;
            for (std::int64_t k = 0; k < din; ++k) acc += vx[i * din + k] * vw[o * din + k];
            out[i * dout + o] = acc;
        }
    std::vector<ValueId> ins = biased ? std::vector<ValueId>{x, w, b}
                                      : std::vector<ValueId>{x, w};
    ValueId id = push(std::move(out), "dense", std::move(ins), {});
    nodes_.back().back = [this, id, x, w, b, biased, n, din, dout]() {
        const Tensor& g = grads_[static_cast<size_t>(id)];
        const Tensor& vx2 = values_[static_cast<size_t>(x)];
        const Tensor& vw2 = values_[static_cast<size_t>(w)];
        Tensor& gx = grads_[static_cast<size_t>(x)];
        Tensor& gw = grads_[static_cast<size_t>(w)];
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t o = 0; o < dout; ++o) {
                const double go = g[i * dout + o];
                if (biased) grads_[static_cast<size_t>(b)][o] += go;
                for (std::int64_t k = 0; k < din; ++k) {
                    gx[i * din + k] += go * vw2[o * din + k];
                    gw[o * din + k] += go * vx2[i * din + k];
                }
            }
    };
    return id;
}

ValueId Tape::bias_add(ValueId x, ValueId b) {
    const Tensor& vx = value(x);
    const Tensor& vb = value(b);
    if (vb.rank() != 1 ||
        (vx.rank() != 2 && vx.rank() != 4) ||
        (vx.rank() == 2 && vx.dim(1) != vb.dim(0)) ||
        (vx.rank() == 4 && vx.dim(1) != vb.dim(0)))
        throw ShapeError("bias_add: x " + shape_str(vx.shape()) + ", b " +
                         shape_str(vb.shape()));
    const std::int64_t chan = vb.dim(0);
    const std::int64_t inner = (vx.rank() == 4) ? vx.dim(2) * vx.dim(3) : 1;
    Tensor out = vx;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += vb[(i / inner) % chan];
    ValueId id = push(std::move(out), "bias_add", {x, b}, {});
    nodes_.back().back = [this, id, x, b, chan, inner]() {
        const Tensor& g = grads_[static_cast<size_t>(id)];
        Tensor& gx = grads_[static_cast<size_t>(x)];
        Tensor& gb = grads_[static_cast<size_t>(b)];
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            gx[i] += g[i];
            gb[(i / inner) % chan] += g[i];
        }
    };
    return id;
}

ValueId Tape::conv2d(ValueId x, ValueId w, ValueId b, int stride, int pad) {
    const Tensor& vx = value(x);
    const Tensor& vw = value(w);
    const bool biased = (b != kNoBias);
    if (vx.rank() != 4 || vw.rank() != 4)
        throw ShapeError("conv2d: x " + shape_str(vx.shape()) + ", w " + shape_str(vw.shape()));
    if (biased && (value(b).rank() != 1 || vw.dim(0) != value(b).dim(0)))
        throw ShapeError("conv2d: w " + shape_str(vw.shape()) + ", b " +
                         shape_str(value(b).shape()));
    if (vx.dim(1) != vw.dim(1))
        throw ShapeError("conv2d: channel mismatch, x " + shape_str(vx.shape()) + ", w " +
                         shape_str(vw.shape()));
    if (stride < 1 || pad < 0) throw ContractError("conv2d: bad stride/pad");
    const std::int64_t n = vx.dim(0), cin = vx.dim(1), h = vx.dim(2), wd = vx.dim(3);
    const std::int64_t cout = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
    const std::int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t wo = (wd + 2 * pad - kw) / stride + 1;
    if (ho < 1 || wo < 1)
        throw ShapeError("conv2d: kernel " + shape_str(vw.shape()) + " too large for input " +
                         shape_str(vx.shape()));
    Tensor out({n, cout, ho, wo});
    for (std::int64_t in = 0; in < n; ++in)
        for (std::int64_t f = 0; f < cout; ++f)
            for (std::int64_t oy = 0; oy < ho; ++oy)
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    double acc = biased ? value(b)[f] : 0.0;
                    for (std::int64_t c = 0; c < cin; ++c)
                        for (std::int64_t ky = 0; ky < kh; ++ky) {
                            const std::int64_t iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                const std::int64_t ix = ox * stride + kx - pad;
                                if (ix < 0 || ix >= wd) continue;
                                acc += vx.at4(in, c, iy, ix) * vw.at4(f, c, ky, kx);
                            }
                        }
                    out.at4(in, f, oy, ox) = acc;
                }
    std::vector<ValueId> ins = biased ? std::vector<ValueId>{x, w, b}
                                      : std::vector<ValueId>{x, w};
    ValueId id = push(std::move(out), "conv2d", std::move(ins), {});
    nodes_.back().back = [this, id, x, w, b, biased, stride, pad, n, cin, h, wd, cout, kh, kw,
                          ho, wo]() {
        const Tensor& g = grads_[static_cast<size_t>(id)];
        const Tensor& vx2 = values_[static_cast<size_t>(x)];
        const Tensor& vw2 = values_[static_cast<size_t>(w)];
        Tensor& gx = grads_[static_cast<size_t>(x)];
        Tensor& gw = grads_[static_cast<size_t>(w)];
        for (std::int64_t in = 0; in < n; ++in)
            for (std::int64_t f = 0; f < cout; ++f)
                for (std::int64_t oy = 0; oy < ho; ++oy)
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const double go = g.at4(in, f, oy, ox);
                        if (biased) grads_[static_cast<size_t>(b)][f] += go;
                        for (std::int64_t c = 0; c < cin; ++c)
                            for (std::int64_t ky = 0; ky < kh; ++ky) {
                                const std::int64_t iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= h) continue;
                                for (std::int64_t kx = 0; kx < kw; ++kx) {
                                    const std::int64_t ix = ox * stride + kx - pad;
                                    if (ix < 0 || ix >= wd) continue;
                                    gx.at4(in, c, iy, ix) += go * vw2.at4(f, c, ky, kx);
                                    gw.at4(f, c, ky, kx) += go * vx2.at4(in, c, iy, ix);
                                }
                            }
                    }
    };
    return id;
}

ValueId Tape::weight_standardize(ValueId w) {
    const Tensor& vw = value(w);
    const std::int64_t n = vw.numel();
    if (n == 0) throw ShapeError("weight_standardize: empty tensor");
    constexpr double kEps = 1e-5;
    double mean = 0;
    for (std::int64_t i = 0; i < n; ++i) mean += vw[i];
    mean /= static_cast<double>(n);
    double var = 0;
    for (std::int64_t i = 0; i < n; ++i) var += (vw[i] - mean) * (vw[i] - mean);
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    Tensor out = vw;
    for (std::int64_t i = 0; i < n; ++i) out[i] = (vw[i] - mean) / (sd + kEps);
    ValueId id = push(std::move(out), "weight_standardize", {w}, {});
    nodes_.back().back = [this, id, w, n, mean, sd]() {
        const Tensor& g = grads_[static_cast<size_t>(id)];
        const Tensor& vw2 = values_[static_cast<size_t>(w)];
        Tensor& gw = grads_[static_cast<size_t>(w)];
        const double denom = sd + 1e-5;
        double gsum = 0, gdot = 0; // sum g_i and sum g_i (w_i - mean)
        for (std::int64_t i = 0; i < n; ++i) {
            gsum += g[i];
            gdot += g[i] * (vw2[i] - mean);
        }
        const double nn = static_cast<double>(n);
        for (std::int64_t i = 0; i < n; ++i) {
            double d = (g[i] - gsum / nn) / denom;
            if (sd > 0)
                d -= (vw2[i] - mean) * gdot / (nn * sd * denom * denom);
            gw[i] += d;
        }
    };
    return id;
}

ValueId Tape::scale_by(ValueId x, ValueId s) {
    const Tensor& vs = value(s);
    if (vs.numel() != 1) throw ShapeError("scale_by: scale must be a 1-element tensor, got " +
                                          shape_str(vs.shape()));
    Tensor out = value(x);
    const double sv = vs[0];
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= sv;
    ValueId id = push(std::move(out), "scale_by", {x, s}, {});
    nodes_.back().back = [this, id, x, s]() {
        const Tensor& g = grads_[static_cast<size_t>(id)];
        const Tensor& vx = values_[static_cast<size_t>(x)];
        const double sv = values_[static_cast<size_t>(s)][0];
        Tensor& gx = grads_[static_cast<size_t>(x)];
        Tensor& gs = grads_[static_cast<size_t>(s)];
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            gx[i] += g[i] * sv;
            gs[0] += g[i] * vx[i];
        }
    };
    return id;
}

ValueId Tape::affine(ValueId x, double slope, double intercept) {
    Tensor out = value(x);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = slope * out[i] + intercept;
    ValueId id = push(std::move(out), "affine", {x}, {});
    nodes_.back().back = [this, id, x, slope]() {
        const Tensor& g = grads_[static_cast<size_t>(id)];
        Tensor& gx = grads_[static_cast<size_t>(x)];
        for (std::int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * slope;
    };
    return id;
}

ValueId Tape::softmax_cross_entropy(ValueId logits, const std::vector<int>& labels) {
    const Tensor& vl = value(logits);
    if (vl.rank() != 2)
        throw ShapeError("softmax_cross_entropy: logits " + shape_str(vl.shape()));
    const std::int64_t n = vl.dim(0), k = vl.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != n)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch " + std::to_string(n));
    // probs kept for the backward closure
    Tensor probs({n, k});
    double loss = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= k)
            throw ContractError("softmax_cross_entropy: label " +
                                std::to_string(labels[static_cast<size_t>(i)]) +
                                " outside [0," + std::to_string(k) + ")");
        double mx = vl[i * k];
        for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, vl[i * k + j]);
        double z = 0;
        for (std::int64_t j = 0; j < k; ++j) z += std::exp(vl[i * k + j] - mx);
        const double logz = std::log(z) + mx;
        for (std::int64_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(vl[i * k + j] - logz);
        loss += logz - vl[i * k + labels[static_cast<size_t>(i)]];
    }
    loss /= static_cast<double>(n);
    ValueId id = push(Tensor::scalar(loss), "softmax_cross_entropy", {logits}, {});
    nodes_.back().back = [this, id, logits, labels, probs, n, k]() {
        const double g = grads_[static_cast<size_t>(id)][0];
        Tensor& gl = grads_[static_cast<size_t>(logits)];
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < k; ++j) {
                double d = probs[i * k + j];
                if (j == labels[static_cast<size_t>(i)]) d -= 1.0;
                gl[i * k + j] += g * d / static_cast<double>(n);
            }
    };
    return id;
}

void Tape::backward(ValueId loss) {
    if (value(loss).numel() != 1)
        throw ContractError("backward: loss must be scalar, got " +
                            shape_str(value(loss).shape()));
    grads_.clear();
    grads_.reserve(values_.size());
    for (const Tensor& v : values_) grads_.push_back(Tensor::zeros(v.shape()));
    grads_[static_cast<size_t>(loss)][0] = 1.0;
    for (size_t i = nodes_.size(); i-- > 0;)
        if (nodes_[i].back) nodes_[i].back();
    backward_done_ = true;
}

} // namespace daq
