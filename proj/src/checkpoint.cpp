#include "daq/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "daq/error.hpp"

namespace daq {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'Q', 'C', 'K', 'P', 'T', '\0'};

void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u8(std::ostream& os, std::uint8_t v) { put_bytes(os, &v, 1); }

void put_u32(std::ostream& os, std::uint32_t v) {
    std::uint8_t b[4] = {std::uint8_t(v), std::uint8_t(v >> 8), std::uint8_t(v >> 16),
                         std::uint8_t(v >> 24)};
    put_bytes(os, b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
}

void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    put_bytes(os, s.data(), s.size());
}

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    size_t pos = 0;
    const std::string& path;

    void need(size_t n) {
        if (pos + n > bytes.size())
            throw IoError("truncated checkpoint '" + path + "' at offset " +
                          std::to_string(pos));
    }
    std::uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = std::uint32_t(bytes[pos]) | (std::uint32_t(bytes[pos + 1]) << 8) |
                          (std::uint32_t(bytes[pos + 2]) << 16) |
                          (std::uint32_t(bytes[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        const std::uint64_t hi = u32();
        return lo | (hi << 32);
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
};

} // namespace

void Checkpoint::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint '" + path + "'");
    put_bytes(os, kMagic, 8);
    put_u32(os, version);
    put_u64(os, seed);
    put_u32(os, epoch);
    put_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_string(os, name);
        put_u8(os, static_cast<std::uint8_t>(t.dtype()));
        put_u8(os, static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
        if (t.dtype() == DType::kF32)
            for (std::int64_t i = 0; i < t.numel(); ++i)
                put_f32(os, static_cast<float>(t[i]));
        else
            for (std::int64_t i = 0; i < t.numel(); ++i) put_f64(os, t[i]);
    }
    put_u32(os, static_cast<std::uint32_t>(quant_params.size()));
    for (const auto& rec : quant_params) {
        put_string(os, rec.name);
        put_f64(os, rec.lower);
        put_f64(os, rec.upper);
        put_f64(os, rec.conv_scale);
        put_u8(os, rec.learn_lower ? 1 : 0);
    }
    if (!os) throw IoError("write failure on checkpoint '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    Reader r{bytes, 0, path};
    r.need(8);
    if (std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw IoError("bad checkpoint magic in '" + path + "'");
    r.pos = 8;
    Checkpoint ck;
    ck.version = r.u32();
    if (ck.version != 1)
        throw IoError("unsupported checkpoint version " + std::to_string(ck.version));
    ck.seed = r.u64();
    ck.epoch = r.u32();
    const std::uint32_t ntensors = r.u32();
    for (std::uint32_t i = 0; i < ntensors; ++i) {
        const std::string name = r.str();
        const DType dtype = static_cast<DType>(r.u8());
        const int ndim = r.u8();
        Shape shape;
        for (int d = 0; d < ndim; ++d) shape.push_back(r.u32());
        Tensor t(shape, dtype);
        if (dtype == DType::kF32)
            for (std::int64_t k = 0; k < t.numel(); ++k) t[k] = r.f32();
        else
            for (std::int64_t k = 0; k < t.numel(); ++k) t[k] = r.f64();
        ck.tensors.emplace_back(name, std::move(t));
    }
    const std::uint32_t nquant = r.u32();
    for (std::uint32_t i = 0; i < nquant; ++i) {
        QuantParamRecord rec;
        rec.name = r.str();
        rec.lower = r.f64();
        rec.upper = r.f64();
        rec.conv_scale = r.f64();
        rec.learn_lower = r.u8() != 0;
        ck.quant_params.push_back(std::move(rec));
    }
    return ck;
}

Checkpoint Checkpoint::from_network(const Network& net, std::uint64_t seed,
                                    std::uint32_t epoch) {
    Checkpoint ck;
    ck.seed = seed;
    ck.epoch = epoch;
    const auto& layers = net.layers();
    for (size_t i = 0; i < layers.size(); ++i) {
        const Layer& layer = layers[i];
        if (!layer.spec.weighted()) continue;
        const std::string prefix = "layer" + std::to_string(i);
        ck.tensors.emplace_back(prefix + ".W", layer.weight);
        ck.tensors.emplace_back(prefix + ".b", layer.bias);
        if (layer.wq)
            ck.quant_params.push_back({prefix + ".wq", layer.wq->lower[0], layer.wq->upper[0],
                                       layer.scale[0], layer.wq->learn_lower});
        if (layer.aq)
            ck.quant_params.push_back({prefix + ".aq", layer.aq->lower[0], layer.aq->upper[0],
                                       layer.scale[0], layer.aq->learn_lower});
    }
    return ck;
}

void Checkpoint::apply_to(Network& net) const {
    auto& layers = net.layers();
    auto find_tensor = [&](const std::string& name) -> const Tensor& {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw IoError("checkpoint missing tensor '" + name + "'");
    };
    for (size_t i = 0; i < layers.size(); ++i) {
        Layer& layer = layers[i];
        if (!layer.spec.weighted()) continue;
        const std::string prefix = "layer" + std::to_string(i);
        const Tensor& w = find_tensor(prefix + ".W");
        const Tensor& b = find_tensor(prefix + ".b");
        if (!w.same_shape(layer.weight) || !b.same_shape(layer.bias))
            throw ShapeError("checkpoint tensor " + prefix + " " + shape_str(w.shape()) +
                             " does not match network " + shape_str(layer.weight.shape()));
        layer.weight = w;
        layer.bias = b;
        for (const auto& rec : quant_params) {
            if (rec.name == prefix + ".wq" && layer.wq) {
                layer.wq->lower = Tensor::scalar(rec.lower);
                layer.wq->upper = Tensor::scalar(rec.upper);
                layer.wq->learn_lower = rec.learn_lower;
                layer.scale = Tensor::scalar(rec.conv_scale);
            } else if (rec.name == prefix + ".aq" && layer.aq) {
                layer.aq->lower = Tensor::scalar(rec.lower);
                layer.aq->upper = Tensor::scalar(rec.upper);
                layer.aq->learn_lower = rec.learn_lower;
                layer.scale = Tensor::scalar(rec.conv_scale);
            }
        }
    }
}

} // namespace daq
