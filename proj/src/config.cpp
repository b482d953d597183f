#include "daq/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "daq/error.hpp"

namespace daq {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

long parse_long(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        long r = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + key + "': expected bool, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(static_cast<int>(parse_long(key, item)));
    }
    if (out.empty()) throw ConfigError("key '" + key + "': empty list");
    return out;
}

} // namespace

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> k = {
        "network.kind",        "network.hidden",       "network.quantize_all",
        "dataset.kind",        "dataset.blobs_n",      "dataset.blobs_val_n",
        "dataset.blobs_classes", "dataset.blobs_dim",  "dataset.blobs_spread",
        "dataset.train_images", "dataset.train_labels", "dataset.test_images",
        "dataset.test_labels", "quant.bits_w",         "quant.bits_a",
        "quant.weight_kind",   "quant.act_kind",       "train.epochs",
        "train.batch_size",    "train.lr_weights",     "train.lr_quant",
        "train.momentum",      "train.weight_decay",   "train.seed",
        "train.init_checkpoint", "out.dir"};
    return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (key == "network.kind") network_kind = v;
    else if (key == "network.hidden") hidden = parse_int_list(key, v);
    else if (key == "network.quantize_all") quantize_all = parse_bool(key, v);
    else if (key == "dataset.kind") dataset_kind = v;
    else if (key == "dataset.blobs_n") blobs_n = parse_long(key, v);
    else if (key == "dataset.blobs_val_n") blobs_val_n = parse_long(key, v);
    else if (key == "dataset.blobs_classes") blobs_classes = static_cast<int>(parse_long(key, v));
    else if (key == "dataset.blobs_dim") blobs_dim = static_cast<int>(parse_long(key, v));
    else if (key == "dataset.blobs_spread") blobs_spread = parse_double(key, v);
    else if (key == "dataset.train_images") idx_train_images = v;
    else if (key == "dataset.train_labels") idx_train_labels = v;
    else if (key == "dataset.test_images") idx_test_images = v;
    else if (key == "dataset.test_labels") idx_test_labels = v;
    else if (key == "quant.bits_w") bits_w = static_cast<int>(parse_long(key, v));
    else if (key == "quant.bits_a") bits_a = static_cast<int>(parse_long(key, v));
    else if (key == "quant.weight_kind") weight_kind = v;
    else if (key == "quant.act_kind") act_kind = v;
    else if (key == "train.epochs") epochs = static_cast<int>(parse_long(key, v));
    else if (key == "train.batch_size") batch_size = static_cast<int>(parse_long(key, v));
    else if (key == "train.lr_weights") lr_weights = parse_double(key, v);
    else if (key == "train.lr_quant") lr_quant = parse_double(key, v);
    else if (key == "train.momentum") momentum = parse_double(key, v);
    else if (key == "train.weight_decay") weight_decay = parse_double(key, v);
    else if (key == "train.seed") seed = static_cast<std::uint64_t>(parse_long(key, v));
    else if (key == "train.init_checkpoint") init_checkpoint = v;
    else if (key == "out.dir") out_dir = v;
    else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

void RunConfig::validate() const {
    auto bits_ok = [](int b) { return b == 32 || (b >= 1 && b <= 8); };
    if (!bits_ok(bits_w) || !bits_ok(bits_a))
        throw ConfigError("bit-widths must be in {1..8, 32}, got W=" + std::to_string(bits_w) +
                          " A=" + std::to_string(bits_a));
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (network_kind != "mlp" && network_kind != "conv")
        throw ConfigError("network.kind must be 'mlp' or 'conv', got '" + network_kind + "'");
    if (dataset_kind != "blobs" && dataset_kind != "idx")
        throw ConfigError("dataset.kind must be 'blobs' or 'idx', got '" + dataset_kind + "'");
    if (dataset_kind == "idx") {
        if (idx_train_images.empty() || idx_train_labels.empty())
            throw ConfigError("dataset.train_images/train_labels required for dataset.kind=idx");
    } else {
        if (blobs_n < 1 || blobs_val_n < 1) throw ConfigError("blobs sizes must be >= 1");
        if (blobs_classes < 2) throw ConfigError("dataset.blobs_classes must be >= 2");
        if (blobs_dim < 2) throw ConfigError("dataset.blobs_dim must be >= 2");
    }
    if (hidden.empty()) throw ConfigError("network.hidden must not be empty");
    for (int h : hidden)
        if (h < 1) throw ConfigError("network.hidden entries must be >= 1");
    if (!(lr_weights > 0) || !(lr_quant > 0)) throw ConfigError("learning rates must be positive");
    if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
    QuantizerKind::parse(weight_kind);
    QuantizerKind::parse(act_kind);
}

std::vector<LayerSpec> RunConfig::layer_specs(std::int64_t channels, std::int64_t height,
                                              std::int64_t width, int classes) const {
    validate();
    std::vector<LayerSpec> specs;
    const bool w_on = bits_w != 32;
    const bool a_on = bits_a != 32;
    const QuantizerKind wk = parsed_weight_kind();
    const QuantizerKind ak = parsed_act_kind();

    // indices of weighted layers, to mark all but the first and last as
    // quantized (or all of them with network.quantize_all)
    std::vector<size_t> weighted;
    auto dense = [&](std::int64_t in, std::int64_t out) {
        LayerSpec s;
        s.kind = LayerKind::kDense;
        s.in = in;
        s.out = out;
        weighted.push_back(specs.size());
        specs.push_back(s);
    };
    auto conv = [&](std::int64_t in, std::int64_t out, int k, int stride, int pad) {
        LayerSpec s;
        s.kind = LayerKind::kConv2d;
        s.in = in;
        s.out = out;
        s.kernel = k;
        s.stride = stride;
        s.pad = pad;
        weighted.push_back(specs.size());
        specs.push_back(s);
    };
    auto relu = [&]() {
        LayerSpec s;
        s.kind = LayerKind::kRelu;
        specs.push_back(s);
    };
    auto flat = [&]() {
        LayerSpec s;
        s.kind = LayerKind::kFlatten;
        specs.push_back(s);
    };

    if (network_kind == "mlp") {
        flat();
        std::int64_t in = channels * height * width;
        for (int h : hidden) {
            dense(in, h);
            relu();
            in = h;
        }
        dense(in, classes);
    } else {
        conv(channels, 8, 3, 2, 1);
        relu();
        conv(8, 16, 3, 2, 1);
        relu();
        flat();
        const std::int64_t ho = (height + 2 - 3) / 2 + 1;
        const std::int64_t wo = (width + 2 - 3) / 2 + 1;
        const std::int64_t h2 = (ho + 2 - 3) / 2 + 1;
        const std::int64_t w2 = (wo + 2 - 3) / 2 + 1;
        dense(16 * h2 * w2, 64);
        relu();
        dense(64, classes);
    }

    for (size_t idx = 0; idx < weighted.size(); ++idx) {
        const bool edge = (idx == 0 || idx + 1 == weighted.size());
        if (edge && !quantize_all) continue;
        LayerSpec& s = specs[weighted[idx]];
        if (w_on) {
            s.weight_quantizer = wk;
            s.bits_w = bits_w;
        }
        if (a_on) {
            s.activation_quantizer = ak;
            s.bits_a = bits_a;
        }
    }
    return specs;
}

} // namespace daq
