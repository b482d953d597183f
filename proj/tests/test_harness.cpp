#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "daq/checkpoint.hpp"
#include "daq/config.hpp"
#include "daq/dataset.hpp"
#include "daq/train.hpp"

using namespace daq;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("daq_test_" + std::to_string(std::uint64_t(::getpid())) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

void put_be32(std::ofstream& f, std::uint32_t v) {
    const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    f.write(b, 4);
}

void write_idx_images(const std::string& path, int n, int rows, int cols,
                      int truncate_bytes = 0) {
    std::ofstream f(path, std::ios::binary);
    const char magic[4] = {0, 0, 0x08, 0x03};
    f.write(magic, 4);
    put_be32(f, std::uint32_t(n));
    put_be32(f, std::uint32_t(rows));
    put_be32(f, std::uint32_t(cols));
    const int total = n * rows * cols - truncate_bytes;
    for (int i = 0; i < total; ++i) {
        const char px = char((i * 7) % 256);
        f.write(&px, 1);
    }
}

void write_idx_labels(const std::string& path, int n) {
    std::ofstream f(path, std::ios::binary);
    const char magic[4] = {0, 0, 0x08, 0x01};
    f.write(magic, 4);
    put_be32(f, std::uint32_t(n));
    for (int i = 0; i < n; ++i) {
        const char lb = char(i % 10);
        f.write(&lb, 1);
    }
}

RunConfig tiny_blobs_config(const std::string& out_dir) {
    RunConfig cfg;
    cfg.network_kind = "mlp";
    cfg.hidden = {16, 16};
    cfg.dataset_kind = "blobs";
    cfg.blobs_n = 120;
    cfg.blobs_val_n = 60;
    cfg.blobs_classes = 3;
    cfg.blobs_dim = 4;
    cfg.blobs_spread = 0.6;
    cfg.bits_w = 1;
    cfg.bits_a = 32;
    cfg.weight_kind = "daq";
    cfg.act_kind = "daq";
    cfg.epochs = 5;
    cfg.batch_size = 30;
    cfg.lr_weights = 0.02;
    cfg.lr_quant = 1e-4;
    cfg.seed = 3;
    cfg.out_dir = out_dir;
    return cfg;
}

} // namespace

TEST_CASE("IDX loader parses a synthetic fixture and rejects damage") {
    TempDir dir;
    const std::string img = dir / "images.idx";
    const std::string lbl = dir / "labels.idx";
    write_idx_images(img, 4, 28, 28);
    write_idx_labels(lbl, 4);

    const Dataset ds = load_idx(img, lbl);
    CHECK(ds.images.shape() == Shape{4, 1, 28, 28});
    CHECK(ds.labels.size() == 4);
    CHECK(ds.images.dtype() == DType::kF32);
    CHECK(ds.images[0] == 0.0);
    CHECK(ds.images[1] == doctest::Approx(7.0 / 255.0).epsilon(1e-6));
    for (double v : ds.images.vec()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    // bad magic
    const std::string bad = dir / "bad.idx";
    {
        std::ofstream f(bad, std::ios::binary);
        const char magic[4] = {1, 2, 3, 4};
        f.write(magic, 4);
    }
    CHECK_THROWS_WITH_AS(load_idx(bad, lbl), doctest::Contains("magic"), IoError);

    // truncation names expected vs actual length
    const std::string trunc = dir / "trunc.idx";
    write_idx_images(trunc, 4, 28, 28, 100);
    CHECK_THROWS_WITH_AS(load_idx(trunc, lbl), doctest::Contains("truncated"), IoError);

    // image/label count mismatch
    const std::string lbl5 = dir / "labels5.idx";
    write_idx_labels(lbl5, 5);
    CHECK_THROWS_WITH_AS(load_idx(img, lbl5), doctest::Contains("mismatch"), IoError);

    CHECK_THROWS_AS(load_idx(dir / "missing.idx", lbl), IoError);
}

TEST_CASE("make_blobs: determinism, separation, balance") {
    const Dataset a = make_blobs(100, 2, 4, 1.0, 7);
    const Dataset b = make_blobs(100, 2, 4, 1.0, 7);
    REQUIRE(a.images.numel() == b.images.numel());
    for (std::int64_t i = 0; i < a.images.numel(); ++i) CHECK(a.images[i] == b.images[i]);
    CHECK(a.labels == b.labels);

    // centers at least 4 * spread apart: class means should separate cleanly
    const int dim = 4;
    double mean0[4] = {0, 0, 0, 0}, mean1[4] = {0, 0, 0, 0};
    int n0 = 0, n1 = 0;
    for (int i = 0; i < 100; ++i) {
        for (int d = 0; d < dim; ++d) {
            if (a.labels[size_t(i)] == 0) mean0[d] += a.images[i * dim + d];
            else mean1[d] += a.images[i * dim + d];
        }
        (a.labels[size_t(i)] == 0 ? n0 : n1)++;
    }
    double dist2 = 0;
    for (int d = 0; d < dim; ++d) {
        mean0[d] /= n0;
        mean1[d] /= n1;
        dist2 += (mean0[d] - mean1[d]) * (mean0[d] - mean1[d]);
    }
    CHECK(std::sqrt(dist2) > 3.0); // sample means of centers 4.0 apart

    // round-robin labels balance to +/-1
    const Dataset c = make_blobs(101, 3, 2, 0.5, 1);
    int counts[3] = {0, 0, 0};
    for (int lb : c.labels) counts[lb]++;
    CHECK(std::abs(counts[0] - counts[1]) <= 1);
    CHECK(std::abs(counts[1] - counts[2]) <= 1);

    CHECK_THROWS_AS(make_blobs(10, 1, 4, 1.0, 1), ConfigError);
    CHECK_THROWS_AS(make_blobs(10, 2, 1, 1.0, 1), ConfigError);
}

TEST_CASE("RunConfig file parsing, overrides, validation") {
    TempDir dir;
    const std::string path = dir / "run.cfg";
    {
        std::ofstream f(path);
        f << "# comment\n"
          << "network.kind = mlp\n"
          << "network.hidden = 8,4\n"
          << "quant.bits_w = 2   # inline comment\n"
          << "train.epochs = 7\n"
          << "train.seed = 99\n";
    }
    RunConfig cfg = RunConfig::from_file(path);
    CHECK(cfg.hidden == std::vector<int>{8, 4});
    CHECK(cfg.bits_w == 2);
    CHECK(cfg.epochs == 7);
    CHECK(cfg.seed == 99);

    cfg.set("train.epochs", "11");
    CHECK(cfg.epochs == 11);
    CHECK_THROWS_AS(cfg.set("nope.key", "1"), ConfigError);
    CHECK_THROWS_AS(cfg.set("train.epochs", "abc"), ConfigError);

    cfg.bits_w = 9;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.bits_w = 32;
    cfg.validate();

    RunConfig idx_cfg;
    idx_cfg.dataset_kind = "idx";
    CHECK_THROWS_AS(idx_cfg.validate(), ConfigError); // missing dataset paths

    RunConfig badkind;
    badkind.weight_kind = "wat";
    CHECK_THROWS_AS(badkind.validate(), ConfigError);
}

TEST_CASE("layer_specs quantizes everything but the first and last weighted layers") {
    RunConfig cfg = tiny_blobs_config(".");
    cfg.hidden = {16, 16};
    const auto specs = cfg.layer_specs(1, 1, 4, 3);
    // Flatten, Dense, ReLU, Dense, ReLU, Dense
    REQUIRE(specs.size() == 6);
    CHECK(!specs[1].weight_quantizer.has_value());
    CHECK(specs[3].weight_quantizer.has_value());
    CHECK(specs[3].bits_w == 1);
    CHECK(!specs[3].activation_quantizer.has_value()); // bits_a = 32
    CHECK(!specs[5].weight_quantizer.has_value());

    cfg.quantize_all = true;
    const auto all = cfg.layer_specs(1, 1, 4, 3);
    CHECK(all[1].weight_quantizer.has_value());
    CHECK(all[5].weight_quantizer.has_value());

    RunConfig conv = cfg;
    conv.network_kind = "conv";
    conv.quantize_all = false;
    conv.bits_a = 2;
    const auto cspecs = conv.layer_specs(1, 28, 28, 10);
    // conv, relu, conv, relu, flatten, dense, relu, dense
    REQUIRE(cspecs.size() == 8);
    CHECK(cspecs[0].kind == LayerKind::kConv2d);
    CHECK(!cspecs[0].weight_quantizer.has_value());
    CHECK(cspecs[2].weight_quantizer.has_value());
    CHECK(cspecs[2].activation_quantizer.has_value());
    CHECK(cspecs[5].kind == LayerKind::kDense);
    CHECK(cspecs[5].in == 16 * 7 * 7);
    CHECK(cspecs[5].weight_quantizer.has_value());
    CHECK(!cspecs[7].weight_quantizer.has_value());
}

TEST_CASE("init_quantizers: exact spec values on a constructed calibration batch") {
    // layer1 input passes through a ReLU; identity first layer makes the
    // activation statistics exact: values {1,3,3,1} have sigma == 1
    auto make_net = [](bool with_relu) {
        std::vector<LayerSpec> specs;
        LayerSpec flat;
        flat.kind = LayerKind::kFlatten;
        specs.push_back(flat);
        LayerSpec d0;
        d0.kind = LayerKind::kDense;
        d0.in = 2;
        d0.out = 2;
        specs.push_back(d0);
        if (with_relu) {
            LayerSpec r;
            r.kind = LayerKind::kRelu;
            specs.push_back(r);
        }
        LayerSpec d1;
        d1.kind = LayerKind::kDense;
        d1.in = 2;
        d1.out = 2;
        d1.weight_quantizer = QuantizerKind::parse("daq");
        d1.bits_w = 2;
        d1.activation_quantizer = QuantizerKind::parse("daq");
        d1.bits_a = 2;
        specs.push_back(d1);
        Network net = Network::build(specs, 1);
        net.layers()[1].weight = Tensor::from({2, 2}, {1, 0, 0, 1});
        net.layers()[1].bias = Tensor::zeros({2});
        return net;
    };

    const Tensor calib = Tensor::from({2, 1, 1, 2}, {1, 3, 3, 1});

    Network relu_net = make_net(true);
    init_quantizers(relu_net, calib);
    const Layer& ql = relu_net.layers()[3];
    CHECK(ql.wq->lower[0] == -3.0);
    CHECK(ql.wq->upper[0] == 3.0);
    CHECK(ql.wq->learn_lower);
    CHECK(ql.aq->lower[0] == 0.0); // fixed at zero after ReLU
    CHECK(ql.aq->upper[0] == 3.0); // 3 sigma with sigma exactly 1
    CHECK(!ql.aq->learn_lower);
    CHECK(ql.scale[0] == 1.0);

    Network lin_net = make_net(false);
    init_quantizers(lin_net, calib);
    const Layer& ql2 = lin_net.layers()[2];
    CHECK(ql2.aq->lower[0] == -3.0);
    CHECK(ql2.aq->upper[0] == 3.0);
    CHECK(ql2.aq->learn_lower);

    // zero-variance activations warn and fall back to sigma = 1
    Network flat_net = make_net(false);
    std::ostringstream warn;
    init_quantizers(flat_net, Tensor::full({2, 1, 1, 2}, 0.5), &warn);
    CHECK(warn.str().find("zero variance") != std::string::npos);
    CHECK(flat_net.layers()[2].aq->upper[0] == 3.0);
}

TEST_CASE("full-precision sanity: separable blobs reach 99% train accuracy") {
    TempDir dir;
    RunConfig cfg = tiny_blobs_config(dir / "fp");
    cfg.bits_w = 32;
    cfg.bits_a = 32;
    cfg.epochs = 200;
    cfg.blobs_n = 150;
    cfg.hidden = {32, 32};
    cfg.lr_weights = 0.05;
    const TrainOutput out = train(cfg, nullptr);
    double best = 0;
    for (const auto& rec : out.log) best = std::max(best, rec.train_acc);
    CHECK(best >= 0.99);
}

TEST_CASE("daq W=1 training: quantizer gap is exactly zero every epoch") {
    TempDir dir;
    RunConfig cfg = tiny_blobs_config(dir / "daq1");
    const TrainOutput out = train(cfg, nullptr);
    REQUIRE(out.log.size() == 5);
    for (const auto& rec : out.log) {
        CHECK(rec.mean_gap == 0.0);
        for (const auto& [slot, gap] : rec.layer_gaps) CHECK(gap == 0.0);
    }
    CHECK(fs::exists(out.checkpoint_path));
    CHECK(fs::exists(out.metrics_path));
}

TEST_CASE("determinism: identical seeds give bit-identical metric logs") {
    TempDir dir;
    RunConfig cfg = tiny_blobs_config(dir / "det_a");
    const TrainOutput a = train(cfg, nullptr);
    cfg.out_dir = dir / "det_b";
    const TrainOutput b = train(cfg, nullptr);
    REQUIRE(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].loss == b.log[i].loss);
        CHECK(a.log[i].train_acc == b.log[i].train_acc);
        CHECK(a.log[i].val_acc == b.log[i].val_acc);
        CHECK(a.log[i].mean_gap == b.log[i].mean_gap);
        CHECK(a.log[i].mean_beta == b.log[i].mean_beta);
    }
    // CSV files match byte for byte
    std::ifstream fa(a.metrics_path), fb(b.metrics_path);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    CHECK(sa.str() == sb.str());
    CHECK(sa.str().rfind("epoch,loss,train_acc,val_acc,lr,mean_gap,mean_beta\n", 0) == 0);

    // a different seed changes the trajectory
    cfg.seed = 4;
    cfg.out_dir = dir / "det_c";
    const TrainOutput c = train(cfg, nullptr);
    CHECK(c.log.back().loss != a.log.back().loss);
}

TEST_CASE("checkpoint round-trip reproduces evaluation bit-exactly") {
    TempDir dir;
    RunConfig cfg = tiny_blobs_config(dir / "ck");
    const TrainOutput out = train(cfg, nullptr);
    const DataSplits data = load_dataset(cfg);
    const double direct_round = evaluate(out.net, data.val, EvalMode::kRounding);
    const double direct_soft = evaluate(out.net, data.val, EvalMode::kTrainingTime);

    const Checkpoint ck = Checkpoint::load(out.checkpoint_path);
    CHECK(ck.seed == cfg.seed);
    CHECK(ck.epoch == std::uint32_t(cfg.epochs));
    Network restored = network_from_checkpoint(cfg, ck, data.val);
    CHECK(evaluate(restored, data.val, EvalMode::kRounding) == direct_round);
    CHECK(evaluate(restored, data.val, EvalMode::kTrainingTime) == direct_soft);

    // restored tensors match bit for bit
    Network shell = network_from_checkpoint(cfg, ck, data.val);
    const auto& lw = out.net.layers();
    const auto& lr = shell.layers();
    for (size_t i = 0; i < lw.size(); ++i) {
        if (!lw[i].spec.weighted()) continue;
        for (std::int64_t k = 0; k < lw[i].weight.numel(); ++k)
            CHECK(lw[i].weight[k] == lr[i].weight[k]);
    }

    // shape mismatch is a structured error
    RunConfig other = cfg;
    other.hidden = {8, 8};
    const DataSplits data2 = load_dataset(other);
    CHECK_THROWS_AS(network_from_checkpoint(other, ck, data2.val), ShapeError);

    // a full-precision checkpoint can seed a quantized run
    RunConfig fp = cfg;
    fp.bits_w = 32;
    fp.out_dir = dir / "fp_init";
    const TrainOutput fp_out = train(fp, nullptr);
    RunConfig warm = cfg;
    warm.init_checkpoint = fp_out.checkpoint_path;
    warm.out_dir = dir / "warm";
    const TrainOutput warm_out = train(warm, nullptr);
    CHECK(warm_out.log.size() == size_t(cfg.epochs));
}

TEST_CASE("weight decay never touches quantizer parameters") {
    TempDir dir;
    RunConfig cfg = tiny_blobs_config(dir / "wd0");
    cfg.blobs_n = cfg.batch_size; // exactly one optimizer step
    cfg.epochs = 1;
    cfg.weight_decay = 0.0;
    const TrainOutput a = train(cfg, nullptr);
    cfg.weight_decay = 10.0;
    cfg.out_dir = dir / "wd10";
    const TrainOutput b = train(cfg, nullptr);

    bool weights_differ = false;
    for (size_t i = 0; i < a.net.layers().size(); ++i) {
        const Layer& la = a.net.layers()[i];
        const Layer& lb = b.net.layers()[i];
        if (!la.spec.weighted()) continue;
        for (std::int64_t k = 0; k < la.weight.numel(); ++k)
            if (la.weight[k] != lb.weight[k]) weights_differ = true;
        if (la.wq) {
            CHECK(la.wq->lower[0] == lb.wq->lower[0]);
            CHECK(la.wq->upper[0] == lb.wq->upper[0]);
            CHECK(la.scale[0] == lb.scale[0]);
        }
    }
    CHECK(weights_differ);
}

TEST_CASE("untrained networks score at chance level") {
    RunConfig cfg;
    cfg.dataset_kind = "blobs";
    cfg.blobs_n = 2000;
    cfg.blobs_val_n = 2000;
    cfg.blobs_classes = 10;
    cfg.blobs_dim = 8;
    cfg.bits_w = 32;
    cfg.bits_a = 32;
    const DataSplits data = load_dataset(cfg);
    const auto& im = data.val.images;
    double mean_acc = 0;
    const int nets = 5;
    for (int seed = 0; seed < nets; ++seed) {
        Network net =
            Network::build(cfg.layer_specs(im.dim(1), im.dim(2), im.dim(3), 10), 40 + seed);
        mean_acc += evaluate(net, data.val, EvalMode::kRounding);
    }
    mean_acc /= nets;
    CHECK(mean_acc >= 0.05);
    CHECK(mean_acc <= 0.15);
}

TEST_CASE("non-finite loss aborts with diagnostics after the lr fallback") {
    TempDir dir;
    RunConfig cfg = tiny_blobs_config(dir / "blowup");
    cfg.lr_weights = 1e18;
    cfg.epochs = 2;
    CHECK_THROWS_WITH_AS(train(cfg, nullptr), doctest::Contains("non-finite"), TrainError);
}

TEST_CASE("annealed training ends at beta 48 and ablate reports table rows") {
    TempDir dir;
    RunConfig cfg = tiny_blobs_config(dir / "ann");
    cfg.epochs = 3;
    cfg.blobs_n = 60;
    cfg.blobs_val_n = 30;
    cfg.weight_kind = "annealed:2:48";
    cfg.act_kind = "annealed:2:48";
    const TrainOutput out = train(cfg, nullptr);
    CHECK(out.log.front().mean_beta == 2.0);
    CHECK(out.log.back().mean_beta == 48.0);

    RunConfig base = tiny_blobs_config(dir / "ablate");
    base.epochs = 3;
    base.blobs_n = 60;
    base.blobs_val_n = 30;
    const std::vector<QuantizerKind> variants = {QuantizerKind::parse("daq"),
                                                 QuantizerKind::parse("kernel:4")};
    const auto rows = ablate(base, variants, {1, 2}, nullptr);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].variant == "daq");
    CHECK(rows[0].gap_mean == 0.0);
    CHECK(rows[1].gap_mean > 0.0);
    write_ablation_csv(dir / "table.csv", rows);
    std::ifstream f(dir / "table.csv");
    std::string header;
    std::getline(f, header);
    CHECK(header ==
          "variant,acc_rounding_mean,acc_rounding_std,acc_training_mean,acc_training_std,"
          "gap,ms_per_iter,final_beta");
}
