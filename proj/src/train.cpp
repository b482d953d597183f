#include "daq/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>

#include "daq/error.hpp"
#include "daq/optim.hpp"
#include "daq/rng.hpp"

namespace daq {

namespace {

Tensor gather_images(const Dataset& ds, const std::vector<std::int64_t>& idx) {
    Shape shape = ds.images.shape();
    shape[0] = static_cast<std::int64_t>(idx.size());
    Tensor out(shape, ds.images.dtype());
    const std::int64_t stride = ds.images.numel() / ds.images.dim(0);
    for (size_t i = 0; i < idx.size(); ++i)
        for (std::int64_t k = 0; k < stride; ++k)
            out[static_cast<std::int64_t>(i) * stride + k] = ds.images[idx[i] * stride + k];
    return out;
}

std::vector<int> gather_labels(const Dataset& ds, const std::vector<std::int64_t>& idx) {
    std::vector<int> out(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) out[i] = ds.labels[static_cast<size_t>(idx[i])];
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct SlotStats {
    std::string name;
    double gap = 0;
    double beta = 0;
};

// Gap and mean beta per quantizer slot, from the saved contexts of a
// training-mode forward on a fixed batch.
std::vector<SlotStats> slot_stats(const Network& net, const Tape& tape,
                                  const ForwardResult& res) {
    std::vector<SlotStats> out;
    for (const auto& [slot, node] : res.quant_nodes) {
        const auto& saved = tape.quantize_saved(node);
        const size_t layer_idx = static_cast<size_t>(std::stoi(slot.substr(5)));
        const Layer& layer = net.layers()[layer_idx];
        const bool is_weight = slot.find(".wq") != std::string::npos;
        const QuantizerSlot& q = is_weight ? *layer.wq : *layer.aq;
        SlotStats st;
        st.name = slot;
        for (const QuantSavedElem& e : saved) {
            const double soft = training_time_value(q.kind, e.x, q.spec, e.beta);
            const double hard = rounding_output(e.x, q.spec);
            st.gap += std::abs(soft - hard);
            st.beta += e.beta;
        }
        const double n = static_cast<double>(saved.size());
        st.gap /= n;
        st.beta /= n;
        out.push_back(std::move(st));
    }
    return out;
}

double grad_norm(const Tensor& g) {
    double s = 0;
    for (std::int64_t i = 0; i < g.numel(); ++i) s += g[i] * g[i];
    return std::sqrt(s);
}

bool all_finite(const Tensor& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(t[i])) return false;
    return true;
}

struct OptimizerStates {
    std::vector<Tensor> sgd_velocity;   // parallel to weight-group params
    std::vector<AdamState> adam_states; // parallel to quantizer-group params
};

} // namespace

DataSplits load_dataset(const RunConfig& cfg) {
    cfg.validate();
    DataSplits splits;
    if (cfg.dataset_kind == "blobs") {
        splits.train = make_blobs(cfg.blobs_n, cfg.blobs_classes, cfg.blobs_dim,
                                  cfg.blobs_spread, cfg.seed * 2654435761ULL + 1);
        splits.train.tag = "blobs-train";
        splits.val = make_blobs(cfg.blobs_val_n, cfg.blobs_classes, cfg.blobs_dim,
                                cfg.blobs_spread, cfg.seed * 2654435761ULL + 2);
        splits.val.tag = "blobs-val";
    } else {
        splits.train = load_idx(cfg.idx_train_images, cfg.idx_train_labels);
        splits.train.tag = "idx-train";
        if (!cfg.idx_test_images.empty()) {
            splits.val = load_idx(cfg.idx_test_images, cfg.idx_test_labels);
            splits.val.tag = "idx-val";
            splits.val.classes = std::max(splits.val.classes, splits.train.classes);
            splits.train.classes = splits.val.classes;
        } else {
            splits.val = splits.train;
            splits.val.tag = "idx-val(train)";
        }
    }
    return splits;
}

double evaluate(const Network& net, const Dataset& ds, EvalMode mode, double anneal_beta,
                int batch_size) {
    if (ds.size() == 0) throw ContractError("evaluate: empty dataset");
    const std::int64_t n = ds.size();
    std::int64_t correct = 0;
    for (std::int64_t start = 0; start < n; start += batch_size) {
        const std::int64_t stop = std::min<std::int64_t>(start + batch_size, n);
        std::vector<std::int64_t> idx(static_cast<size_t>(stop - start));
        std::iota(idx.begin(), idx.end(), start);
        const Tensor batch = gather_images(ds, idx);
        Tape tape;
        ForwardOptions opt;
        opt.mode = (mode == EvalMode::kRounding) ? QuantizeMode::kRounding
                                                 : QuantizeMode::kTraining;
        opt.anneal_beta = anneal_beta;
        const ForwardResult res = net.forward(tape, batch, opt);
        const Tensor& logits = tape.value(res.logits);
        const std::int64_t k = logits.dim(1);
        for (std::int64_t i = 0; i < stop - start; ++i) {
            std::int64_t best = 0;
            for (std::int64_t j = 1; j < k; ++j)
                if (logits[i * k + j] > logits[i * k + best]) best = j;
            if (best == ds.labels[static_cast<size_t>(start + i)]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

Network network_from_checkpoint(const RunConfig& cfg, const Checkpoint& ck,
                                const Dataset& sample) {
    const auto& im = sample.images;
    Network net = Network::build(
        cfg.layer_specs(im.dim(1), im.dim(2), im.dim(3), sample.classes), ck.seed);
    ck.apply_to(net);
    return net;
}

namespace {

// One full training attempt; nullopt signals an epoch-0 divergence when a
// restart is still allowed.
std::optional<TrainOutput> train_attempt(const RunConfig& cfg, const DataSplits& data,
                                         double lr_scale, bool allow_restart,
                                         std::ostream* log) {
    const Tensor& im = data.train.images;
    Network net = Network::build(
        cfg.layer_specs(im.dim(1), im.dim(2), im.dim(3), data.train.classes), cfg.seed);
    if (!cfg.init_checkpoint.empty()) Checkpoint::load(cfg.init_checkpoint).apply_to(net);

    // calibration on the first batch, before any training
    std::vector<std::int64_t> calib_idx(
        static_cast<size_t>(std::min<std::int64_t>(cfg.batch_size, data.train.size())));
    std::iota(calib_idx.begin(), calib_idx.end(), 0);
    init_quantizers(net, gather_images(data.train, calib_idx), log);

    auto params = net.trainable_params();
    OptimizerStates opt_states;
    for (auto& p : params) {
        if (p.quantizer_param)
            opt_states.adam_states.emplace_back(p.tensor->shape());
        else
            opt_states.sgd_velocity.push_back(Tensor::zeros(p.tensor->shape()));
    }

    Rng shuffle_rng = Rng(cfg.seed).fork(0xda7a);
    std::vector<std::int64_t> order(static_cast<size_t>(data.train.size()));
    std::iota(order.begin(), order.end(), 0);

    const double lr_w0 = cfg.lr_weights * lr_scale;
    TrainOutput out{std::move(net), {}, "", "", 0.0, lr_scale != 1.0};
    long total_iters = 0;
    double total_seconds = 0;
    double first_batch_loss = -1;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr_w = cosine_lr(epoch, cfg.epochs, lr_w0);
        const double lr_q = cosine_lr(epoch, cfg.epochs, cfg.lr_quant);

        // Fisher-Yates with the documented generator
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(shuffle_rng.below(i));
            std::swap(order[i - 1], order[j]);
        }

        double loss_sum = 0;
        std::int64_t seen = 0;
        const auto t0 = std::chrono::steady_clock::now();
        for (std::int64_t start = 0; start < data.train.size(); start += cfg.batch_size) {
            const std::int64_t stop =
                std::min<std::int64_t>(start + cfg.batch_size, data.train.size());
            const std::vector<std::int64_t> idx(order.begin() + start, order.begin() + stop);
            const Tensor batch = gather_images(data.train, idx);
            const std::vector<int> labels = gather_labels(data.train, idx);

            Tape tape;
            ForwardOptions fopt;
            fopt.mode = QuantizeMode::kTraining;
            fopt.epoch = epoch;
            fopt.total_epochs = cfg.epochs;
            const ForwardResult res = out.net.forward(tape, batch, fopt);
            const ValueId loss_id = tape.softmax_cross_entropy(res.logits, labels);
            const double loss = tape.value(loss_id)[0];
            if (first_batch_loss < 0) first_batch_loss = loss;
            tape.backward(loss_id);
            auto abort_with_diagnostics = [&](const char* what) {
                std::string diag;
                for (auto& p : params)
                    diag += (diag.empty() ? "" : ", ") + p.name + "=" +
                            fmt(grad_norm(tape.grad(res.param_ids.at(p.name))));
                throw TrainError("epoch " + std::to_string(epoch) + ": " + what +
                                 "; layer gradient norms: " + diag);
            };
            if (!std::isfinite(loss)) {
                if (epoch == 0 && allow_restart) return std::nullopt;
                abort_with_diagnostics("non-finite loss");
            }

            size_t vi = 0, ai = 0;
            for (auto& p : params) {
                const Tensor& g = tape.grad(res.param_ids.at(p.name));
                if (p.quantizer_param)
                    adam_step(*p.tensor, g, opt_states.adam_states[ai++], lr_q);
                else
                    sgd_step(*p.tensor, g, opt_states.sgd_velocity[vi++], lr_w, cfg.momentum,
                             cfg.weight_decay);
            }
            for (auto& p : params)
                if (!all_finite(*p.tensor)) {
                    if (epoch == 0 && allow_restart) return std::nullopt;
                    abort_with_diagnostics(
                        ("non-finite parameter " + p.name + " after update").c_str());
                }
            loss_sum += loss * static_cast<double>(stop - start);
            seen += stop - start;
            ++total_iters;
        }
        total_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                             .count();

        const double mean_loss = loss_sum / static_cast<double>(seen);
        if (epoch == 0 && allow_restart &&
            (!std::isfinite(mean_loss) || mean_loss > 1.5 * first_batch_loss))
            return std::nullopt;

        MetricsRecord rec;
        rec.epoch = epoch;
        rec.loss = mean_loss;
        rec.lr = lr_w;
        rec.train_acc = evaluate(out.net, data.train, EvalMode::kRounding);
        rec.val_acc = evaluate(out.net, data.val, EvalMode::kRounding);

        // gap / beta metrics from a fixed batch (the calibration indices)
        {
            Tape tape;
            ForwardOptions fopt;
            fopt.mode = QuantizeMode::kTraining;
            fopt.epoch = epoch;
            fopt.total_epochs = cfg.epochs;
            const Tensor batch = gather_images(data.train, calib_idx);
            const ForwardResult res = out.net.forward(tape, batch, fopt);
            for (const SlotStats& st : slot_stats(out.net, tape, res)) {
                rec.layer_gaps.emplace_back(st.name, st.gap);
                rec.layer_betas.emplace_back(st.name, st.beta);
                rec.mean_gap += st.gap;
                rec.mean_beta += st.beta;
            }
            if (!rec.layer_gaps.empty()) {
                rec.mean_gap /= static_cast<double>(rec.layer_gaps.size());
                rec.mean_beta /= static_cast<double>(rec.layer_betas.size());
            }
        }
        if (log)
            *log << "epoch " << epoch << " loss " << rec.loss << " train_acc " << rec.train_acc
                 << " val_acc " << rec.val_acc << " lr " << rec.lr << " gap " << rec.mean_gap
                 << " beta " << rec.mean_beta << "\n";
        out.log.push_back(std::move(rec));
    }

    out.ms_per_iter = total_iters ? 1000.0 * total_seconds / static_cast<double>(total_iters)
                                  : 0.0;
    return out;
}

} // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& log) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write metrics '" + path + "'");
    f << "epoch,loss,train_acc,val_acc,lr,mean_gap,mean_beta\n";
    for (const auto& r : log)
        f << r.epoch << "," << fmt(r.loss) << "," << fmt(r.train_acc) << "," << fmt(r.val_acc)
          << "," << fmt(r.lr) << "," << fmt(r.mean_gap) << "," << fmt(r.mean_beta) << "\n";
}

TrainOutput train(const RunConfig& cfg, std::ostream* log) {
    cfg.validate();
    const DataSplits data = load_dataset(cfg);
    std::optional<TrainOutput> out = train_attempt(cfg, data, 1.0, true, log);
    if (!out) {
        if (log)
            *log << "divergence detected in epoch 0; restarting with lr_weights/10\n";
        out = train_attempt(cfg, data, 0.1, false, log);
    }

    std::filesystem::create_directories(cfg.out_dir);
    out->checkpoint_path = cfg.out_dir + "/checkpoint.bin";
    out->metrics_path = cfg.out_dir + "/metrics.csv";
    Checkpoint ck = Checkpoint::from_network(out->net, cfg.seed,
                                             static_cast<std::uint32_t>(cfg.epochs));
    ck.save(out->checkpoint_path);
    write_metrics_csv(out->metrics_path, out->log);
    return std::move(*out);
}

std::vector<AblationRow> ablate(const RunConfig& base,
                                const std::vector<QuantizerKind>& variants,
                                const std::vector<std::uint64_t>& seeds, std::ostream* log) {
    if (seeds.empty()) throw ContractError("ablate: need at least one seed");
    std::vector<AblationRow> rows;
    for (const QuantizerKind& kind : variants) {
        AblationRow row;
        row.variant = kind.to_string();
        std::vector<double> acc_round, acc_soft;
        for (std::uint64_t seed : seeds) {
            RunConfig cfg = base;
            cfg.seed = seed;
            cfg.weight_kind = kind.to_string();
            cfg.act_kind = kind.to_string();
            cfg.out_dir = base.out_dir + "/ablate_" + kind.to_string() + "_s" +
                          std::to_string(seed);
            if (log) *log << "[ablate] " << row.variant << " seed " << seed << "\n";
            const TrainOutput out = train(cfg, nullptr);
            const DataSplits data = load_dataset(cfg);
            acc_round.push_back(evaluate(out.net, data.val, EvalMode::kRounding));
            acc_soft.push_back(evaluate(out.net, data.val, EvalMode::kTrainingTime));
            row.gap_mean += out.log.back().mean_gap;
            row.final_beta += out.log.back().mean_beta;
            row.ms_per_iter += out.ms_per_iter;
        }
        const double n = static_cast<double>(seeds.size());
        row.gap_mean /= n;
        row.final_beta /= n;
        row.ms_per_iter /= n;
        auto mean_std = [](const std::vector<double>& v) {
            double m = 0;
            for (double x : v) m += x;
            m /= static_cast<double>(v.size());
            double s = 0;
            for (double x : v) s += (x - m) * (x - m);
            const double denom = v.size() > 1 ? static_cast<double>(v.size() - 1) : 1.0;
            return std::pair<double, double>(m, std::sqrt(s / denom));
        };
        std::tie(row.acc_round_mean, row.acc_round_std) = mean_std(acc_round);
        std::tie(row.acc_soft_mean, row.acc_soft_std) = mean_std(acc_soft);
        if (log)
            *log << "[ablate] " << row.variant << " rounding " << row.acc_round_mean
                 << " +/- " << row.acc_round_std << " training-time " << row.acc_soft_mean
                 << " gap " << row.gap_mean << "\n";
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write ablation table '" + path + "'");
    f << "variant,acc_rounding_mean,acc_rounding_std,acc_training_mean,acc_training_std,"
         "gap,ms_per_iter,final_beta\n";
    for (const auto& r : rows)
        f << r.variant << "," << fmt(r.acc_round_mean) << "," << fmt(r.acc_round_std) << ","
          << fmt(r.acc_soft_mean) << "," << fmt(r.acc_soft_std) << "," << fmt(r.gap_mean)
          << "," << fmt(r.ms_per_iter) << "," << fmt(r.final_beta) << "\n";
}

} // namespace daq
