#ifndef DAQ_TRAIN_HPP
#define DAQ_TRAIN_HPP

// Training and evaluation loops, per-epoch metrics, and the ablation driver.
// Weights train with SGD (momentum, weight decay); quantizer parameters
// (lower, upper, conv scale) train with Adam and never see weight decay.
// Both learning rates follow cosine annealing over epochs.

#include <ostream>
#include <string>
#include <vector>

#include "daq/checkpoint.hpp"
#include "daq/config.hpp"
#include "daq/dataset.hpp"
#include "daq/network.hpp"

namespace daq {

struct MetricsRecord {
    int epoch = 0;
    double loss = 0;
    double train_acc = 0;
    double val_acc = 0;
    double lr = 0;
    double mean_gap = 0;
    double mean_beta = 0;
    std::vector<std::pair<std::string, double>> layer_gaps;
    std::vector<std::pair<std::string, double>> layer_betas;
};

enum class EvalMode { kRounding, kTrainingTime };

struct DataSplits {
    Dataset train;
    Dataset val;
};

DataSplits load_dataset(const RunConfig& cfg);

struct TrainOutput {
    Network net;
    std::vector<MetricsRecord> log;
    std::string checkpoint_path;
    std::string metrics_path;
    double ms_per_iter = 0;
    bool lr_reduced = false; // epoch-0 divergence triggered the one-time lr/10 restart
};

// Runs the configured experiment; writes checkpoint.bin and metrics.csv
// (schema: epoch,loss,train_acc,val_acc,lr,mean_gap,mean_beta) into
// cfg.out_dir. Accuracy columns use the rounding discretizer. Non-finite
// loss aborts with per-layer gradient norms in the message, except that a
// divergence inside epoch 0 restarts the run once at a 10x smaller weight lr.
TrainOutput train(const RunConfig& cfg, std::ostream* log = nullptr);

// Top-1 accuracy under the chosen test-time quantizer. anneal_beta < 0 makes
// annealed slots use their converged beta_end.
double evaluate(const Network& net, const Dataset& ds, EvalMode mode,
                double anneal_beta = -1.0, int batch_size = 256);

// Rebuilds the configured network shell and loads checkpoint state into it;
// the dataset supplies input geometry and class count.
Network network_from_checkpoint(const RunConfig& cfg, const Checkpoint& ck,
                                const Dataset& sample);

struct AblationRow {
    std::string variant;
    double acc_round_mean = 0, acc_round_std = 0;
    double acc_soft_mean = 0, acc_soft_std = 0;
    double gap_mean = 0;      // final-epoch mean quantizer gap, averaged over seeds
    double ms_per_iter = 0;   // wall clock, reported not asserted
    double final_beta = 0;    // mean beta of the final epoch (48 for annealed:2:48)
};

// Trains every variant with every seed (variant kind applied to both weight
// and activation quantizers) and evaluates both test-time modes on the
// validation split.
std::vector<AblationRow> ablate(const RunConfig& base,
                                const std::vector<QuantizerKind>& variants,
                                const std::vector<std::uint64_t>& seeds,
                                std::ostream* log = nullptr);

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& log);
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

} // namespace daq

#endif // DAQ_TRAIN_HPP
