#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "memadapt/attention.hpp"
#include "memadapt/data.hpp"
#include "memadapt/losses.hpp"
#include "memadapt/memory.hpp"
#include "memadapt/metrics.hpp"
#include "memadapt/networks.hpp"
#include "memadapt/pseudo_label.hpp"
#include "memadapt/rng.hpp"

namespace memadapt {

enum class TrainMode { kSourceOnly, kDfa, kIdma, kDfaIdma };
enum class FilterMode { kEntropy, kProbability, kNone };

TrainMode parse_train_mode(const std::string& name);
std::string train_mode_name(TrainMode mode);
FilterMode parse_filter_mode(const std::string& name);
std::string filter_mode_name(FilterMode mode);

/// Complete hyperparameter and schedule record for one run.
struct TrainConfig {
    int total_iters = 5000;  // T
    int tau_prime = -1;      // warmup length; -1 means T/10
    int batch_size = 2;
    int eval_interval = 500;
    int save_interval = 0;  // periodic checkpoints, 0 = off

    double sigma = 0.5;  // entropy threshold for pseudo-label filtering
    double lambda_adv = 1.0;
    double m0 = 0.9;
    double p = 0.9;
    std::string filter_mode = "entropy";  // entropy | probability | none
    double prob_threshold = 0.25;

    double g_lr = 2.5e-4;
    double g_momentum = 0.9;
    double g_weight_decay = 1e-4;
    double d_lr = 1e-4;
    double d_beta1 = 0.9;
    double d_beta2 = 0.99;
    bool poly_lr_decay = false;

    uint64_t seed = 1;
    std::string mode = "dfa_idma";          // source_only | dfa | idma | dfa_idma
    std::string shared_f_updates = "both";  // both | alternate
    bool augment_affine = true;
    bool augment_colorspace = false;

    NetworkSpec network;
    std::string data_dir;
    std::string source_domain = "a";
    std::string target_domain = "b";
    std::string out_dir = "run";

    int effective_tau_prime() const { return tau_prime < 0 ? total_iters / 10 : tau_prime; }
    TrainMode train_mode() const { return parse_train_mode(mode); }
    FilterMode pseudo_filter() const { return parse_filter_mode(filter_mode); }

    void validate() const;
    nlohmann::json to_json() const;
    /// Rejects unknown keys, reporting their JSON path.
    static TrainConfig from_json(const nlohmann::json& j);
    static TrainConfig load_file(const std::string& path);
    /// FNV-1a over the canonical JSON dump; stored in checkpoints.
    uint64_t config_hash() const;
};

/// Plain momentum SGD; weight decay enters as an L2 gradient term.
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<NamedTensor> params, double lr, double momentum, double weight_decay);
    /// Applies an update to the chosen parameter indices only.
    void step(const std::vector<size_t>& indices, double lr_scale = 1.0);
    void step_all(double lr_scale = 1.0);
    void zero_grad();
    const std::vector<NamedTensor>& params() const { return params_; }
    void serialize(std::vector<NamedTensor>& out, const std::string& prefix) const;
    void load(const LoadedBlob& blob, const std::string& prefix);

private:
    std::vector<NamedTensor> params_;
    std::vector<std::vector<double>> velocity_;
    double lr_, momentum_, weight_decay_;
};

class AdamOptimizer {
public:
    AdamOptimizer(std::vector<NamedTensor> params, double lr, double beta1, double beta2,
                  double eps = 1e-8);
    void step_all(double lr_scale = 1.0);
    void zero_grad();
    const std::vector<NamedTensor>& params() const { return params_; }
    void serialize(std::vector<NamedTensor>& out, const std::string& prefix) const;
    void load(const LoadedBlob& blob, const std::string& prefix);

private:
    std::vector<NamedTensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

/// Draws shuffled-epoch batches round-robin and applies the configured
/// augmentations. All randomness comes from the feed's own stream.
class DataFeed {
public:
    DataFeed(const std::vector<Tile>* tiles, uint64_t seed, bool affine, bool colorspace);

    struct Batch {
        Tensor images;                // [N,3,H,W]
        std::vector<LabelMap> labels;
    };
    Batch next(int batch_size);
    int64_t tiles_read() const { return reads_; }

    nlohmann::json state() const;
    void load_state(const nlohmann::json& j);

private:
    void reshuffle();
    const std::vector<Tile>* tiles_;
    Rng rng_;
    std::vector<int> order_;
    size_t pos_ = 0;
    bool affine_, colorspace_;
    int64_t reads_ = 0;
};

struct EvalRecord {
    int64_t iteration = 0;
    MetricSummary summary;
};

struct RunResult {
    double best_val_miou = 0;
    int64_t best_iteration = 0;
    MetricSummary test;     // best model evaluated on the target test split
    MetricSummary final_val;
    std::vector<EvalRecord> history;
    std::string log_path;
    std::string best_checkpoint;
    std::string last_checkpoint;
};

/// Two-stage optimization: a warmup phase trains the adversarial alignment
/// branch alone; afterwards the prototype memory is refreshed each iteration
/// and the aggregation branch trains jointly with it.
class Trainer {
public:
    Trainer(const TrainConfig& config, const Dataset& dataset);

    /// Warmup-phase step: supervised segmentation plus (when enabled) the
    /// adversarial objective, then a discriminator update.
    LossReport train_step1(const Tensor& x_s, const std::vector<LabelMap>& y_s, const Tensor& x_t);

    /// Joint step at step-2 iteration t2 (counted from the end of warmup):
    /// pseudo-labels and memory refresh first, then the alignment update,
    /// then the aggregation update.
    LossReport train_step2(const Tensor& x_s, const std::vector<LabelMap>& y_s, const Tensor& x_t,
                           int64_t t2);

    RunResult run();

    ConfusionMatrix evaluate(const std::vector<Tile>& tiles);
    /// Prediction for one tile under the current evaluation path.
    LabelMap predict(const Tile& tile);
    ProbMap predict_probs(const Tile& tile);

    void save_checkpoint(const std::string& prefix) const;
    void load_checkpoint(const std::string& prefix);

    // Introspection for tests and drivers.
    const TrainConfig& config() const { return config_; }
    FeatureExtractor& extractor() { return *extractor_; }
    Classifier& classifier1() { return *classifier1_; }
    Classifier* classifier2() { return classifier2_.get(); }
    Discriminator* discriminator() { return discriminator_.get(); }
    Aggregator* aggregator() { return aggregator_.get(); }
    PrototypeMemory* memory() { return memory_.get(); }
    int64_t iteration() const { return iteration_; }
    int64_t source_tiles_read() const { return source_feed_ ? source_feed_->tiles_read() : 0; }
    int64_t target_tiles_read() const { return target_feed_ ? target_feed_->tiles_read() : 0; }
    std::vector<NamedTensor> generator_params() const;
    std::vector<NamedTensor> discriminator_params() const;

private:
    void set_training_mode(bool training);
    double g_lr_scale() const;
    double d_lr_scale() const;
    LossReport run_one_iteration();
    std::vector<LabelMap> pseudo_labels(const Tensor& target_feature);
    void update_memory(const Tensor& feature, const std::vector<LabelMap>& labels, int64_t t2);
    std::vector<NamedTensor> snapshot_state() const;
    void freeze(const std::vector<NamedTensor>& params, bool frozen);

    TrainConfig config_;
    const Dataset* dataset_;
    bool use_d_ = false;
    bool use_idma_ = false;

    std::unique_ptr<FeatureExtractor> extractor_;
    std::unique_ptr<Classifier> classifier1_;
    std::unique_ptr<Classifier> classifier2_;
    std::unique_ptr<Discriminator> discriminator_;
    std::unique_ptr<Aggregator> aggregator_;
    std::unique_ptr<PrototypeMemory> memory_;

    std::unique_ptr<SgdOptimizer> opt_g_;
    std::unique_ptr<AdamOptimizer> opt_d_;
    std::vector<size_t> idx_g1_;        // extractor + classifier 1
    std::vector<size_t> idx_g1_nof_;    // classifier 1 only
    std::vector<size_t> idx_idma_;      // extractor + aggregator + classifier 2
    std::vector<size_t> idx_idma_nof_;  // aggregator + classifier 2 only

    std::unique_ptr<DataFeed> source_feed_;
    std::unique_ptr<DataFeed> target_feed_;

    int64_t iteration_ = 0;  // completed iterations
    double best_val_miou_ = -1;
    int64_t best_iteration_ = 0;
    std::vector<NamedTensor> best_snapshot_;
    std::vector<std::string> log_rows_;
    std::vector<EvalRecord> eval_history_;
};

/// Runs the given modes x seeds grid and writes a CSV with per-seed rows and
/// per-mode means (test metrics of the best-validation model).
nlohmann::json run_ablation(const TrainConfig& base, const std::vector<std::string>& modes,
                            const std::vector<uint64_t>& seeds, const Dataset& dataset,
                            const std::string& csv_path);

/// One full run per sigma value with shared seeds; writes OA/MA/mIoU per
/// sigma to CSV.
nlohmann::json run_sigma_sweep(const TrainConfig& base, const std::vector<double>& sigmas,
                               const std::vector<uint64_t>& seeds, const Dataset& dataset,
                               const std::string& csv_path);

}  // namespace memadapt
