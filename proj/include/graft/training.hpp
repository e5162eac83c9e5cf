#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "graft/alignment.hpp"
#include "graft/data.hpp"
#include "graft/fusion.hpp"
#include "graft/tasks.hpp"
#include "graft/tensor.hpp"

namespace graft {

// ---- optimizer -------------------------------------------------------------

struct OptimizerConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-2;  // decoupled: theta -= lr * wd * theta
    bool plain_adam = false;     // debugging fallback: bias-corrected Adam,
                                 // no variance rectification
};

/// Rectified Adam with decoupled weight decay. The variance-rectification
/// term switches on once the approximated SMA length rho_t exceeds 4; before
/// that the update is the bias-corrected first moment alone. Frozen
/// parameters are never touched. A non-finite gradient anywhere aborts the
/// step before any state changes (domain_error naming the parameter).
class RAdam {
public:
    RAdam(ParamRefs params, OptimizerConfig cfg);

    void step();
    void zero_grad();  // zeroes gradients on every parameter, frozen included

    size_t steps_taken() const { return t_; }
    const OptimizerConfig& config() const { return cfg_; }

private:
    ParamRefs params_;
    OptimizerConfig cfg_;
    size_t t_ = 0;
    double beta1_pow_ = 1.0;  // running beta^t products; repeated multiplies
    double beta2_pow_ = 1.0;  // keep the stream deterministic across libms
    std::vector<std::vector<double>> m_, v_;
};

/// If the joint L2 norm of the gradients exceeds max_norm, every gradient is
/// scaled in place by max_norm / norm. Returns the pre-clip norm. max_norm
/// must be positive (config_error).
double clip_global_norm(ParamRefs params, double max_norm);

// ---- checkpointing ---------------------------------------------------------

/// Writes `<base>.manifest` (plain text: format version, free-form config
/// lines, parameter index) and `<base>.params` (flat little-endian f32 in
/// index order). Parameter values are f32 at rest and in memory, so
/// save -> load -> save is byte-stable. Duplicate parameter names are a
/// contract_error; config keys must be single tokens without newlines.
void save_checkpoint(const std::string& base_path, const ParamRefs& params,
                     const std::vector<std::pair<std::string, std::string>>& config);

/// Restores values into `params`, matched by name against the manifest; the
/// name sets and element counts must agree exactly (contract_error), files
/// must open and parse (io_error). Returns the stored config lines.
std::vector<std::pair<std::string, std::string>> load_checkpoint(const std::string& base_path,
                                                                 const ParamRefs& params);

/// Just the config lines of a checkpoint manifest, without touching any
/// parameters; used to rebuild a model before loading into it.
std::vector<std::pair<std::string, std::string>> read_checkpoint_config(
    const std::string& base_path);

// ---- training --------------------------------------------------------------

/// Which embedding branches feed the task loss. The alignment term needs
/// both branches, so single-branch modes drop it.
enum class BranchMode { dual, orig_only, desc_only };

std::string branch_mode_name(BranchMode m);
BranchMode parse_branch_mode(const std::string& name);  // config_error on unknown

struct TrainConfig {
    OptimizerConfig optimizer;
    double max_grad_norm = 1.0;
    size_t epochs = 30;
    size_t batch_size = 8;
    double lambda_align = 0.05;  // weight of the alignment infoNCE term
    double temperature = 0.05;   // alignment + in-batch retrieval infoNCE
    BranchMode branch = BranchMode::dual;
    bool use_graph = true;  // false: graph branch ablated, text-only joint z
    uint64_t shuffle_seed = 7;
};

struct EpochRecord {
    size_t epoch = 0;            // 0 records the untrained state
    double task_loss = 0.0;      // train means per record (0 at epoch 0)
    double align_loss = 0.0;     // infoNCE mean, reported even when lambda = 0
    double combined_loss = 0.0;  // task + lambda * align
    double dev_metric = 0.0;     // accuracy or NDCG@10
    double dev_distance = 0.0;   // mean graph-text embedding distance, in [0, 2]
};

struct TrainResult {
    std::vector<EpochRecord> epochs;  // [0] is the pre-training state
    size_t best_epoch = 0;
    double best_dev_metric = 0.0;
    bool aborted = false;
    std::string abort_reason;
    uint64_t frozen_hash_before = 0;
    uint64_t frozen_hash_after = 0;
};

struct EvalResult {
    double metric = 0.0;    // accuracy (qa/pair) or mean NDCG@10 (retrieval)
    double distance = 0.0;  // mean normalized graph-text distance
    size_t count = 0;
};

/// Hash over everything training must not move: the backbone parameters and
/// the initial node embeddings of the probe graphs (little-endian f32 bytes).
uint64_t frozen_state_hash(JointModel& model, const std::vector<const TypedGraph*>& probes);

/// Optimization loop: shuffled minibatches, combined task + alignment loss,
/// global-norm clipping, rectified Adam, per-epoch dev evaluation, and
/// best-epoch retention (the model is left holding the best parameters).
/// A non-finite loss or gradient aborts training and restores the best
/// parameters seen so far.
class Trainer {
public:
    /// head may be null for retrieval (contract_error if qa/pair need it).
    /// cache, when given, stores description-branch vectors across epochs
    /// and runs; otherwise an unsaved in-memory cache is used.
    Trainer(JointModel& model, ScoreHead* head, TrainConfig cfg,
            DescriptionCache* cache = nullptr);

    TrainResult train(const std::vector<DataRecord>& train_set,
                      const std::vector<DataRecord>& dev_set);

    /// Original-branch-only inference (graph + text), gradients off.
    EvalResult evaluate(const std::vector<DataRecord>& records);

    ParamRefs trainable_params();  // model trainables + head (when present)
    const TrainConfig& config() const { return cfg_; }

private:
    struct BatchOutcome {
        double task = 0.0;
        double align = 0.0;
        double combined = 0.0;
        bool finite = true;
        std::string diagnostic;
    };

    JointEmbedding orig_embedding(const TypedGraph& g, const QueryContext& ctx,
                                  const std::string& input_text, bool training);
    JointEmbedding desc_embedding(const TypedGraph& g, const std::string& input_text);
    BatchOutcome run_batch(TaskKind kind, const std::vector<const DataRecord*>& batch,
                           RAdam& opt);
    BatchOutcome run_batch_impl(TaskKind kind, const std::vector<const DataRecord*>& batch,
                                RAdam& opt);

    std::vector<std::vector<double>> snapshot_params();
    void restore_params(const std::vector<std::vector<double>>& snap);

    JointModel& model_;
    ScoreHead* head_ = nullptr;
    TrainConfig cfg_;
    DescriptionCache* cache_ = nullptr;
    std::optional<DescriptionCache> own_cache_;
    ParamRefs trainables_;
    Rng dropout_rng_;
};

/// Metric rows in the shared TSV layout, one line per (epoch, split, metric):
/// run-id, epoch, split, metric, value separated by tabs. metric_name labels
/// the dev task metric column ("accuracy" or "ndcg@10").
void write_metrics_tsv(const std::string& path, const std::string& run_id,
                       const std::vector<EpochRecord>& epochs, const std::string& metric_name);

/// The dev metric label for a task.
std::string task_metric_name(TaskKind kind);

}  // namespace graft
