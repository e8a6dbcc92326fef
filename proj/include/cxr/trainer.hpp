#ifndef CXR_TRAINER_HPP
#define CXR_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cxr/graph.hpp"
#include "cxr/tensor.hpp"

namespace cxr {

struct TrainConfig {
    int epochs = 10;
    int batch_size = 8;
    float base_lr = 1e-4f;
    std::string optimizer = "adam"; // "adam" or "sgd"
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.999f;
    float adam_eps = 1e-8f;
    /// <0 keeps each layer's own coefficient; >=0 overrides it on every
    /// L2-flagged layer.
    float l2_coeff = -1.0f;
    float plateau_factor = 0.5f;
    int plateau_patience = 2;
    float plateau_min_lr = 1e-6f;
    float min_delta = 1e-4f; // absolute, shared by plateau and early stopping
    int early_stop_patience = 5;
    std::uint64_t seed = 7;

    void validate() const; // throws ConfigError
};

struct EpochRecord {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double val_auc = 0.0;
    double lr = 0.0; // rate used during this epoch
};

struct History {
    std::vector<EpochRecord> records;

    std::string to_csv() const; // header epoch,train_loss,...,lr
    void write_csv(const std::filesystem::path& path) const;
};

/// In-memory labeled split: images [N,C,H,W] plus labels of length N.
struct LabeledData {
    Tensor images{std::vector<int>{1}};
    std::vector<int> labels;

    int count() const { return static_cast<int>(labels.size()); }
};

/// Mean over rows of -log(prob of true class), probs clamped at 1e-12.
double cross_entropy(const Tensor& probs, const std::vector<int>& labels);

/// d(cross entropy)/d(logits) for a fused softmax+CE head:
/// (probs - one_hot)/N. Seed this at the layer feeding softmax-output.
Tensor ce_softmax_grad(const Tensor& probs, const std::vector<int>& labels);

/// First-moment/second-moment state mirroring every parameter tensor.
struct AdamState {
    std::int64_t step = 0;
    std::vector<LayerParams> m, v;

    static AdamState init(const ParamStore& params);
};

/// One bias-corrected Adam update over every trainable tensor that has a
/// gradient entry. Frozen tensors never move.
void adam_step(ParamStore& params, const std::vector<LayerParams>& grads, AdamState& state,
               float lr, const TrainConfig& cfg);

void sgd_step(ParamStore& params, const std::vector<LayerParams>& grads, float lr);

struct PlateauScheduler {
    float lr;
    float factor;
    int patience;
    float min_lr;
    float min_delta;
    float best = 0.0f;
    int bad_epochs = 0;
    bool seen_any = false;

    PlateauScheduler(float base_lr, float factor, int patience, float min_lr, float min_delta);
    /// Call once per epoch after validation; returns the rate for the next epoch.
    float step(float val_loss);
};

struct EarlyStopper {
    int patience;
    float min_delta;
    float best = 0.0f;
    int bad_epochs = 0;
    bool seen_any = false;
    bool improved_last = false;

    EarlyStopper(int patience, float min_delta);
    /// Call once per epoch; true means stop. improved_last tells the caller
    /// whether this epoch set a new best (snapshot point).
    bool should_stop(float val_loss);
};

/// L2 penalty over flagged dense layers: sum of coeff * ||W||^2.
double l2_penalty(const ModelGraph& model, const ParamStore& params, float l2_override);

struct EvalOutput {
    Tensor probs{std::vector<int>{1}};
    double loss = 0.0; // data cross-entropy only
    double accuracy = 0.0;
};

/// Batched eval-mode forward over a whole split.
EvalOutput evaluate(const ModelGraph& model, ParamStore& params, const LabeledData& data,
                    int batch_size);

/// Epoch loop: seeded shuffle, mini-batches, optimizer, plateau schedule,
/// early stopping with best-weight restore. Mutates params in place.
/// on_epoch (optional) fires after each epoch's record is complete.
History fit(const ModelGraph& model, ParamStore& params, const LabeledData& train,
            const LabeledData& val, const TrainConfig& cfg,
            const std::function<void(const EpochRecord&)>& on_epoch = {});

struct GridSpec {
    std::vector<int> head_units;
    std::vector<float> lrs;
    std::vector<std::string> activations;
};

struct GridCell {
    int head_units = 0;
    float lr = 0.0f;
    std::string activation;
    double final_val_acc = 0.0;
    double final_val_loss = 0.0;
    History history;
};

struct GridResult {
    size_t best_index = 0;
    std::vector<GridCell> cells;
};

/// Trains one model per grid cell (budget_epochs caps cfg.epochs) and picks
/// the best final val accuracy; ties fall to lower val loss, then grid order.
GridResult grid_search(Template t, const GridSpec& grid, const LabeledData& train,
                       const LabeledData& val, const TrainConfig& base, int budget_epochs);

} // namespace cxr

#endif
