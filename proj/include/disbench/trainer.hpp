#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "disbench/confounds.hpp"
#include "disbench/dependence.hpp"
#include "disbench/nets.hpp"
#include "disbench/rng.hpp"

namespace disbench {

enum class MethodKind { erm, advcl, dcor, mine, mmd };

// A benchmark method is a training objective plus an optional data-side
// rebalancing pass ("rebal" alone is erm + rebalance).
struct MethodSpec {
    MethodKind kind = MethodKind::erm;
    bool rebalance = false;
};

MethodSpec parse_method(const std::string& name);  // throws InvalidInput on unknown names
std::string method_name(const MethodSpec& m);

struct TrainConfig {
    MethodKind method = MethodKind::erm;
    bool rebalance = false;  // applied by the data pipeline; recorded here
    double lambda = 1.0;
    int batch = 128;
    double lr = 1e-3;
    double weight_decay = 1e-5;
    int max_epochs = 80;
    int patience = 10;
    int mine_inner = 5;   // N_B: one encoder step then N_B-1 estimator steps
    int mine_hidden = 64;
    uint64_t seed = 0;
    KernelSpec kernel = KernelSpec::default_grid();
    MmdOptions mmd_opt{};
    bool mine_ema_grad = false;
    double mine_ema_decay = 0.99;

    void validate() const;
};

struct BatchView {
    Mat images;  // N x side^2, widened to double
    std::vector<int> y1, y2;
};

BatchView make_batch(const std::vector<LabeledImage>& data, const std::vector<size_t>& idx);

// First d1 columns and remaining d2 columns; in shared-latent mode both
// outputs are the full latent.
std::pair<Mat, Mat> split_latent(const Mat& z, const EncoderConfig& cfg);

// Mean negative log-softmax of the true class, log-sum-exp stabilized.
double cross_entropy(const Mat& logits, const std::vector<int>& labels);

// (CE1 + CE2) / 2 over (z1 -> y1) and (z2 -> y2).
double classification_loss(const Model& model, const BatchView& batch);

struct DisentLoss {
    double total = 0.0;
    double cls = 0.0;
    double dep = 0.0;
    bool degenerate = false;  // dcor skipped the batch
};

// classification_loss + lambda * measure(z1, z2). For MINE the measure is the
// current bound at fixed T (perm required).
DisentLoss disent_loss(const Model& model, const BatchView& batch, MethodKind measure,
                       double lambda, const TrainConfig& cfg, const MineNet* mine,
                       const std::vector<int>* perm);

// Gradient reversal: forward is the identity, backward negates. The lambda
// weight lives in the loss, not here.
Mat grl_backward(const Mat& upstream);

struct StepInfo {
    double loss = 0.0;
    double cls = 0.0;
    double dep = 0.0;
    bool degenerate = false;
};

// Full parameter gradient of the erm/dcor/mmd/mine objective (split-latent
// models). For MINE the penalty gradient is taken at fixed T; fixed_perm pins
// the marginal permutation (tests), otherwise one is drawn from perm_rng.
std::vector<double> objective_gradients(const Model& model, const BatchView& batch,
                                        const TrainConfig& cfg, const MineNet* mine,
                                        Rng& perm_rng, const std::vector<int>* fixed_perm,
                                        StepInfo* info);

// Full parameter gradient of the adversarial objective (shared-latent
// models): encoder and head1 receive d(CE1 - lambda*CE2) with the CE2 part
// flowing through the reversal layer; head2 receives +dCE2 (the adversary
// descends its own loss).
std::vector<double> adversarial_gradients(const Model& model, const BatchView& batch,
                                          double lambda, StepInfo* info);

// One encoder+heads update for erm/dcor/mmd/mine objectives.
StepInfo combined_step(Model& model, Adam& opt, const BatchView& batch,
                       const TrainConfig& cfg, const MineNet* mine, Rng& perm_rng);

// One adversarial update; reported loss is CE1 - lambda*CE2.
StepInfo adversarial_step(Model& model, Adam& opt, const BatchView& batch, double lambda);

// Estimator-only update ascending the bound; encoder parameters are not
// touched. ema_state (log scale, NaN = unset) is used when cfg.mine_ema_grad.
StepInfo mine_estimator_step(const Model& model, MineNet& mine, Adam& mine_opt,
                             const BatchView& batch, const TrainConfig& cfg, Rng& perm_rng,
                             double* ema_state);

struct EpochStats {
    double train_loss = 0.0;
    double val_loss = 0.0;
    double dependence = 0.0;
};

struct FitResult {
    std::vector<double> best_params;
    int best_epoch = -1;  // 1-based; the epochs-to-convergence figure
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<EpochStats> history;
    int epochs_run = 0;
    bool aborted = false;
    std::string abort_reason;
    long encoder_updates = 0;
    long estimator_updates = 0;       // total, including the joint steps
    long estimator_only_updates = 0;  // frozen-encoder steps of the MINE cycle
    long degenerate_batches = 0;
    long truncated_cycles = 0;  // MINE cycles cut short at epoch end
};

struct FitHooks {
    // Replaces the computed validation loss (testing seam for the early-stop
    // contract).
    std::function<double(int epoch)> val_loss_override;
};

// Trains with early stopping on validation classification loss, restores and
// returns the best-validation snapshot. train and val must be disjoint by
// group id.
FitResult fit(Model& model, MineNet* mine, const std::vector<LabeledImage>& train,
              const std::vector<LabeledImage>& val, const TrainConfig& cfg,
              const FitHooks& hooks = {});

}  // namespace disbench
