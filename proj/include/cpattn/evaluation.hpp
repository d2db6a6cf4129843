#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cpattn/dataset.hpp"
#include "cpattn/model.hpp"
#include "cpattn/training.hpp"

namespace cpattn {

struct FoldReport {
    int fold_index = 0;
    std::string held_out_id;
    int true_label = 0;
    int predicted_label = 0;
    Tensor probs;                 // [num_classes]
    Tensor attention;             // [J], the held-out sample's gate values
    Tensor mean_train_attention;  // [J], mean gate over the fold's training samples
    Tensor class_weights;         // per-fold alpha, from the training split only
    EpochLoss final_train_loss;
};

struct JointStats {
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

struct AttentionStats {
    std::vector<double> thresholds;  // {0.5, 0.6, 0.7, 0.8, 0.9, 1.0}
    std::vector<double> avg_counts;  // mean over folds of |{j : A_z(j) >= tau}|
    std::vector<JointStats> per_joint;
    double avg_attention = 0.0;  // mean over folds and joints
};

struct RunReport {
    std::vector<FoldReport> folds;
    double accuracy = 0.0;
    bool has_attention = true;
    AttentionStats stats;  // empty when attention is bypassed
    std::vector<std::string> joint_names;
    std::uint64_t seed = 0;
    double gamma = 0.0;
    double lambda = 0.0;
};

// "Attention = 1.0" is tested as >= 1 - 1e-9: the sigmoid range is open.
inline constexpr double kSaturationEps = 1e-9;

std::vector<double> attention_thresholds();

// Spine-centers every sample and resamples it to target_frames.
Dataset preprocess(const Dataset& dataset, int target_frames);

// Leave-one-out cross-validation. Fold k trains a fresh network on all
// samples but k, with fold seed derive_seed(cfg.seed, k), per-fold class
// weights from the training split, then evaluates sample k. Samples must
// already be preprocessed to the network's [T x C x J]. weights.alpha is
// ignored; it is recomputed per fold. jobs > 1 runs folds concurrently
// without changing any result.
RunReport loocv(const Dataset& dataset, const NetworkConfig& net_cfg, const TrainConfig& cfg,
                const LossWeights& weights, int jobs = 1);

AttentionStats attention_statistics(const std::vector<FoldReport>& folds);

// Paired runs with identical seeds differing only in gamma:
// first = gamma 0, second = gamma from `weights`.
std::pair<RunReport, RunReport> ablation_attention_loss(const Dataset& dataset,
                                                        const NetworkConfig& net_cfg,
                                                        const TrainConfig& cfg,
                                                        const LossWeights& weights, int jobs = 1);

// loocv with the attention stage bypassed (constant 1-gate); the report
// carries no attention statistics.
RunReport ablation_no_attention(const Dataset& dataset, const NetworkConfig& net_cfg,
                                const TrainConfig& cfg, const LossWeights& weights, int jobs = 1);

// Writes run_report.json, and for attention runs also attention_stats.csv,
// boxplot.svg and per-fold fold_<k>_attention.csv, into out_dir.
void emit_reports(const RunReport& report, const std::string& out_dir);

RunReport read_run_report(const std::string& path);

std::string render_boxplot_svg(const RunReport& report);

}  // namespace cpattn
