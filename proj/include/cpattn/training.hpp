#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cpattn/autodiff.hpp"
#include "cpattn/dataset.hpp"
#include "cpattn/model.hpp"
#include "cpattn/tensor.hpp"

namespace cpattn {

struct LossWeights {
    double gamma = 0.0005;   // attention loss weight
    double lambda = 0.0001;  // regularization weight
    Tensor alpha;            // [num_classes] class weights
    // The regularizer reads literally as the norm; the squared variant is
    // the conventional weight-decay alternative.
    bool squared_norm = false;
    // Attention loss reduction over a batch: mean by default, sum optional.
    bool sum_attention_over_batch = false;
};

struct TrainConfig {
    int epochs = 400;
    double learning_rate = 0.0003;
    int batch_size = 3;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
};

// alpha_i = sqrt(n / (n_c * n_i))
Tensor class_weights(int n, const std::vector<int>& counts, int num_classes);

// -alpha[label] * ln(max(probs[label], 1e-12))
Var cross_entropy_weighted(Tape& tape, const Var& probs, int label, const Tensor& alpha);

// Sum of the attention vector.
Var attention_loss(Tape& tape, const Var& attention);

// L = L_cep + gamma * L_att + lambda * ||w||_2
Var total_loss(Tape& tape, const Var& cep, const Var& att, const std::vector<Var>& params,
               const LossWeights& weights);

struct AdamState {
    std::vector<Tensor> m, v;
    long step = 0;
};

void adam_init(AdamState& state, const std::vector<Var>& params);
void adam_step(std::vector<Var>& params, AdamState& state, const TrainConfig& cfg);

struct EpochLoss {
    double total = 0.0;
    double cep = 0.0;
    double att = 0.0;
    double weight_norm = 0.0;
};

struct TrainResult {
    std::vector<EpochLoss> history;
};

// Trains for cfg.epochs epochs with seeded shuffling and batches of
// cfg.batch_size (last batch may be smaller). Sample tensors must already
// be normalized and resampled to the network's configured [T x C x J].
TrainResult train(Network& net, const std::vector<const MotionSample*>& train_set,
                  const TrainConfig& cfg, const LossWeights& weights);

// CSV: epoch,L_total,L_cep,L_att,weight_norm
void write_loss_history_csv(const std::string& path, const std::vector<EpochLoss>& history);

}  // namespace cpattn
