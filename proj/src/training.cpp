#include "cpattn/training.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "cpattn/rng.hpp"

namespace cpattn {

Tensor class_weights(int n, const std::vector<int>& counts, int num_classes) {
    if (static_cast<int>(counts.size()) != num_classes) {
        throw std::invalid_argument("class_weights: expected " + std::to_string(num_classes) +
                                    " counts, got " + std::to_string(counts.size()));
    }
    int total = 0;
    for (int c : counts) {
        if (c < 1) {
            throw std::invalid_argument("class_weights: every class count must be >= 1");
        }
        total += c;
    }
    if (total != n) {
        throw std::invalid_argument("class_weights: counts sum to " + std::to_string(total) +
                                    ", expected n = " + std::to_string(n));
    }
    Tensor alpha({num_classes});
    for (int i = 0; i < num_classes; ++i) {
        alpha[static_cast<std::size_t>(i)] =
            std::sqrt(static_cast<double>(n) /
                      (static_cast<double>(num_classes) * counts[static_cast<std::size_t>(i)]));
    }
    return alpha;
}

Var cross_entropy_weighted(Tape& tape, const Var& probs, int label, const Tensor& alpha) {
    if (label < 0 || label >= alpha.extent(0)) {
        throw std::invalid_argument("cross_entropy_weighted: label " + std::to_string(label) +
                                    " out of range for " + shape_str(alpha.shape()));
    }
    return ops::weighted_nll(tape, probs, label, alpha[static_cast<std::size_t>(label)]);
}

Var attention_loss(Tape& tape, const Var& attention) {
    return ops::sum(tape, attention);
}

Var total_loss(Tape& tape, const Var& cep, const Var& att, const std::vector<Var>& params,
               const LossWeights& weights) {
    Var reg = ops::param_norm(tape, params, weights.squared_norm);
    Var l = ops::add(tape, cep, ops::scale(tape, att, weights.gamma));
    return ops::add(tape, l, ops::scale(tape, reg, weights.lambda));
}

void adam_init(AdamState& state, const std::vector<Var>& params) {
    state.m.clear();
    state.v.clear();
    state.step = 0;
    for (const auto& p : params) {
        state.m.emplace_back(p->value.shape());
        state.v.emplace_back(p->value.shape());
    }
}

void adam_step(std::vector<Var>& params, AdamState& state, const TrainConfig& cfg) {
    if (state.m.size() != params.size()) {
        throw std::invalid_argument("adam_step: state does not match parameter list");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        double* p = params[pi]->value.data();
        const double* g = params[pi]->grad.data();
        double* m = state.m[pi].data();
        double* v = state.v[pi].data();
        const std::size_t n = params[pi]->value.numel();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

TrainResult train(Network& net, const std::vector<const MotionSample*>& train_set,
                  const TrainConfig& cfg, const LossWeights& weights) {
    if (train_set.empty()) {
        throw std::invalid_argument("train: empty training set");
    }
    if (cfg.batch_size < 1 || cfg.epochs < 0 || cfg.learning_rate <= 0.0) {
        throw std::invalid_argument("train: invalid configuration");
    }
    if (weights.alpha.ndim() != 1 || weights.alpha.extent(0) != net.config().num_classes) {
        throw std::invalid_argument("train: class weights not configured");
    }

    std::vector<Var> params = net.parameters();
    AdamState adam;
    adam_init(adam, params);
    Rng shuffle_rng(derive_seed(cfg.seed, 2));  // stream 1 is parameter init

    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        EpochLoss epoch_loss;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double inv_b = 1.0 / static_cast<double>(end - start);

            Tape tape;
            Var cep_sum, att_sum;
            for (std::size_t i = start; i < end; ++i) {
                const MotionSample& sample = *train_set[order[i]];
                ForwardResult fwd = net.forward(tape, sample.positions);
                Var cep = cross_entropy_weighted(tape, fwd.probs, sample.label, weights.alpha);
                cep_sum = cep_sum ? ops::add(tape, cep_sum, cep) : cep;
                if (net.config().use_attention) {
                    Var att = attention_loss(tape, fwd.attention);
                    att_sum = att_sum ? ops::add(tape, att_sum, att) : att;
                }
            }
            Var cep_batch = ops::scale(tape, cep_sum, inv_b);
            Var att_batch = att_sum
                                ? (weights.sum_attention_over_batch
                                       ? att_sum
                                       : ops::scale(tape, att_sum, inv_b))
                                : make_const(Tensor::scalar(0.0));
            Var loss = total_loss(tape, cep_batch, att_batch, params, weights);
            tape.backward(loss);
            adam_step(params, adam, cfg);

            double norm_sq = 0.0;
            for (const auto& p : params) {
                const double* d = p->value.data();
                for (std::size_t i = 0; i < p->value.numel(); ++i) norm_sq += d[i] * d[i];
            }
            epoch_loss.total += loss->value.value();
            epoch_loss.cep += cep_batch->value.value();
            epoch_loss.att += att_batch->value.value();
            epoch_loss.weight_norm += std::sqrt(norm_sq);
            ++batches;

            if (!std::isfinite(loss->value.value())) {
                throw std::runtime_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch));
            }
        }
        epoch_loss.total /= batches;
        epoch_loss.cep /= batches;
        epoch_loss.att /= batches;
        epoch_loss.weight_norm /= batches;
        result.history.push_back(epoch_loss);
    }
    return result;
}

void write_loss_history_csv(const std::string& path, const std::vector<EpochLoss>& history) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write loss history " + path);
    }
    out << "epoch,L_total,L_cep,L_att,weight_norm\n";
    for (std::size_t i = 0; i < history.size(); ++i) {
        out << i << ',' << format_double(history[i].total, 17) << ','
            << format_double(history[i].cep, 17) << ',' << format_double(history[i].att, 17)
            << ',' << format_double(history[i].weight_norm, 17) << '\n';
    }
    if (!out) {
        throw std::runtime_error("failed writing loss history " + path);
    }
}

}  // namespace cpattn
