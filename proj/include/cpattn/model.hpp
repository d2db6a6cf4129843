#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "cpattn/autodiff.hpp"
#include "cpattn/tensor.hpp"

namespace cpattn {

struct NetworkConfig {
    int frames = 200;
    int coords = 3;
    int joints = 16;
    std::vector<int> conv_channels = {8, 8, 16, 16, 16};
    int reduction = 2;  // attention hidden width = max(1, joints / reduction)
    int num_classes = 2;
    bool use_attention = true;

    int attention_hidden() const { return std::max(1, joints / reduction); }
};

// Squeeze-and-excitation gate over the joint axis: A = sigmoid(W2 relu(W1 z)).
// No bias terms.
struct AttentionModule {
    Var w1;  // [hidden x J]
    Var w2;  // [J x hidden]
};

struct ConvLayer {
    Var kernel;  // [ch_out x ch_in x 1 x 3]: taps run over the frame axis
    Var bias;    // [ch_out]
};

struct ForwardResult {
    Var probs;      // [num_classes]
    Var attention;  // [J]; constant ones when attention is bypassed
};

// Per-joint channel attention followed by a five-layer temporal conv stack,
// global average pooling and a softmax classification head.
class Network {
public:
    Network(const NetworkConfig& config, std::uint64_t init_seed);

    // S is [T x C x J]; returns class probabilities and the attention vector.
    ForwardResult forward(Tape& tape, const Tensor& s) const;

    // Trainable parameters in declaration order.
    const std::vector<Var>& parameters() const { return params_; }
    std::size_t parameter_count() const;

    const NetworkConfig& config() const { return config_; }

    void save(const std::string& path) const;
    static Network load(const std::string& path);

private:
    Network() = default;
    void collect_params();

    NetworkConfig config_;
    AttentionModule attention_;
    std::vector<ConvLayer> conv_layers_;
    Var fc_weight_;  // [num_classes x last_width]
    Var fc_bias_;    // [num_classes]
    std::vector<Var> params_;
};

// Squeeze step (global average pooling over frames and coordinates).
Var squeeze(Tape& tape, const Var& s);

// Excitation step: sigmoid(W2 relu(W1 z)).
Var excite(Tape& tape, const Var& z, const AttentionModule& attention);

// S'(t,c,j) = A(j) * S(t,c,j).
Var apply_attention(Tape& tape, const Var& s, const Var& attention);

}  // namespace cpattn
