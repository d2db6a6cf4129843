#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "cpattn/tensor.hpp"

namespace cpattn {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = true;
};

using Var = std::shared_ptr<Node>;

Var make_var(Tensor value);    // trainable leaf
Var make_const(Tensor value);  // input / non-trainable leaf

// Eager (define-by-run) tape. Ops append one backward step per executed
// primitive; backward() replays them in exact reverse execution order.
// Steps add into node grads, so a value consumed by several ops receives
// the sum of all path gradients.
class Tape {
public:
    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
    void touch(const Var& v) { touched_.push_back(v); }

    // loss must be scalar. Zeroes grads of every touched node, seeds
    // d(loss)/d(loss) = 1, and sweeps the recorded steps in reverse.
    void backward(const Var& loss);

    std::size_t num_ops() const { return steps_.size(); }
    void clear();

private:
    std::vector<std::function<void()>> steps_;
    std::vector<Var> touched_;
};

namespace ops {

// a: [m x k]; b: [k x n] or [k]. Gradients defined for both arguments.
Var matmul(Tape& tape, const Var& a, const Var& b);

struct Stride2 { int h = 1, w = 1; };
struct Pad2 { int h = 0, w = 0; };

// input [ci x h x w], kernel [co x ci x fh x fw], optional bias [co].
// Cross-correlation with zero padding.
Var conv2d(Tape& tape, const Var& input, const Var& kernel, const Var& bias,
           Stride2 stride = {}, Pad2 pad = {});

// Mean over all non-channel positions of each slice along channel_axis.
Var global_average_pool(Tape& tape, const Var& input, int channel_axis);

Var relu(Tape& tape, const Var& x);
Var sigmoid(Tape& tape, const Var& x);
Var add(Tape& tape, const Var& a, const Var& b);   // singleton-axis broadcasting
Var mul(Tape& tape, const Var& a, const Var& b);   // singleton-axis broadcasting
Var scale(Tape& tape, const Var& x, double c);
Var softmax(Tape& tape, const Var& logits);        // 1-D, max-subtracted
Var sum(Tape& tape, const Var& x);                 // -> scalar
Var permute(Tape& tape, const Var& x, const std::vector<int>& axes);
Var reshape(Tape& tape, const Var& x, const std::vector<int>& shape);

// -alpha * ln(max(probs[label], 1e-12))
Var weighted_nll(Tape& tape, const Var& probs, int label, double alpha);

// Global L2 norm over a parameter list: sqrt(sum of squares), or the sum of
// squares itself when squared is true. The norm gradient is guarded to zero
// below 1e-12.
Var param_norm(Tape& tape, const std::vector<Var>& params, bool squared = false);

}  // namespace ops

// Overflow-safe scalar sigmoid, shared by ops and tests.
double stable_sigmoid(double x);

}  // namespace cpattn
