#include "cpattn/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cpattn/dataset.hpp"
#include "cpattn/rng.hpp"

namespace cpattn {

namespace {

Tensor glorot_uniform(Rng& rng, std::vector<int> shape, int fan_in, int fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

Network::Network(const NetworkConfig& config, std::uint64_t init_seed) : config_(config) {
    if (config_.conv_channels.size() != 5) {
        throw std::invalid_argument("network expects exactly 5 conv layer widths");
    }
    Rng rng(init_seed);
    const int J = config_.joints;
    if (config_.use_attention) {
        const int h = config_.attention_hidden();
        attention_.w1 = make_var(glorot_uniform(rng, {h, J}, J, h));
        attention_.w2 = make_var(glorot_uniform(rng, {J, h}, h, J));
    }
    int ch_in = J;
    for (int ch_out : config_.conv_channels) {
        ConvLayer layer;
        layer.kernel = make_var(glorot_uniform(rng, {ch_out, ch_in, 1, 3}, ch_in * 3, ch_out * 3));
        layer.bias = make_var(Tensor({ch_out}));
        conv_layers_.push_back(layer);
        ch_in = ch_out;
    }
    fc_weight_ = make_var(glorot_uniform(rng, {config_.num_classes, ch_in}, ch_in,
                                         config_.num_classes));
    fc_bias_ = make_var(Tensor({config_.num_classes}));
    collect_params();
}

void Network::collect_params() {
    params_.clear();
    if (config_.use_attention) {
        params_.push_back(attention_.w1);
        params_.push_back(attention_.w2);
    }
    for (auto& l : conv_layers_) {
        params_.push_back(l.kernel);
        params_.push_back(l.bias);
    }
    params_.push_back(fc_weight_);
    params_.push_back(fc_bias_);
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
}

Var squeeze(Tape& tape, const Var& s) {
    if (s->value.ndim() != 3) {
        throw std::invalid_argument("squeeze: expected [T x C x J] input, got " +
                                    shape_str(s->value.shape()));
    }
    return ops::global_average_pool(tape, s, 2);
}

Var excite(Tape& tape, const Var& z, const AttentionModule& attention) {
    Var h = ops::relu(tape, ops::matmul(tape, attention.w1, z));
    return ops::sigmoid(tape, ops::matmul(tape, attention.w2, h));
}

Var apply_attention(Tape& tape, const Var& s, const Var& attention) {
    const int J = s->value.extent(2);
    if (attention->value.ndim() != 1 || attention->value.extent(0) != J) {
        throw std::invalid_argument("apply_attention: attention " +
                                    shape_str(attention->value.shape()) +
                                    " does not match input " + shape_str(s->value.shape()));
    }
    Var a3 = ops::reshape(tape, attention, {1, 1, J});
    return ops::mul(tape, s, a3);
}

ForwardResult Network::forward(Tape& tape, const Tensor& s) const {
    if (s.ndim() != 3 || s.extent(0) != config_.frames || s.extent(1) != config_.coords ||
        s.extent(2) != config_.joints) {
        throw std::invalid_argument(
            "forward: input " + shape_str(s.shape()) + " does not match configured [" +
            std::to_string(config_.frames) + "x" + std::to_string(config_.coords) + "x" +
            std::to_string(config_.joints) + "]");
    }
    Var input = make_const(s);

    Var attention;
    Var attended;
    if (config_.use_attention) {
        Var z = squeeze(tape, input);
        attention = excite(tape, z, attention_);
        attended = apply_attention(tape, input, attention);
    } else {
        attention = make_const(Tensor({config_.joints}, 1.0));
        attended = input;
    }

    // joints become conv channels; taps slide over the frame axis
    Var x = ops::permute(tape, attended, {2, 1, 0});  // [J x C x T]
    for (const auto& layer : conv_layers_) {
        x = ops::conv2d(tape, x, layer.kernel, layer.bias, {1, 1}, {0, 1});
        x = ops::relu(tape, x);
    }
    Var pooled = ops::global_average_pool(tape, x, 0);
    Var logits = ops::add(tape, ops::matmul(tape, fc_weight_, pooled), fc_bias_);
    ForwardResult r;
    r.probs = ops::softmax(tape, logits);
    r.attention = attention;
    return r;
}

namespace {

void write_tensor_line(std::ostream& out, const std::string& name, const Tensor& t) {
    out << name;
    for (std::size_t i = 0; i < t.numel(); ++i) out << ' ' << format_double(t[i], 17);
    out << '\n';
}

void read_tensor_line(std::istream& in, const std::string& expected, Tensor& t) {
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("model file truncated before tensor " + expected);
    }
    std::istringstream is(line);
    std::string name;
    is >> name;
    if (name != expected) {
        throw std::runtime_error("model file: expected tensor '" + expected + "', found '" +
                                 name + "'");
    }
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if (!(is >> t[i])) {
            throw std::runtime_error("model file: tensor '" + expected + "' too short");
        }
    }
    double extra = 0.0;
    if (is >> extra) {
        throw std::runtime_error("model file: tensor '" + expected + "' too long");
    }
}

}  // namespace

void Network::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write model file " + path);
    }
    out << "frames=" << config_.frames << '\n';
    out << "coords=" << config_.coords << '\n';
    out << "joints=" << config_.joints << '\n';
    out << "conv_channels=";
    for (std::size_t i = 0; i < config_.conv_channels.size(); ++i) {
        if (i) out << ',';
        out << config_.conv_channels[i];
    }
    out << '\n';
    out << "reduction=" << config_.reduction << '\n';
    out << "num_classes=" << config_.num_classes << '\n';
    out << "use_attention=" << (config_.use_attention ? 1 : 0) << '\n';
    out << "tensors\n";
    if (config_.use_attention) {
        write_tensor_line(out, "attention.w1", attention_.w1->value);
        write_tensor_line(out, "attention.w2", attention_.w2->value);
    }
    for (std::size_t i = 0; i < conv_layers_.size(); ++i) {
        write_tensor_line(out, "conv" + std::to_string(i + 1) + ".kernel",
                          conv_layers_[i].kernel->value);
        write_tensor_line(out, "conv" + std::to_string(i + 1) + ".bias",
                          conv_layers_[i].bias->value);
    }
    write_tensor_line(out, "fc.weight", fc_weight_->value);
    write_tensor_line(out, "fc.bias", fc_bias_->value);
    if (!out) {
        throw std::runtime_error("failed writing model file " + path);
    }
}

Network Network::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open model file " + path);
    }
    NetworkConfig cfg;
    cfg.conv_channels.clear();
    std::string line;
    while (std::getline(in, line)) {
        if (line == "tensors") break;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("model file: malformed header line '" + line + "'");
        }
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "frames") {
            cfg.frames = std::stoi(val);
        } else if (key == "coords") {
            cfg.coords = std::stoi(val);
        } else if (key == "joints") {
            cfg.joints = std::stoi(val);
        } else if (key == "conv_channels") {
            std::istringstream is(val);
            std::string tok;
            while (std::getline(is, tok, ',')) cfg.conv_channels.push_back(std::stoi(tok));
        } else if (key == "reduction") {
            cfg.reduction = std::stoi(val);
        } else if (key == "num_classes") {
            cfg.num_classes = std::stoi(val);
        } else if (key == "use_attention") {
            cfg.use_attention = val != "0";
        } else {
            throw std::runtime_error("model file: unknown header key '" + key + "'");
        }
    }
    Network net(cfg, 0);
    if (cfg.use_attention) {
        read_tensor_line(in, "attention.w1", net.attention_.w1->value);
        read_tensor_line(in, "attention.w2", net.attention_.w2->value);
    }
    for (std::size_t i = 0; i < net.conv_layers_.size(); ++i) {
        read_tensor_line(in, "conv" + std::to_string(i + 1) + ".kernel",
                         net.conv_layers_[i].kernel->value);
        read_tensor_line(in, "conv" + std::to_string(i + 1) + ".bias",
                         net.conv_layers_[i].bias->value);
    }
    read_tensor_line(in, "fc.weight", net.fc_weight_->value);
    read_tensor_line(in, "fc.bias", net.fc_bias_->value);
    return net;
}

}  // namespace cpattn
