#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cpattn/dataset.hpp"
#include "cpattn/evaluation.hpp"
#include "cpattn/model.hpp"
#include "cpattn/rng.hpp"
#include "cpattn/training.hpp"

namespace {

using namespace cpattn;

struct Settings {
    NetworkConfig net;
    TrainConfig train;
    LossWeights weights;
    int jobs = 1;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(key + ": bad integer '" + value + "'");
    return v;
}

double parse_real(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(key + ": bad number '" + value + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::invalid_argument(key + ": bad boolean '" + value + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
    if (out.empty()) throw std::invalid_argument(key + ": empty list");
    return out;
}

void apply_setting(Settings& s, const std::string& key, const std::string& value) {
    if (key == "epochs") s.train.epochs = parse_int(key, value);
    else if (key == "learning_rate") s.train.learning_rate = parse_real(key, value);
    else if (key == "batch_size") s.train.batch_size = parse_int(key, value);
    else if (key == "seed") s.train.seed = static_cast<std::uint64_t>(std::stoull(value));
    else if (key == "gamma") s.weights.gamma = parse_real(key, value);
    else if (key == "lambda") s.weights.lambda = parse_real(key, value);
    else if (key == "squared_norm") s.weights.squared_norm = parse_bool(key, value);
    else if (key == "sum_attention_over_batch")
        s.weights.sum_attention_over_batch = parse_bool(key, value);
    else if (key == "frames") s.net.frames = parse_int(key, value);
    else if (key == "coords") s.net.coords = parse_int(key, value);
    else if (key == "joints") s.net.joints = parse_int(key, value);
    else if (key == "conv_channels") s.net.conv_channels = parse_int_list(key, value);
    else if (key == "reduction") s.net.reduction = parse_int(key, value);
    else if (key == "num_classes") s.net.num_classes = parse_int(key, value);
    else if (key == "use_attention") s.net.use_attention = parse_bool(key, value);
    else if (key == "jobs") s.jobs = parse_int(key, value);
    else throw std::invalid_argument("unknown config key '" + key + "'");
}

void load_config(Settings& s, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected key=value");
        }
        apply_setting(s, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
}

Dataset load_and_preprocess(const Settings& s, const std::string& data_dir,
                            const std::string& manifest) {
    return preprocess(load_dataset(data_dir, manifest), s.net.frames);
}

std::string accuracy_line(const RunReport& r) {
    int correct = 0;
    for (const auto& f : r.folds) {
        if (f.predicted_label == f.true_label) ++correct;
    }
    std::ostringstream out;
    out << "accuracy " << correct << '/' << r.folds.size() << " = "
        << format_double(r.accuracy, 9);
    return out.str();
}

int cmd_train(const Settings& s, const std::string& data_dir, const std::string& manifest,
              const std::string& out_dir) {
    Dataset ds = load_and_preprocess(s, data_dir, manifest);
    LossWeights weights = s.weights;
    weights.alpha = class_weights(ds.size(), ds.class_counts, s.net.num_classes);
    std::vector<const MotionSample*> all;
    for (const auto& sample : ds.samples) all.push_back(&sample);

    Network net(s.net, derive_seed(s.train.seed, 1));
    TrainResult result = train(net, all, s.train, weights);

    std::filesystem::create_directories(out_dir);
    net.save(out_dir + "/model.txt");
    write_loss_history_csv(out_dir + "/loss_history.csv", result.history);
    if (!result.history.empty()) {
        std::cout << "trained " << ds.size() << " samples for " << s.train.epochs
                  << " epochs; final loss " << format_double(result.history.back().total, 9)
                  << '\n';
    } else {
        std::cout << "trained " << ds.size() << " samples for 0 epochs\n";
    }
    return 0;
}

int cmd_loocv(const Settings& s, const std::string& data_dir, const std::string& manifest,
              const std::string& out_dir) {
    Dataset ds = load_and_preprocess(s, data_dir, manifest);
    RunReport report = loocv(ds, s.net, s.train, s.weights, s.jobs);
    emit_reports(report, out_dir);
    std::cout << accuracy_line(report);
    if (report.has_attention) {
        std::cout << "; avg attention " << format_double(report.stats.avg_attention, 9);
    }
    std::cout << '\n';
    return 0;
}

int cmd_ablate(const Settings& s, const std::string& data_dir, const std::string& manifest,
               const std::string& out_dir) {
    Dataset ds = load_and_preprocess(s, data_dir, manifest);
    auto [without, with] = ablation_attention_loss(ds, s.net, s.train, s.weights, s.jobs);
    emit_reports(without, out_dir + "/without_attention_loss");
    emit_reports(with, out_dir + "/with_attention_loss");

    std::ostringstream csv;
    csv << "metric,without_l_att,with_l_att\n";
    for (std::size_t i = 0; i < without.stats.thresholds.size(); ++i) {
        csv << "attention_ge_" << format_double(without.stats.thresholds[i], 9) << ','
            << format_double(without.stats.avg_counts[i], 17) << ','
            << format_double(with.stats.avg_counts[i], 17) << '\n';
    }
    csv << "avg_attention," << format_double(without.stats.avg_attention, 17) << ','
        << format_double(with.stats.avg_attention, 17) << '\n';
    csv << "accuracy," << format_double(without.accuracy, 17) << ','
        << format_double(with.accuracy, 17) << '\n';
    std::ofstream out(out_dir + "/ablation_summary.csv", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + out_dir + "/ablation_summary.csv");
    out << csv.str();

    std::cout << "without L_att: " << accuracy_line(without) << ", avg attention "
              << format_double(without.stats.avg_attention, 9) << '\n';
    std::cout << "with L_att:    " << accuracy_line(with) << ", avg attention "
              << format_double(with.stats.avg_attention, 9) << '\n';
    return 0;
}

int cmd_synth(const std::string& preset, std::uint64_t seed, const std::string& out_dir) {
    SyntheticConfig cfg;
    if (preset == "separable") {
        // defaults
    } else if (preset == "null") {
        cfg.separation = 1.0;
    } else {
        throw std::invalid_argument("unknown preset '" + preset + "' (use separable or null)");
    }
    Dataset ds = generate_synthetic(cfg, seed);
    write_dataset(out_dir, ds);
    std::cout << "wrote " << ds.size() << " samples to " << out_dir << '\n';
    return 0;
}

int cmd_report(const std::string& in_path, const std::string& out_dir) {
    RunReport report = read_run_report(in_path);
    emit_reports(report, out_dir);
    std::cout << "re-emitted report for " << report.folds.size() << " folds to " << out_dir
              << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Per-joint attention classifier for infant motion sequences"};
    app.require_subcommand(1);

    Settings settings;
    std::string data_dir, manifest, out_dir, config_path, preset, in_path;
    double gamma_flag = 0.0;
    std::uint64_t seed_flag = 0;
    int jobs_flag = 1;
    bool no_attention = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--data", data_dir, "dataset directory")->required();
        cmd->add_option("--manifest", manifest, "manifest file")->required();
        cmd->add_option("--out", out_dir, "output directory")->required();
        cmd->add_option("--config", config_path, "key=value config file");
        cmd->add_option("--seed", seed_flag, "global seed");
        cmd->add_option("--jobs", jobs_flag, "max concurrent folds");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train on the full dataset");
    add_common(train_cmd);

    CLI::App* loocv_cmd = app.add_subcommand("loocv", "leave-one-out cross-validation");
    add_common(loocv_cmd);
    loocv_cmd->add_option("--gamma", gamma_flag, "attention loss weight");
    loocv_cmd->add_flag("--no-attention", no_attention, "bypass the attention stage");

    CLI::App* ablate_cmd =
        app.add_subcommand("ablate-attention-loss", "paired runs with gamma 0 vs gamma");
    add_common(ablate_cmd);

    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
    synth_cmd->add_option("--preset", preset, "separable|null")->required();
    synth_cmd->add_option("--seed", seed_flag, "generator seed");
    synth_cmd->add_option("--out", out_dir, "output directory")->required();

    CLI::App* report_cmd = app.add_subcommand("report", "re-emit CSV/SVG from a report");
    report_cmd->add_option("--in", in_path, "run_report.json path")->required();
    report_cmd->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        CLI::App* cmd = app.get_subcommands().front();
        if (cmd == synth_cmd) return cmd_synth(preset, seed_flag, out_dir);
        if (cmd == report_cmd) return cmd_report(in_path, out_dir);

        if (!config_path.empty()) load_config(settings, config_path);
        if (cmd->count("--seed") > 0) settings.train.seed = seed_flag;
        if (cmd->count("--jobs") > 0) settings.jobs = jobs_flag;
        if (cmd == loocv_cmd) {
            if (cmd->count("--gamma") > 0) settings.weights.gamma = gamma_flag;
            if (no_attention) settings.net.use_attention = false;
            return cmd_loocv(settings, data_dir, manifest, out_dir);
        }
        if (cmd == train_cmd) return cmd_train(settings, data_dir, manifest, out_dir);
        if (cmd == ablate_cmd) return cmd_ablate(settings, data_dir, manifest, out_dir);
        throw std::logic_error("unhandled subcommand");
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
