#include "cpattn/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cpattn/rng.hpp"

namespace cpattn {

using nlohmann::json;

std::vector<double> attention_thresholds() { return {0.5, 0.6, 0.7, 0.8, 0.9, 1.0}; }

Dataset preprocess(const Dataset& dataset, int target_frames) {
    Dataset out;
    out.num_classes = dataset.num_classes;
    out.class_counts = dataset.class_counts;
    out.samples.reserve(dataset.samples.size());
    for (const auto& sample : dataset.samples) {
        out.samples.push_back(resample_frames(normalize_spine(sample), target_frames));
    }
    return out;
}

namespace {

std::string label_name(int label) {
    if (label == kLabelNormal) return "normal";
    if (label == kLabelAbnormal) return "abnormal";
    return "class " + std::to_string(label);
}

int argmax_prob(const Tensor& probs) {
    int best = 0;  // ties keep the lowest index, i.e. resolve to normal
    for (int i = 1; i < probs.extent(0); ++i) {
        if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) best = i;
    }
    return best;
}

FoldReport run_fold(const Dataset& dataset, int fold, const NetworkConfig& net_cfg,
                    const TrainConfig& cfg, const LossWeights& weights) {
    const int n = dataset.size();
    std::vector<const MotionSample*> split;
    std::vector<int> counts(static_cast<std::size_t>(net_cfg.num_classes), 0);
    split.reserve(static_cast<std::size_t>(n) - 1);
    for (int i = 0; i < n; ++i) {
        if (i == fold) continue;
        const MotionSample& s = dataset.samples[static_cast<std::size_t>(i)];
        if (s.label < 0 || s.label >= net_cfg.num_classes) {
            throw std::invalid_argument("loocv: sample " + s.id + " has label " +
                                        std::to_string(s.label));
        }
        split.push_back(&s);
        counts[static_cast<std::size_t>(s.label)] += 1;
    }
    for (int c = 0; c < net_cfg.num_classes; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0) {
            throw std::runtime_error("loocv: fold " + std::to_string(fold) +
                                     " training split has no " + label_name(c) + " samples");
        }
    }

    LossWeights fold_weights = weights;
    fold_weights.alpha = class_weights(n - 1, counts, net_cfg.num_classes);

    const std::uint64_t fold_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(fold));
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = fold_seed;

    Network net(net_cfg, derive_seed(fold_seed, 1));
    TrainResult trained = train(net, split, fold_cfg, fold_weights);

    FoldReport fr;
    fr.fold_index = fold;
    fr.class_weights = fold_weights.alpha;
    if (!trained.history.empty()) fr.final_train_loss = trained.history.back();

    const MotionSample& held_out = dataset.samples[static_cast<std::size_t>(fold)];
    fr.held_out_id = held_out.id;
    fr.true_label = held_out.label;
    {
        Tape tape;
        ForwardResult fwd = net.forward(tape, held_out.positions);
        fr.probs = fwd.probs->value;
        fr.attention = fwd.attention->value;
    }
    fr.predicted_label = argmax_prob(fr.probs);

    Tensor mean_att({net_cfg.joints});
    for (const MotionSample* s : split) {
        Tape tape;
        ForwardResult fwd = net.forward(tape, s->positions);
        for (int j = 0; j < net_cfg.joints; ++j) {
            mean_att[static_cast<std::size_t>(j)] += fwd.attention->value[static_cast<std::size_t>(j)];
        }
    }
    const double inv = 1.0 / static_cast<double>(split.size());
    for (int j = 0; j < net_cfg.joints; ++j) mean_att[static_cast<std::size_t>(j)] *= inv;
    fr.mean_train_attention = mean_att;
    return fr;
}

// q-quantile of an ascending vector, linear interpolation between ranks.
double quantile_sorted(const std::vector<double>& v, double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= v.size()) return v.back();
    const double frac = pos - static_cast<double>(lo);
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
    if (!out) throw std::runtime_error("failed writing " + path);
}

json tensor_to_json(const Tensor& t) {
    json a = json::array();
    for (std::size_t i = 0; i < t.numel(); ++i) a.push_back(t[i]);
    return a;
}

Tensor tensor_from_json(const json& a) {
    std::vector<double> values = a.get<std::vector<double>>();
    const int n = static_cast<int>(values.size());
    return Tensor({n}, std::move(values));
}

json run_report_to_json(const RunReport& report) {
    json j;
    j["schema"] = "cpattn-run-report-v1";
    j["seed"] = report.seed;
    j["gamma"] = report.gamma;
    j["lambda"] = report.lambda;
    j["use_attention"] = report.has_attention;
    j["accuracy"] = report.accuracy;
    j["joint_names"] = report.joint_names;
    json folds = json::array();
    for (const auto& f : report.folds) {
        json jf;
        jf["fold_index"] = f.fold_index;
        jf["held_out_id"] = f.held_out_id;
        jf["true_label"] = f.true_label;
        jf["predicted_label"] = f.predicted_label;
        jf["probs"] = tensor_to_json(f.probs);
        jf["class_weights"] = tensor_to_json(f.class_weights);
        jf["final_train_loss"] = {{"total", f.final_train_loss.total},
                                  {"cep", f.final_train_loss.cep},
                                  {"att", f.final_train_loss.att},
                                  {"weight_norm", f.final_train_loss.weight_norm}};
        if (report.has_attention) {
            jf["attention"] = tensor_to_json(f.attention);
            jf["mean_train_attention"] = tensor_to_json(f.mean_train_attention);
        }
        folds.push_back(std::move(jf));
    }
    j["folds"] = std::move(folds);
    if (report.has_attention) {
        json stats;
        stats["thresholds"] = report.stats.thresholds;
        stats["avg_counts"] = report.stats.avg_counts;
        json per_joint = json::array();
        for (const auto& s : report.stats.per_joint) {
            per_joint.push_back({{"min", s.min},
                                 {"q1", s.q1},
                                 {"median", s.median},
                                 {"q3", s.q3},
                                 {"max", s.max}});
        }
        stats["per_joint"] = std::move(per_joint);
        stats["avg_attention"] = report.stats.avg_attention;
        j["attention_stats"] = std::move(stats);
    }
    return j;
}

RunReport run_report_from_json(const json& j) {
    RunReport report;
    report.seed = j.at("seed").get<std::uint64_t>();
    report.gamma = j.at("gamma").get<double>();
    report.lambda = j.at("lambda").get<double>();
    report.has_attention = j.at("use_attention").get<bool>();
    report.accuracy = j.at("accuracy").get<double>();
    report.joint_names = j.at("joint_names").get<std::vector<std::string>>();
    for (const auto& jf : j.at("folds")) {
        FoldReport f;
        f.fold_index = jf.at("fold_index").get<int>();
        f.held_out_id = jf.at("held_out_id").get<std::string>();
        f.true_label = jf.at("true_label").get<int>();
        f.predicted_label = jf.at("predicted_label").get<int>();
        f.probs = tensor_from_json(jf.at("probs"));
        f.class_weights = tensor_from_json(jf.at("class_weights"));
        const json& loss = jf.at("final_train_loss");
        f.final_train_loss.total = loss.at("total").get<double>();
        f.final_train_loss.cep = loss.at("cep").get<double>();
        f.final_train_loss.att = loss.at("att").get<double>();
        f.final_train_loss.weight_norm = loss.at("weight_norm").get<double>();
        if (report.has_attention) {
            f.attention = tensor_from_json(jf.at("attention"));
            f.mean_train_attention = tensor_from_json(jf.at("mean_train_attention"));
        }
        report.folds.push_back(std::move(f));
    }
    if (report.has_attention) {
        const json& stats = j.at("attention_stats");
        report.stats.thresholds = stats.at("thresholds").get<std::vector<double>>();
        report.stats.avg_counts = stats.at("avg_counts").get<std::vector<double>>();
        for (const auto& s : stats.at("per_joint")) {
            JointStats js;
            js.min = s.at("min").get<double>();
            js.q1 = s.at("q1").get<double>();
            js.median = s.at("median").get<double>();
            js.q3 = s.at("q3").get<double>();
            js.max = s.at("max").get<double>();
            report.stats.per_joint.push_back(js);
        }
        report.stats.avg_attention = stats.at("avg_attention").get<double>();
    }
    return report;
}

}  // namespace

RunReport loocv(const Dataset& dataset, const NetworkConfig& net_cfg, const TrainConfig& cfg,
                const LossWeights& weights, int jobs) {
    const int n = dataset.size();
    if (n < 2) throw std::invalid_argument("loocv: need at least 2 samples");
    for (const auto& s : dataset.samples) {
        if (s.frames() != net_cfg.frames || s.coords() != net_cfg.coords ||
            s.joints() != net_cfg.joints) {
            throw std::invalid_argument("loocv: sample " + s.id + " has shape " +
                                        shape_str(s.positions.shape()) +
                                        "; preprocess to the network's input size first");
        }
    }

    std::vector<FoldReport> folds(static_cast<std::size_t>(n));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    jobs = std::clamp(jobs, 1, n);

#ifdef _OPENMP
    const int base_threads = omp_get_max_threads();
#endif
    std::atomic<int> next{0};
    auto worker = [&](bool cap_omp) {
#ifdef _OPENMP
        if (cap_omp) omp_set_num_threads(std::max(1, base_threads / jobs));
#else
        (void)cap_omp;
#endif
        for (int k = next.fetch_add(1); k < n; k = next.fetch_add(1)) {
            try {
                folds[static_cast<std::size_t>(k)] = run_fold(dataset, k, net_cfg, cfg, weights);
            } catch (...) {
                errors[static_cast<std::size_t>(k)] = std::current_exception();
            }
        }
    };
    if (jobs == 1) {
        worker(false);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(jobs));
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker, true);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    RunReport report;
    report.folds = std::move(folds);
    report.has_attention = net_cfg.use_attention;
    report.joint_names = dataset.samples.front().joint_names;
    report.seed = cfg.seed;
    report.gamma = weights.gamma;
    report.lambda = weights.lambda;
    int correct = 0;
    for (const auto& f : report.folds) {
        if (f.predicted_label == f.true_label) ++correct;
    }
    report.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (report.has_attention) report.stats = attention_statistics(report.folds);
    return report;
}

AttentionStats attention_statistics(const std::vector<FoldReport>& folds) {
    if (folds.empty()) throw std::invalid_argument("attention_statistics: no folds");
    const int joints = folds.front().attention.extent(0);
    for (const auto& f : folds) {
        if (f.attention.ndim() != 1 || f.attention.extent(0) != joints) {
            throw std::invalid_argument("attention_statistics: fold " +
                                        std::to_string(f.fold_index) +
                                        " attention has shape " +
                                        shape_str(f.attention.shape()));
        }
    }

    AttentionStats stats;
    stats.thresholds = attention_thresholds();
    stats.avg_counts.assign(stats.thresholds.size(), 0.0);
    for (const auto& f : folds) {
        for (std::size_t ti = 0; ti < stats.thresholds.size(); ++ti) {
            const double tau = stats.thresholds[ti];
            const double cut = tau >= 1.0 ? 1.0 - kSaturationEps : tau;
            int count = 0;
            for (int j = 0; j < joints; ++j) {
                if (f.attention[static_cast<std::size_t>(j)] >= cut) ++count;
            }
            stats.avg_counts[ti] += static_cast<double>(count);
        }
    }
    for (auto& c : stats.avg_counts) c /= static_cast<double>(folds.size());

    stats.per_joint.resize(static_cast<std::size_t>(joints));
    double total = 0.0;
    std::vector<double> values(folds.size());
    for (int j = 0; j < joints; ++j) {
        for (std::size_t f = 0; f < folds.size(); ++f) {
            values[f] = folds[f].attention[static_cast<std::size_t>(j)];
            total += values[f];
        }
        std::sort(values.begin(), values.end());
        JointStats& js = stats.per_joint[static_cast<std::size_t>(j)];
        js.min = values.front();
        js.q1 = quantile_sorted(values, 0.25);
        js.median = quantile_sorted(values, 0.5);
        js.q3 = quantile_sorted(values, 0.75);
        js.max = values.back();
    }
    stats.avg_attention = total / (static_cast<double>(folds.size()) * joints);
    return stats;
}

std::pair<RunReport, RunReport> ablation_attention_loss(const Dataset& dataset,
                                                        const NetworkConfig& net_cfg,
                                                        const TrainConfig& cfg,
                                                        const LossWeights& weights, int jobs) {
    LossWeights without = weights;
    without.gamma = 0.0;
    RunReport base = loocv(dataset, net_cfg, cfg, without, jobs);
    RunReport with = loocv(dataset, net_cfg, cfg, weights, jobs);
    return {std::move(base), std::move(with)};
}

RunReport ablation_no_attention(const Dataset& dataset, const NetworkConfig& net_cfg,
                                const TrainConfig& cfg, const LossWeights& weights, int jobs) {
    NetworkConfig bypass = net_cfg;
    bypass.use_attention = false;
    return loocv(dataset, bypass, cfg, weights, jobs);
}

std::string render_boxplot_svg(const RunReport& report) {
    if (!report.has_attention || report.stats.per_joint.empty()) {
        throw std::invalid_argument("render_boxplot_svg: report has no attention statistics");
    }
    const int joints = static_cast<int>(report.stats.per_joint.size());
    const double left = 52.0, slot = 36.0, right = 16.0, top = 18.0, plot_h = 240.0,
                 bottom = 86.0, box_w = 20.0;
    const double width = left + slot * joints + right;
    const double height = top + plot_h + bottom;
    auto y_of = [&](double v) { return top + (1.0 - v) * plot_h; };
    auto num = [](double v) { return format_double(v, 9); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\""
        << num(height) << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height) << "\">\n";
    svg << "  <style>text{font:11px sans-serif;fill:#222}.axis{stroke:#222;stroke-width:1}"
           ".grid{stroke:#ddd;stroke-width:1}.whisker{stroke:#444;stroke-width:1}"
           ".box{fill:#9ecae1;stroke:#3182bd;stroke-width:1}"
           ".median{stroke:#08306b;stroke-width:2}</style>\n";
    svg << "  <text x=\"" << num(left) << "\" y=\"12\">Per-joint attention across folds</text>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double v = 0.25 * tick;
        const double y = y_of(v);
        svg << "  <line class=\"grid\" x1=\"" << num(left) << "\" y1=\"" << num(y) << "\" x2=\""
            << num(width - right) << "\" y2=\"" << num(y) << "\"/>\n";
        svg << "  <text x=\"" << num(left - 8.0) << "\" y=\"" << num(y + 4.0)
            << "\" text-anchor=\"end\">" << num(v) << "</text>\n";
    }
    svg << "  <line class=\"axis\" x1=\"" << num(left) << "\" y1=\"" << num(y_of(1.0))
        << "\" x2=\"" << num(left) << "\" y2=\"" << num(y_of(0.0)) << "\"/>\n";
    svg << "  <line class=\"axis\" x1=\"" << num(left) << "\" y1=\"" << num(y_of(0.0))
        << "\" x2=\"" << num(width - right) << "\" y2=\"" << num(y_of(0.0)) << "\"/>\n";

    for (int j = 0; j < joints; ++j) {
        const JointStats& s = report.stats.per_joint[static_cast<std::size_t>(j)];
        const double cx = left + slot * j + slot / 2.0;
        svg << "  <line class=\"whisker\" x1=\"" << num(cx) << "\" y1=\"" << num(y_of(s.min))
            << "\" x2=\"" << num(cx) << "\" y2=\"" << num(y_of(s.max)) << "\"/>\n";
        svg << "  <rect class=\"box\" x=\"" << num(cx - box_w / 2.0) << "\" y=\""
            << num(y_of(s.q3)) << "\" width=\"" << num(box_w) << "\" height=\""
            << num(y_of(s.q1) - y_of(s.q3)) << "\"/>\n";
        svg << "  <line class=\"median\" x1=\"" << num(cx - box_w / 2.0) << "\" y1=\""
            << num(y_of(s.median)) << "\" x2=\"" << num(cx + box_w / 2.0) << "\" y2=\""
            << num(y_of(s.median)) << "\"/>\n";
        const std::string name = j < static_cast<int>(report.joint_names.size())
                                     ? report.joint_names[static_cast<std::size_t>(j)]
                                     : std::to_string(j);
        const double ly = y_of(0.0) + 14.0;
        svg << "  <text x=\"" << num(cx) << "\" y=\"" << num(ly) << "\" text-anchor=\"end\""
            << " transform=\"rotate(-45 " << num(cx) << ' ' << num(ly) << ")\">" << name
            << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

void emit_reports(const RunReport& report, const std::string& out_dir) {
    if (report.folds.empty()) {
        throw std::invalid_argument("emit_reports: report has no folds");
    }
    std::filesystem::create_directories(out_dir);
    write_file(out_dir + "/run_report.json", run_report_to_json(report).dump(2) + "\n");
    if (!report.has_attention) return;

    std::ostringstream csv;
    csv << "threshold,avg_joint_count\n";
    for (std::size_t i = 0; i < report.stats.thresholds.size(); ++i) {
        csv << format_double(report.stats.thresholds[i], 17) << ','
            << format_double(report.stats.avg_counts[i], 17) << '\n';
    }
    write_file(out_dir + "/attention_stats.csv", csv.str());
    write_file(out_dir + "/boxplot.svg", render_boxplot_svg(report));

    for (const auto& f : report.folds) {
        std::ostringstream fold_csv;
        fold_csv << "joint_index,joint_name,attention,mean_train_attention\n";
        for (int j = 0; j < f.attention.extent(0); ++j) {
            const std::string name = j < static_cast<int>(report.joint_names.size())
                                         ? report.joint_names[static_cast<std::size_t>(j)]
                                         : std::to_string(j);
            fold_csv << j << ',' << name << ','
                     << format_double(f.attention[static_cast<std::size_t>(j)], 17) << ','
                     << format_double(f.mean_train_attention[static_cast<std::size_t>(j)], 17)
                     << '\n';
        }
        write_file(out_dir + "/fold_" + std::to_string(f.fold_index) + "_attention.csv",
                   fold_csv.str());
    }
}

RunReport read_run_report(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    json j;
    try {
        in >> j;
        return run_report_from_json(j);
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

}  // namespace cpattn
