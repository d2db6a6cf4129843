#include "cpattn/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "cpattn/rng.hpp"

namespace fs = std::filesystem;

namespace cpattn {

namespace {

[[noreturn]] void load_error(const std::string& path, int line, const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

double parse_number(const std::string& tok, const std::string& path, int line) {
    double v = 0.0;
    const char* b = tok.data();
    const char* e = b + tok.size();
    auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e) {
        load_error(path, line, "malformed number '" + tok + "'");
    }
    if (!std::isfinite(v)) {
        load_error(path, line, "non-finite value '" + tok + "'");
    }
    return v;
}

}  // namespace

std::string format_double(double v, int significant_digits) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general,
                                   significant_digits);
    (void)ec;
    return std::string(buf, ptr);
}

MotionSample load_sample(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open sample file " + path);
    }
    MotionSample s;
    s.id = fs::path(path).stem().string();
    s.spine_index = -1;

    std::string line;
    int lineno = 0;
    std::vector<double> flat;
    int joints = 0;

    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto toks = split_ws(line);
            if (toks[0] == "#joints") {
                if (joints != 0) load_error(path, lineno, "duplicate #joints header");
                s.joint_names.assign(toks.begin() + 1, toks.end());
                joints = static_cast<int>(s.joint_names.size());
                if (joints == 0) load_error(path, lineno, "#joints header lists no names");
                std::set<std::string> uniq(s.joint_names.begin(), s.joint_names.end());
                if (static_cast<int>(uniq.size()) != joints) {
                    load_error(path, lineno, "duplicate joint names");
                }
            } else if (toks[0] == "#spine") {
                if (toks.size() != 2) load_error(path, lineno, "#spine expects one index");
                s.spine_index = static_cast<int>(parse_number(toks[1], path, lineno));
            }
            continue;
        }
        if (joints == 0) load_error(path, lineno, "data before #joints header");
        auto toks = split_ws(line);
        if (static_cast<int>(toks.size()) != 3 * joints) {
            load_error(path, lineno,
                       "expected " + std::to_string(3 * joints) + " values, got " +
                           std::to_string(toks.size()));
        }
        for (const auto& tok : toks) flat.push_back(parse_number(tok, path, lineno));
    }
    if (joints == 0) throw std::runtime_error(path + ": missing #joints header");
    if (flat.empty()) throw std::runtime_error(path + ": no frames");

    if (s.spine_index < 0) {
        auto it = std::find(s.joint_names.begin(), s.joint_names.end(), "spine");
        if (it == s.joint_names.end()) {
            throw std::runtime_error(path + ": no #spine header and no joint named 'spine'");
        }
        s.spine_index = static_cast<int>(it - s.joint_names.begin());
    }
    if (s.spine_index >= joints) {
        throw std::runtime_error(path + ": spine index " + std::to_string(s.spine_index) +
                                 " out of range for " + std::to_string(joints) + " joints");
    }

    const int frames = static_cast<int>(flat.size()) / (3 * joints);
    // file lines are joint-major (x_j y_j z_j per joint); tensor is [T x C x J]
    Tensor pos({frames, 3, joints});
    for (int t = 0; t < frames; ++t)
        for (int j = 0; j < joints; ++j)
            for (int c = 0; c < 3; ++c)
                pos.at(t, c, j) = flat[static_cast<std::size_t>((t * joints + j) * 3 + c)];
    s.positions = std::move(pos);
    return s;
}

void save_sample(const std::string& path, const MotionSample& sample) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write sample file " + path);
    }
    out << "#joints";
    for (const auto& n : sample.joint_names) out << ' ' << n;
    out << '\n';
    out << "#spine " << sample.spine_index << '\n';
    const int T = sample.frames(), J = sample.joints();
    for (int t = 0; t < T; ++t) {
        for (int j = 0; j < J; ++j) {
            for (int c = 0; c < 3; ++c) {
                if (j != 0 || c != 0) out << ' ';
                out << format_double(sample.positions.at(t, c, j), 9);
            }
        }
        out << '\n';
    }
    if (!out) {
        throw std::runtime_error("failed writing sample file " + path);
    }
}

Dataset load_dataset(const std::string& data_dir, const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) {
        throw std::runtime_error("cannot open manifest " + manifest_path);
    }
    Dataset ds;
    ds.class_counts.assign(2, 0);

    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto toks = split_ws(line);
        if (toks.empty()) continue;
        if (toks.size() != 2) {
            load_error(manifest_path, lineno, "expected '<path> <label>'");
        }
        int label = 0;
        if (toks[1] == "normal") {
            label = kLabelNormal;
        } else if (toks[1] == "abnormal") {
            label = kLabelAbnormal;
        } else {
            load_error(manifest_path, lineno, "unknown label '" + toks[1] + "'");
        }
        MotionSample s = load_sample((fs::path(data_dir) / toks[0]).string());
        s.label = label;
        if (!ds.samples.empty()) {
            const auto& first = ds.samples.front();
            if (s.joint_names != first.joint_names) {
                throw std::runtime_error("joint schema of '" + s.id +
                                         "' differs from '" + first.id + "'");
            }
        }
        ds.class_counts[static_cast<std::size_t>(label)] += 1;
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) {
        throw std::runtime_error(manifest_path + ": no samples");
    }
    return ds;
}

void write_dataset(const std::string& dir, const Dataset& dataset) {
    fs::create_directories(dir);
    std::ofstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) {
        throw std::runtime_error("cannot write manifest in " + dir);
    }
    for (const auto& s : dataset.samples) {
        const std::string file = s.id + ".txt";
        save_sample((fs::path(dir) / file).string(), s);
        manifest << file << ' ' << (s.label == kLabelAbnormal ? "abnormal" : "normal") << '\n';
    }
}

MotionSample normalize_spine(const MotionSample& sample) {
    MotionSample out = sample;
    const int T = sample.frames(), J = sample.joints();
    for (int t = 0; t < T; ++t) {
        for (int c = 0; c < 3; ++c) {
            const double spine = sample.positions.at(t, c, sample.spine_index);
            for (int j = 0; j < J; ++j) {
                out.positions.at(t, c, j) = sample.positions.at(t, c, j) - spine;
            }
        }
    }
    return out;
}

MotionSample resample_frames(const MotionSample& sample, int target_t) {
    if (target_t < 2) {
        throw std::invalid_argument("resample_frames: target frame count must be >= 2");
    }
    const int T = sample.frames();
    if (T < 2) {
        throw std::invalid_argument("resample_frames: sample must have >= 2 frames");
    }
    const int J = sample.joints();
    MotionSample out = sample;
    out.positions = Tensor({target_t, 3, J});
    for (int i = 0; i < target_t; ++i) {
        const double pos = static_cast<double>(i) * (T - 1) / (target_t - 1);
        int t0 = static_cast<int>(pos);
        if (t0 >= T - 1) t0 = T - 2;
        const double frac = pos - t0;
        for (int c = 0; c < 3; ++c) {
            for (int j = 0; j < J; ++j) {
                const double a = sample.positions.at(t0, c, j);
                const double b = sample.positions.at(t0 + 1, c, j);
                out.positions.at(i, c, j) = (1.0 - frac) * a + frac * b;
            }
        }
    }
    return out;
}

std::vector<std::string> default_joint_names(int joints) {
    static const std::vector<std::string> kSkeleton = {
        "spine",       "head",        "neck",        "thorax",
        "l_shoulder",  "r_shoulder",  "l_upper_arm", "r_upper_arm",
        "l_hand",      "r_hand",      "l_hip",       "r_hip",
        "l_knee",      "r_knee",      "l_foot",      "r_foot"};
    std::vector<std::string> names;
    names.reserve(static_cast<std::size_t>(joints));
    for (int j = 0; j < joints; ++j) {
        if (j < static_cast<int>(kSkeleton.size())) {
            names.push_back(kSkeleton[static_cast<std::size_t>(j)]);
        } else {
            names.push_back("joint_" + std::to_string(j));
        }
    }
    return names;
}

namespace {

// Infant-scale offsets from the spine (m) for the named skeleton.
constexpr double kOffsets[16][3] = {
    {0.0, 0.0, 0.0},       {0.0, 0.32, 0.02},    {0.0, 0.25, 0.01},   {0.0, 0.15, 0.01},
    {-0.09, 0.22, 0.0},    {0.09, 0.22, 0.0},    {-0.14, 0.18, 0.02}, {0.14, 0.18, 0.02},
    {-0.20, 0.10, 0.05},   {0.20, 0.10, 0.05},   {-0.05, -0.05, 0.0}, {0.05, -0.05, 0.0},
    {-0.08, -0.20, 0.03},  {0.08, -0.20, 0.03},  {-0.09, -0.32, 0.02}, {0.09, -0.32, 0.02}};

double base_offset(int joint, int coord) {
    if (joint < 16) return kOffsets[joint][coord];
    // deterministic fallback for larger skeletons
    const double a = 2.399963229728653 * joint;  // golden angle
    const double r = 0.1 + 0.15 * ((joint % 5) / 4.0);
    if (coord == 0) return r * std::cos(a);
    if (coord == 1) return r * std::sin(a);
    return 0.02 * ((joint % 3) - 1);
}

struct Oscillation {
    std::vector<double> freq, amp, phase;
};

Oscillation draw_oscillation(Rng& rng, const SyntheticConfig& cfg, double freq_mult,
                             double amp_mult) {
    Oscillation o;
    for (int k = 0; k < cfg.harmonics; ++k) {
        o.freq.push_back(rng.uniform(cfg.base_freq_lo, cfg.base_freq_hi) * freq_mult);
        o.amp.push_back(cfg.amplitude * rng.uniform(0.5, 1.0) / cfg.harmonics * amp_mult);
        o.phase.push_back(rng.uniform(0.0, 2.0 * 3.14159265358979323846));
    }
    return o;
}

double eval_oscillation(const Oscillation& o, double phase01) {
    double v = 0.0;
    for (std::size_t k = 0; k < o.freq.size(); ++k) {
        v += o.amp[k] * std::sin(2.0 * 3.14159265358979323846 * o.freq[k] * phase01 + o.phase[k]);
    }
    return v;
}

MotionSample make_sample(const SyntheticConfig& cfg, std::uint64_t sample_seed,
                         const std::string& id, int label,
                         const std::vector<std::string>& names) {
    Rng rng(sample_seed);
    const int J = cfg.joints;
    const int T = cfg.frames_min +
                  static_cast<int>(rng.below(static_cast<std::uint64_t>(
                      cfg.frames_max - cfg.frames_min + 1)));

    const bool boosted = label == kLabelAbnormal;
    const double freq_mult = (cfg.mode == "frequency" && boosted) ? cfg.separation : 1.0;
    const double amp_mult = (cfg.mode == "amplitude" && boosted) ? cfg.separation : 1.0;

    // global drift shared by every joint; removed again by spine-centering
    Oscillation drift[3];
    for (int c = 0; c < 3; ++c) {
        drift[c].freq = {rng.uniform(0.2, 0.8)};
        drift[c].amp = {cfg.drift_amplitude * rng.uniform(0.5, 1.0)};
        drift[c].phase = {rng.uniform(0.0, 2.0 * 3.14159265358979323846)};
    }

    std::vector<double> offsets(static_cast<std::size_t>(3 * J));
    std::vector<Oscillation> osc(static_cast<std::size_t>(3 * J));
    for (int j = 0; j < J; ++j) {
        const bool discr = j == cfg.discriminative_joint;
        for (int c = 0; c < 3; ++c) {
            offsets[static_cast<std::size_t>(j * 3 + c)] =
                base_offset(j, c) + rng.uniform(-cfg.offset_jitter, cfg.offset_jitter);
            osc[static_cast<std::size_t>(j * 3 + c)] =
                draw_oscillation(rng, cfg, discr ? freq_mult : 1.0, discr ? amp_mult : 1.0);
        }
    }

    MotionSample s;
    s.id = id;
    s.label = label;
    s.joint_names = names;
    s.spine_index = 0;
    s.positions = Tensor({T, 3, J});
    for (int t = 0; t < T; ++t) {
        const double phase01 = static_cast<double>(t) / T;
        for (int c = 0; c < 3; ++c) {
            const double g = eval_oscillation(drift[c], phase01);
            for (int j = 0; j < J; ++j) {
                double v = g;
                if (j != s.spine_index) {
                    v += offsets[static_cast<std::size_t>(j * 3 + c)] +
                         eval_oscillation(osc[static_cast<std::size_t>(j * 3 + c)], phase01);
                }
                s.positions.at(t, c, j) = v;
            }
        }
    }
    return s;
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
    if (config.normal_count <= 0 || config.abnormal_count <= 0) {
        throw std::invalid_argument("generate_synthetic: class sizes must be positive");
    }
    if (config.joints < 2 || config.discriminative_joint <= 0 ||
        config.discriminative_joint >= config.joints) {
        throw std::invalid_argument("generate_synthetic: discriminative joint out of range");
    }
    if (config.mode != "frequency" && config.mode != "amplitude") {
        throw std::invalid_argument("generate_synthetic: mode must be frequency or amplitude");
    }
    const auto names = default_joint_names(config.joints);
    Dataset ds;
    ds.class_counts.assign(2, 0);
    int index = 0;
    for (int i = 0; i < config.normal_count; ++i, ++index) {
        char id[32];
        std::snprintf(id, sizeof(id), "normal_%02d", i);
        ds.samples.push_back(make_sample(config, derive_seed(seed, static_cast<std::uint64_t>(index)),
                                         id, kLabelNormal, names));
        ds.class_counts[0] += 1;
    }
    for (int i = 0; i < config.abnormal_count; ++i, ++index) {
        char id[32];
        std::snprintf(id, sizeof(id), "abnormal_%02d", i);
        ds.samples.push_back(make_sample(config, derive_seed(seed, static_cast<std::uint64_t>(index)),
                                         id, kLabelAbnormal, names));
        ds.class_counts[1] += 1;
    }
    return ds;
}

}  // namespace cpattn
