#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cpattn/tensor.hpp"

namespace cpattn {

inline constexpr int kLabelNormal = 0;
inline constexpr int kLabelAbnormal = 1;

// One labeled sequence: positions is [T x C x J] in meters, C = 3.
struct MotionSample {
    std::string id;
    int label = kLabelNormal;
    std::vector<std::string> joint_names;
    int spine_index = 0;
    Tensor positions;

    int frames() const { return positions.extent(0); }
    int coords() const { return positions.extent(1); }
    int joints() const { return positions.extent(2); }
};

struct Dataset {
    std::vector<MotionSample> samples;
    std::vector<int> class_counts;  // indexed by label
    int num_classes = 2;

    int size() const { return static_cast<int>(samples.size()); }
};

// Line-oriented sample file:
//   #joints <name_0> ... <name_{J-1}>
//   #spine <index>            (optional; defaults to the joint named "spine")
//   T lines of 3*J numbers, joint-major:  x_0 y_0 z_0 x_1 y_1 z_1 ...
// Numbers are written with 9 significant digits, '.' decimal separator.
MotionSample load_sample(const std::string& path);
void save_sample(const std::string& path, const MotionSample& sample);

// Manifest lines: "<relative_path> <label>", label in {normal, abnormal}.
// Blank lines and '#' comments ignored. Paths resolve against data_dir.
Dataset load_dataset(const std::string& data_dir, const std::string& manifest_path);

// Writes one file per sample plus manifest.txt into dir.
void write_dataset(const std::string& dir, const Dataset& dataset);

MotionSample normalize_spine(const MotionSample& sample);

// Linear interpolation onto target_t uniformly spaced time points;
// endpoints preserved exactly.
MotionSample resample_frames(const MotionSample& sample, int target_t);

struct SyntheticConfig {
    int joints = 16;
    int frames_min = 180;
    int frames_max = 220;
    int normal_count = 8;
    int abnormal_count = 4;
    int discriminative_joint = 9;     // r_hand in the default skeleton
    std::string mode = "amplitude";   // "frequency" or "amplitude"
    double separation = 8.0;          // class multiplier on the discriminative joint
    double base_freq_lo = 2.0;        // cycles per sequence
    double base_freq_hi = 4.0;
    double amplitude = 0.05;          // oscillation amplitude (m)
    int harmonics = 3;
    double offset_jitter = 0.01;      // per-sample skeletal jitter (m)
    double drift_amplitude = 0.05;    // global translation drift (m)
};

// Deterministic for a given seed. All joints follow smooth band-limited
// noise around fixed skeletal offsets; only the discriminative joint's
// oscillation differs between classes (by `separation`, in frequency or
// amplitude). separation = 1 makes the classes identically distributed.
Dataset generate_synthetic(const SyntheticConfig& config, std::uint64_t seed);

std::vector<std::string> default_joint_names(int joints);

// Canonical number formatting for the dataset text formats.
std::string format_double(double v, int significant_digits);

}  // namespace cpattn
