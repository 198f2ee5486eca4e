#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kinemod/skeleton.hpp"

namespace kinemod {

struct Sample {
  std::string id;
  SkeletonSequence seq;
  int label = -1;
  int subject = 0;
  int camera = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t num_classes = 0;

  std::vector<SkeletonSequence> sequences() const;
  std::vector<int> labels() const;
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

// Resizes every sample to target_frames, keeping original_frames.
Dataset resized(const Dataset& data, std::size_t target_frames = kResampledFrames);

// ---- NTU RGB+D skeleton text layout ----
// frame count; per frame: body count; per body: info line, joint count, one line per joint
// whose first three fields are x y z. The result always has `bodies` bodies: extra bodies in a
// frame are skipped, missing ones stay zero.
SkeletonSequence parse_skeleton(std::istream& in, std::size_t expected_joints,
                                const std::string& source = "<stream>",
                                std::size_t bodies = kMaxBodies);
SkeletonSequence parse_skeleton_file(const std::filesystem::path& path, std::size_t expected_joints,
                                     std::size_t bodies = kMaxBodies);
void write_skeleton(std::ostream& out, const SkeletonSequence& seq);
void write_skeleton_file(const std::filesystem::path& path, const SkeletonSequence& seq);

// ---- manifests ----

struct ManifestRecord {
  std::string id;
  std::string path;  // relative to the manifest's directory
  int label = -1;
  int subject = 0;
  int camera = 0;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
};

// "#kinemod-manifest 1" then the CSV header id,path,label,subject,camera.
DatasetManifest read_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(std::istream& in, const std::string& source = "<stream>");
void write_manifest(std::ostream& out, const DatasetManifest& manifest);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

// Loads every skeleton listed in a manifest. Per-file failures are collected into errors
// rather than thrown when errors is non-null.
Dataset load_dataset(const std::filesystem::path& manifest_path, std::size_t expected_joints,
                     std::vector<std::string>* errors = nullptr, std::size_t bodies = kMaxBodies);
// Writes one skeleton file per sample plus manifest.csv into dir.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);

// ---- splits ----

enum class SplitRule { CrossSubject, CrossView, RandomFraction };
std::optional<SplitRule> parse_split_rule(const std::string& name);

struct SplitOptions {
  SplitRule rule = SplitRule::RandomFraction;
  std::vector<int> train_subjects;  // cross-subject
  std::vector<int> train_cameras;   // cross-view
  double train_fraction = 0.8;      // random-fraction
  std::uint64_t seed = 7;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};

Split split_dataset(const DatasetManifest& manifest, const SplitOptions& options);
Split split_dataset(const Dataset& data, const SplitOptions& options);

// ---- synthetic actions ----

struct ClassProgram {
  double frequency = 1.0;   // oscillation cycles per 100 original frames
  double amplitude = 0.5;   // joint rotation amplitude, radians
  std::vector<double> limb_phase = {0.0, 0.0, 0.0, 0.0};  // left arm, right arm, left leg, right leg
  double drift = 0.0;       // root drift, meters per 100 original frames
  double posture = 0.0;     // offset added to every driven joint's rest bend, radians
};

struct SyntheticSpec {
  std::size_t classes = 3;
  std::size_t samples = 60;
  std::vector<std::size_t> frame_choices = {40, 50, 100};
  std::vector<ClassProgram> programs;  // empty: default_programs(classes)
  double noise = 0.001;        // per-coordinate Gaussian noise, meters
  double phase_jitter = 6.283185307179586;  // per-sample global phase ~ U(0, phase_jitter)
  double scale_jitter = 0.2;   // body scale ~ U(1 - j, 1 + j)
  double yaw_jitter = 0.5;     // root yaw ~ U(-j, j), radians
  double offset_jitter = 0.0;  // root translation ~ U(-j, j) per axis, meters
  double amplitude_jitter = 0.25;  // per-sample amplitude factor ~ U(1 - j, 1 + j)
  std::size_t subjects = 10;
  std::size_t cameras = 3;
  double posture_step = 0.15;  // default_programs: posture of class k is k * posture_step
  std::uint64_t seed = 7;

  void validate() const;  // throws ConfigError
};

std::vector<ClassProgram> default_programs(std::size_t classes, double posture_step = 0.15);

// Labels cycle through the classes; frame counts cycle through frame_choices independently of
// the label so every class sees every time scale.
Dataset generate_synthetic(const SyntheticSpec& spec, const SkeletonTopology& topo);

// Ground-truth generative parameters of each sample (frequency, amplitude, drift, limb phases).
std::vector<std::vector<double>> synthetic_oracle_features(const SyntheticSpec& spec);

}  // namespace kinemod
