#include "kinemod/data_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>

#include "kinemod/common.hpp"

namespace kinemod {

namespace {

class LineReader {
 public:
  LineReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  // Next non-blank line split on whitespace.
  std::vector<std::string_view> next(const char* expecting) {
    while (std::getline(in_, line_)) {
      ++lineno_;
      if (!line_.empty() && line_.back() == '\r') line_.pop_back();
      auto fields = split(line_);
      if (!fields.empty()) return fields;
    }
    throw ParseError(source_, lineno_ + 1, fmt::format("unexpected end of file, expected {}", expecting));
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source_, lineno_, what); }

  long long integer(std::string_view field, const char* what) const {
    long long value = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size())
      fail(fmt::format("{} is not an integer: '{}'", what, field));
    return value;
  }

  double real(std::string_view field, const char* what) const {
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size())
      fail(fmt::format("{} is not a number: '{}'", what, field));
    if (!std::isfinite(value)) fail(fmt::format("{} is not finite: '{}'", what, field));
    return value;
  }

  void expect_end() {
    while (std::getline(in_, line_)) {
      ++lineno_;
      if (!split(line_).empty()) fail("trailing content after the last frame");
    }
  }

 private:
  std::vector<std::string_view> split(const std::string& s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
      while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
      std::size_t j = i;
      while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      if (j > i) out.emplace_back(s.data() + i, j - i);
      i = j;
    }
    return out;
  }

  std::istream& in_;
  std::string source_;
  std::string line_;
  std::size_t lineno_ = 0;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int parse_int_cell(const std::string& cell, const std::string& source, std::size_t line, const char* what) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (ec != std::errc() || ptr != cell.data() + cell.size())
    throw ParseError(source, line, fmt::format("{} is not an integer: '{}'", what, cell));
  return value;
}

constexpr const char* kManifestMagic = "#kinemod-manifest 1";
constexpr const char* kManifestHeader = "id,path,label,subject,camera";

}  // namespace

std::vector<SkeletonSequence> Dataset::sequences() const {
  std::vector<SkeletonSequence> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.seq);
  return out;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.num_classes = num_classes;
  out.samples.reserve(indices.size());
  for (auto i : indices) out.samples.push_back(samples.at(i));
  return out;
}

Dataset resized(const Dataset& data, std::size_t target_frames) {
  Dataset out = data;
  const auto n = static_cast<std::ptrdiff_t>(out.samples.size());
  ParallelErrors errors;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    errors.run([&] {
      auto& s = out.samples[i].seq;
      s = resize_sequence(s, target_frames);
    });
  }
  errors.rethrow();
  return out;
}

SkeletonSequence parse_skeleton(std::istream& in, std::size_t expected_joints, const std::string& source,
                                std::size_t bodies) {
  if (bodies == 0) throw std::invalid_argument("parse_skeleton: bodies must be positive");
  LineReader reader(in, source);
  auto header = reader.next("frame count");
  if (header.size() != 1) reader.fail("expected a single frame count");
  const long long frames = reader.integer(header[0], "frame count");
  if (frames < 1) reader.fail("frame count must be positive");

  Tensor4 data(bodies, kCoords, static_cast<std::size_t>(frames), expected_joints);
  for (long long t = 0; t < frames; ++t) {
    auto bc = reader.next("body count");
    if (bc.size() != 1) reader.fail("expected a single body count");
    const long long body_count = reader.integer(bc[0], "body count");
    if (body_count < 0) reader.fail("body count must be non-negative");
    for (long long m = 0; m < body_count; ++m) {
      reader.next("body info line");
      auto jc = reader.next("joint count");
      if (jc.size() != 1) reader.fail("expected a single joint count");
      const long long joints = reader.integer(jc[0], "joint count");
      if (joints != static_cast<long long>(expected_joints))
        reader.fail(fmt::format("joint count {} does not match topology ({})", joints, expected_joints));
      for (std::size_t v = 0; v < expected_joints; ++v) {
        auto f = reader.next("joint line");
        if (f.size() < kCoords) reader.fail("joint line needs at least 3 fields");
        for (std::size_t c = 0; c < kCoords; ++c) {
          const double value = reader.real(f[c], "joint coordinate");
          if (static_cast<std::size_t>(m) < bodies) data(m, c, t, v) = value;
        }
      }
    }
  }
  reader.expect_end();
  return make_sequence(std::move(data), static_cast<std::size_t>(frames));
}

SkeletonSequence parse_skeleton_file(const std::filesystem::path& path, std::size_t expected_joints,
                                     std::size_t bodies) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open skeleton file " + path.string());
  return parse_skeleton(in, expected_joints, path.string(), bodies);
}

void write_skeleton(std::ostream& out, const SkeletonSequence& seq) {
  const auto& d = seq.data;
  out << d.frames() << '\n';
  for (std::size_t t = 0; t < d.frames(); ++t) {
    // Trailing all-zero bodies are padding and are not written.
    std::size_t present = d.bodies();
    while (present > 0) {
      bool zero = true;
      for (std::size_t c = 0; c < kCoords && zero; ++c)
        for (std::size_t v = 0; v < d.joints() && zero; ++v) zero = d(present - 1, c, t, v) == 0.0;
      if (!zero) break;
      --present;
    }
    out << present << '\n';
    for (std::size_t m = 0; m < present; ++m) {
      out << m << " 0 0 0 0 0 0 0 0 2\n" << d.joints() << '\n';
      for (std::size_t v = 0; v < d.joints(); ++v) {
        out << fmt::format("{:.17g} {:.17g} {:.17g} 0 0 0 0 0 0 0 0 2\n", d(m, 0, t, v), d(m, 1, t, v),
                           d(m, 2, t, v));
      }
    }
  }
}

void write_skeleton_file(const std::filesystem::path& path, const SkeletonSequence& seq) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_skeleton(out, seq);
}

DatasetManifest parse_manifest(std::istream& in, const std::string& source) {
  DatasetManifest manifest;
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() -> bool {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  };
  if (!next() || line != kManifestMagic)
    throw ParseError(source, lineno, fmt::format("expected '{}'", kManifestMagic));
  if (!next() || line != kManifestHeader)
    throw ParseError(source, lineno, fmt::format("expected header '{}'", kManifestHeader));
  std::unordered_set<std::string> ids;
  while (next()) {
    auto cells = split_csv(line);
    if (cells.size() != 5) throw ParseError(source, lineno, "expected 5 comma-separated fields");
    ManifestRecord r;
    r.id = cells[0];
    r.path = cells[1];
    if (r.id.empty()) throw ParseError(source, lineno, "empty id");
    r.label = cells[2].empty() ? -1 : parse_int_cell(cells[2], source, lineno, "label");
    r.subject = cells[3].empty() ? 0 : parse_int_cell(cells[3], source, lineno, "subject");
    r.camera = cells[4].empty() ? 0 : parse_int_cell(cells[4], source, lineno, "camera");
    if (!ids.insert(r.id).second) throw ParseError(source, lineno, "duplicate id '" + r.id + "'");
    manifest.records.push_back(std::move(r));
  }
  return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  return parse_manifest(in, path.string());
}

void write_manifest(std::ostream& out, const DatasetManifest& manifest) {
  out << kManifestMagic << '\n' << kManifestHeader << '\n';
  for (const auto& r : manifest.records) {
    if (r.id.find(',') != std::string::npos || r.path.find(',') != std::string::npos)
      throw DataError("manifest fields may not contain commas: " + r.id);
    out << r.id << ',' << r.path << ',';
    if (r.label >= 0) out << r.label;
    out << ',';
    if (r.subject > 0) out << r.subject;
    out << ',';
    if (r.camera > 0) out << r.camera;
    out << '\n';
  }
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_manifest(out, manifest);
}

Dataset load_dataset(const std::filesystem::path& manifest_path, std::size_t expected_joints,
                     std::vector<std::string>* errors, std::size_t bodies) {
  const auto manifest = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  const auto n = manifest.records.size();
  std::vector<std::optional<SkeletonSequence>> parsed(n);
  std::vector<std::string> failures(n);

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    const auto& r = manifest.records[i];
    try {
      if (r.path.empty()) throw DataError("record '" + r.id + "' has no path");
      parsed[i] = parse_skeleton_file(base / r.path, expected_joints, bodies);
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  }

  Dataset data;
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    if (!parsed[i]) {
      if (!errors) throw DataError(failures[i]);
      errors->push_back(failures[i]);
      continue;
    }
    const auto& r = manifest.records[i];
    Sample s{r.id, std::move(*parsed[i]), r.label, r.subject, r.camera};
    if (r.label >= 0) s.seq.label = r.label;
    max_label = std::max(max_label, r.label);
    data.samples.push_back(std::move(s));
  }
  data.num_classes = static_cast<std::size_t>(max_label + 1);
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  DatasetManifest manifest;
  for (const auto& s : data.samples) {
    const std::string file = s.id + ".skeleton";
    write_skeleton_file(dir / file, s.seq);
    manifest.records.push_back({s.id, file, s.label, s.subject, s.camera});
  }
  write_manifest(dir / "manifest.csv", manifest);
}

std::optional<SplitRule> parse_split_rule(const std::string& name) {
  if (name == "cross-subject" || name == "xsub") return SplitRule::CrossSubject;
  if (name == "cross-view" || name == "xview") return SplitRule::CrossView;
  if (name == "random-fraction" || name == "random") return SplitRule::RandomFraction;
  return std::nullopt;
}

namespace {

struct SplitKey {
  int subject;
  int camera;
};

Split split_keys(const std::vector<SplitKey>& keys, const SplitOptions& options) {
  Split split;
  const std::size_t n = keys.size();
  switch (options.rule) {
    case SplitRule::CrossSubject:
    case SplitRule::CrossView: {
      const bool by_subject = options.rule == SplitRule::CrossSubject;
      std::vector<int> train_ids = by_subject ? options.train_subjects : options.train_cameras;
      if (train_ids.empty()) {
        // NTU RGB+D 60 training performers / cameras.
        train_ids = by_subject ? std::vector<int>{1, 2, 4, 5, 8, 9, 13, 14, 15, 16, 17, 18, 19, 25, 27, 28, 31, 34, 35, 38}
                               : std::vector<int>{2, 3};
      }
      const std::set<int> train_set(train_ids.begin(), train_ids.end());
      for (std::size_t i = 0; i < n; ++i) {
        const int key = by_subject ? keys[i].subject : keys[i].camera;
        if (key <= 0)
          throw DataError(fmt::format("sample {} has no {} id", i, by_subject ? "subject" : "camera"));
        (train_set.count(key) ? split.train : split.eval).push_back(i);
      }
      break;
    }
    case SplitRule::RandomFraction: {
      if (!(options.train_fraction >= 0.0 && options.train_fraction <= 1.0))
        throw ConfigError("train_fraction must lie in [0, 1]");
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 rng(mix_seed(options.seed, 0x5b17));
      std::shuffle(order.begin(), order.end(), rng);
      const auto n_train = static_cast<std::size_t>(std::llround(options.train_fraction * static_cast<double>(n)));
      split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
      split.eval.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
      std::sort(split.train.begin(), split.train.end());
      std::sort(split.eval.begin(), split.eval.end());
      break;
    }
  }
  return split;
}

}  // namespace

Split split_dataset(const DatasetManifest& manifest, const SplitOptions& options) {
  std::vector<SplitKey> keys;
  for (const auto& r : manifest.records) keys.push_back({r.subject, r.camera});
  return split_keys(keys, options);
}

Split split_dataset(const Dataset& data, const SplitOptions& options) {
  std::vector<SplitKey> keys;
  for (const auto& s : data.samples) keys.push_back({s.subject, s.camera});
  return split_keys(keys, options);
}

}  // namespace kinemod
