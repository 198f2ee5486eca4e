#include "kinemod/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "kinemod/common.hpp"

namespace kinemod {

namespace {

constexpr const char* kTopologyMagic = "kinemod-topology";
constexpr int kTopologyVersion = 1;

bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

std::vector<std::vector<std::size_t>> children_of(std::size_t joint_count,
                                                  const std::vector<BonePair>& bones) {
  std::vector<std::vector<std::size_t>> children(joint_count);
  for (const auto& b : bones) children[b.parent].push_back(b.child);
  return children;
}

}  // namespace

SkeletonSequence make_sequence(Tensor4 data, std::size_t original_frames,
                               std::optional<int> label) {
  if (data.channels() != kCoords) throw DataError("skeleton data must have 3 coordinate channels");
  if (data.frames() == 0 || data.joints() == 0 || data.bodies() == 0)
    throw DataError("skeleton data must have positive frame, joint and body counts");
  if (data.bodies() > kMaxBodies) throw DataError("at most two bodies are supported");
  if (original_frames < 2) throw DataError("original frame count must be at least 2");
  if (!all_finite(data.values())) throw DataError("skeleton data contains non-finite values");
  return SkeletonSequence{std::move(data), original_frames, label};
}

void SkeletonTopology::validate() const {
  if (joint_count == 0) throw DataError("topology has no joints");
  if (root >= joint_count) throw DataError("topology root out of range");
  if (bones.size() + 1 != joint_count)
    throw DataError("topology needs joint_count - 1 bones, got " + std::to_string(bones.size()));
  std::vector<int> parent(joint_count, -1);
  for (const auto& b : bones) {
    if (b.child >= joint_count || b.parent >= joint_count)
      throw DataError("bone references joint out of range");
    if (b.child == root) throw DataError("root joint cannot be a bone child");
    if (parent[b.child] != -1) throw DataError("joint " + std::to_string(b.child) + " has two parents");
    parent[b.child] = static_cast<int>(b.parent);
  }
  // Every joint must reach the root without cycles.
  for (std::size_t v = 0; v < joint_count; ++v) {
    std::size_t cur = v;
    for (std::size_t steps = 0; cur != root; ++steps) {
      if (steps > joint_count || parent[cur] < 0)
        throw DataError("joint " + std::to_string(v) + " is not connected to the root");
      cur = static_cast<std::size_t>(parent[cur]);
    }
  }
  if (hinges.size() != joint_count) throw DataError("topology needs one hinge per joint");
  for (const auto& h : hinges) {
    if (h.bone_i >= joint_count || h.bone_j >= joint_count)
      throw DataError("hinge references bone out of range");
    if (h.bone_i == h.bone_j) throw DataError("hinge bones must be distinct");
  }
}

std::vector<HingeDef> derive_hinges(std::size_t joint_count, std::size_t root,
                                    const std::vector<BonePair>& bones) {
  std::vector<std::size_t> parent(joint_count, root);
  for (const auto& b : bones) parent[b.child] = b.parent;
  const auto children = children_of(joint_count, bones);

  std::vector<HingeDef> hinges(joint_count);
  for (std::size_t v = 0; v < joint_count; ++v) {
    if (v == root) {
      const auto& c = children[v];
      if (c.size() >= 2) {
        hinges[v] = {c[0], c[1]};
      } else if (c.size() == 1 && !children[c[0]].empty()) {
        hinges[v] = {c[0], children[c[0]][0]};
      } else {
        throw DataError("root needs two child bones to define its hinge");
      }
    } else if (!children[v].empty()) {
      hinges[v] = {v, children[v][0]};
    } else {
      hinges[v] = {parent[v], v};
    }
  }
  return hinges;
}

SkeletonTopology default_topology() {
  // (child, parent), zero-based NTU joint indices.
  static const std::vector<BonePair> kBones = {
      {0, 1},   {1, 20},  {2, 20},  {3, 2},   {4, 20},  {5, 4},   {6, 5},   {7, 6},
      {8, 20},  {9, 8},   {10, 9},  {11, 10}, {12, 0},  {13, 12}, {14, 13}, {15, 14},
      {16, 0},  {17, 16}, {18, 17}, {19, 18}, {21, 22}, {22, 7},  {23, 24}, {24, 11}};
  SkeletonTopology topo{25, 20, kBones, {}};
  topo.hinges = derive_hinges(topo.joint_count, topo.root, topo.bones);
  topo.validate();
  return topo;
}

SkeletonTopology toy_topology() {
  SkeletonTopology topo{5, 0, {{1, 0}, {2, 0}, {3, 1}, {4, 2}}, {}};
  topo.hinges = derive_hinges(topo.joint_count, topo.root, topo.bones);
  topo.validate();
  return topo;
}

std::string format_topology(const SkeletonTopology& topo) {
  std::ostringstream os;
  os << kTopologyMagic << ' ' << kTopologyVersion << '\n';
  os << "# joints " << topo.joint_count << ", root " << topo.root << '\n';
  os << "BONES\n";
  for (const auto& b : topo.bones) os << b.child << ' ' << b.parent << '\n';
  os << "HINGES\n";
  for (std::size_t v = 0; v < topo.hinges.size(); ++v)
    os << v << ' ' << topo.hinges[v].bone_i << ' ' << topo.hinges[v].bone_j << '\n';
  return os.str();
}

SkeletonTopology parse_topology(const std::string& text, const std::string& source) {
  enum class Section { None, Bones, Hinges } section = Section::None;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool have_magic = false;
  std::vector<BonePair> bones;
  std::vector<std::pair<std::size_t, HingeDef>> hinge_rows;

  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    if (!have_magic) {
      int version = 0;
      if (first != kTopologyMagic || !(ls >> version))
        throw ParseError(source, lineno, "missing 'kinemod-topology <version>' header");
      if (version != kTopologyVersion)
        throw ParseError(source, lineno, "unsupported topology version " + std::to_string(version));
      have_magic = true;
      continue;
    }
    if (first == "BONES") {
      section = Section::Bones;
      continue;
    }
    if (first == "HINGES") {
      section = Section::Hinges;
      continue;
    }
    std::istringstream row(line);
    if (section == Section::Bones) {
      long long child = -1, parent = -1;
      std::string extra;
      if (!(row >> child >> parent) || (row >> extra) || child < 0 || parent < 0)
        throw ParseError(source, lineno, "expected 'child parent'");
      bones.push_back({static_cast<std::size_t>(child), static_cast<std::size_t>(parent)});
    } else if (section == Section::Hinges) {
      long long joint = -1, bi = -1, bj = -1;
      std::string extra;
      if (!(row >> joint >> bi >> bj) || (row >> extra) || joint < 0 || bi < 0 || bj < 0)
        throw ParseError(source, lineno, "expected 'joint boneI boneJ'");
      hinge_rows.push_back({static_cast<std::size_t>(joint),
                            {static_cast<std::size_t>(bi), static_cast<std::size_t>(bj)}});
    } else {
      throw ParseError(source, lineno, "record outside BONES/HINGES section");
    }
  }
  if (!have_magic) throw ParseError(source, lineno, "empty topology file");

  SkeletonTopology topo;
  topo.joint_count = bones.size() + 1;
  std::vector<bool> is_child(topo.joint_count, false);
  for (const auto& b : bones) {
    if (b.child >= topo.joint_count) throw DataError(source + ": bone child out of range");
    is_child[b.child] = true;
  }
  topo.root = static_cast<std::size_t>(std::find(is_child.begin(), is_child.end(), false) -
                                       is_child.begin());
  topo.bones = std::move(bones);
  if (hinge_rows.empty()) {
    topo.hinges = derive_hinges(topo.joint_count, topo.root, topo.bones);
  } else {
    topo.hinges.assign(topo.joint_count, HingeDef{0, 0});
    std::vector<bool> seen(topo.joint_count, false);
    for (const auto& [joint, h] : hinge_rows) {
      if (joint >= topo.joint_count || seen[joint])
        throw DataError(source + ": hinge joint " + std::to_string(joint) + " invalid or repeated");
      seen[joint] = true;
      topo.hinges[joint] = h;
    }
    if (hinge_rows.size() != topo.joint_count)
      throw DataError(source + ": HINGES must list every joint");
  }
  topo.validate();
  return topo;
}

SkeletonTopology load_topology(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open topology file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_topology(ss.str(), path.string());
}

void save_topology(const SkeletonTopology& topo, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write topology file " + path.string());
  out << format_topology(topo);
}

SkeletonSequence resize_sequence(const SkeletonSequence& seq, std::size_t target_frames) {
  const std::size_t t_in = seq.frames();
  if (t_in < 2) throw DataError("resize needs at least 2 input frames");
  if (target_frames < 2) throw DataError("resize target must be at least 2 frames");
  if (!all_finite(seq.data.values())) throw DataError("resize input contains non-finite values");

  Tensor4 out(seq.bodies(), seq.data.channels(), target_frames, seq.joints());
  for (std::size_t t = 0; t < target_frames; ++t) {
    // Integer numerator keeps both endpoints exact.
    const double pos = static_cast<double>(t * (t_in - 1)) / static_cast<double>(target_frames - 1);
    const std::size_t lo = std::min(static_cast<std::size_t>(pos), t_in - 1);
    const double frac = pos - static_cast<double>(lo);
    for (std::size_t m = 0; m < seq.bodies(); ++m)
      for (std::size_t c = 0; c < seq.data.channels(); ++c)
        for (std::size_t v = 0; v < seq.joints(); ++v) {
          const double a = seq.data(m, c, lo, v);
          if (frac == 0.0) {
            out(m, c, t, v) = a;
            continue;
          }
          const double b = seq.data(m, c, lo + 1, v);
          const double x = a + frac * (b - a);
          out(m, c, t, v) = std::clamp(x, std::min(a, b), std::max(a, b));
        }
  }
  return SkeletonSequence{std::move(out), seq.original_frames, seq.label};
}

TimeScale time_scale(const SkeletonSequence& seq) {
  if (seq.original_frames == 0) throw DataError("sequence has no recorded original frame count");
  return TimeScale{static_cast<double>(seq.original_frames) / static_cast<double>(kResampledFrames)};
}

}  // namespace kinemod
