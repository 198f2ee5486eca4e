#include "kinemod/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "kinemod/common.hpp"

namespace kinemod {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(text);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string text = trim(raw);
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw ConfigError(fmt::format("{}: cannot parse '{}'", key, raw));
  return value;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string t = trim(raw);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(fmt::format("{}: expected a boolean, got '{}'", key, raw));
}

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += fmt::format("{}", xs[i]);
  }
  return out;
}

template <class T>
std::vector<T> parse_number_list(const std::string& key, const std::string& raw) {
  std::vector<T> out;
  for (const auto& item : split_list(raw)) out.push_back(parse_number<T>(key, item));
  return out;
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define KM_SIZE(NAME, MEMBER)                                                                  \
  Field {                                                                                      \
    NAME, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_number<std::size_t>(NAME, v); }, \
        [](const RunConfig& c) { return std::to_string(c.MEMBER); }                            \
  }
#define KM_DOUBLE(NAME, MEMBER)                                                                \
  Field {                                                                                      \
    NAME, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_number<double>(NAME, v); }, \
        [](const RunConfig& c) { return fmt_double(c.MEMBER); }                                \
  }
#define KM_BOOL(NAME, MEMBER)                                                                  \
  Field {                                                                                      \
    NAME, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_bool(NAME, v); },          \
        [](const RunConfig& c) { return std::string(c.MEMBER ? "true" : "false"); }            \
  }
#define KM_STRING(NAME, MEMBER)                                                                \
  Field {                                                                                      \
    NAME, [](RunConfig& c, const std::string& v) { c.MEMBER = trim(v); },                      \
        [](const RunConfig& c) { return c.MEMBER; }                                            \
  }
#define KM_MODALITIES(NAME, MEMBER)                                                            \
  Field {                                                                                      \
    NAME, [](RunConfig& c, const std::string& v) { c.MEMBER = parse_modality_list(v); },       \
        [](const RunConfig& c) { return format_modality_list(c.MEMBER); }                      \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"run.seed", [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("run.seed", v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
      Field{"run.workers", [](RunConfig& c, const std::string& v) { c.workers = parse_number<int>("run.workers", v); },
            [](const RunConfig& c) { return std::to_string(c.workers); }},

      KM_STRING("paths.dataset", paths.dataset),
      KM_STRING("paths.topology", paths.topology),
      KM_STRING("paths.checkpoint", paths.checkpoint),
      KM_STRING("paths.student", paths.student),
      KM_STRING("paths.out", paths.out),

      Field{"data.split",
            [](RunConfig& c, const std::string& v) {
              auto rule = parse_split_rule(trim(v));
              if (!rule) throw ConfigError("data.split: unknown rule '" + v + "'");
              c.data.split.rule = *rule;
            },
            [](const RunConfig& c) {
              switch (c.data.split.rule) {
                case SplitRule::CrossSubject: return std::string("cross-subject");
                case SplitRule::CrossView: return std::string("cross-view");
                case SplitRule::RandomFraction: break;
              }
              return std::string("random-fraction");
            }},
      KM_DOUBLE("data.train_fraction", data.split.train_fraction),
      Field{"data.train_subjects",
            [](RunConfig& c, const std::string& v) { c.data.split.train_subjects = parse_number_list<int>("data.train_subjects", v); },
            [](const RunConfig& c) { return join(c.data.split.train_subjects); }},
      Field{"data.train_cameras",
            [](RunConfig& c, const std::string& v) { c.data.split.train_cameras = parse_number_list<int>("data.train_cameras", v); },
            [](const RunConfig& c) { return join(c.data.split.train_cameras); }},
      KM_SIZE("data.bodies", data.bodies),

      KM_SIZE("synthetic.classes", synthetic.classes),
      KM_SIZE("synthetic.samples", synthetic.samples),
      Field{"synthetic.frames",
            [](RunConfig& c, const std::string& v) { c.synthetic.frame_choices = parse_number_list<std::size_t>("synthetic.frames", v); },
            [](const RunConfig& c) { return join(c.synthetic.frame_choices); }},
      KM_DOUBLE("synthetic.noise", synthetic.noise),
      KM_DOUBLE("synthetic.phase_jitter", synthetic.phase_jitter),
      KM_DOUBLE("synthetic.scale_jitter", synthetic.scale_jitter),
      KM_DOUBLE("synthetic.yaw_jitter", synthetic.yaw_jitter),
      KM_DOUBLE("synthetic.offset_jitter", synthetic.offset_jitter),
      KM_DOUBLE("synthetic.amplitude_jitter", synthetic.amplitude_jitter),
      KM_DOUBLE("synthetic.posture_step", synthetic.posture_step),
      KM_SIZE("synthetic.subjects", synthetic.subjects),
      KM_SIZE("synthetic.cameras", synthetic.cameras),

      KM_DOUBLE("pretrain.tau", pretrain.tau),
      KM_SIZE("pretrain.bank", pretrain.bank_capacity),
      KM_SIZE("pretrain.batch", pretrain.batch_size),
      KM_SIZE("pretrain.stage1_epochs", pretrain.stage1_epochs),
      KM_SIZE("pretrain.stage2_epochs", pretrain.stage2_epochs),
      KM_DOUBLE("pretrain.lr", pretrain.lr.base),
      KM_DOUBLE("pretrain.lr_decay", pretrain.lr.decay),
      KM_SIZE("pretrain.lr_step_epoch", pretrain.lr.step_epoch),
      KM_DOUBLE("pretrain.key_momentum", pretrain.key_momentum),
      KM_DOUBLE("pretrain.sgd_momentum", pretrain.sgd_momentum),
      KM_DOUBLE("pretrain.weight_decay", pretrain.weight_decay),
      KM_MODALITIES("pretrain.modalities", pretrain.modalities),
      KM_MODALITIES("pretrain.freeze", pretrain.freeze_high_perf),
      KM_BOOL("pretrain.ekem", pretrain.use_ekem),
      KM_BOOL("pretrain.ikem", pretrain.use_ikem),
      KM_SIZE("pretrain.ekem_topk", pretrain.ekem_topk),
      KM_DOUBLE("pretrain.ekem_weight", pretrain.ekem_weight),
      KM_DOUBLE("pretrain.ikem_weight", pretrain.ikem_weight),
      KM_DOUBLE("pretrain.shear", pretrain.augment.shear),
      KM_DOUBLE("pretrain.crop_min", pretrain.augment.crop_min),
      KM_SIZE("pretrain.hidden", pretrain.hidden),
      KM_SIZE("pretrain.feature", pretrain.feature),
      KM_SIZE("pretrain.embed_dim", pretrain.embed_dim),
      KM_BOOL("pretrain.record_wall_time", pretrain.record_wall_time),

      KM_DOUBLE("distill.tau", distill.loss.tau),
      KM_BOOL("distill.exclude_j_from_denominator", distill.loss.exclude_j_from_denominator),
      KM_BOOL("distill.exclude_own_id", distill.loss.exclude_own_id),
      KM_SIZE("distill.epochs", distill.epochs),
      KM_SIZE("distill.batch", distill.batch_size),
      KM_DOUBLE("distill.lr", distill.lr.base),
      KM_DOUBLE("distill.lr_decay", distill.lr.decay),
      KM_SIZE("distill.lr_step_epoch", distill.lr.step_epoch),
      KM_DOUBLE("distill.sgd_momentum", distill.sgd_momentum),
      KM_DOUBLE("distill.weight_decay", distill.weight_decay),
      KM_MODALITIES("distill.modalities", distill.student_modalities),
      KM_DOUBLE("distill.shear", distill.augment.shear),
      KM_DOUBLE("distill.crop_min", distill.augment.crop_min),
      KM_SIZE("distill.hidden", distill.hidden),
      KM_SIZE("distill.feature", distill.feature),

      KM_SIZE("eval.epochs", eval.probe.epochs),
      KM_SIZE("eval.batch", eval.probe.batch_size),
      KM_DOUBLE("eval.lr", eval.probe.lr.base),
      KM_DOUBLE("eval.lr_decay", eval.probe.lr.decay),
      KM_SIZE("eval.lr_step_epoch", eval.probe.lr.step_epoch),
      KM_DOUBLE("eval.sgd_momentum", eval.probe.sgd_momentum),
      KM_DOUBLE("eval.weight_decay", eval.probe.weight_decay),
      KM_BOOL("eval.fuse", eval.fuse),
      KM_SIZE("eval.knn_k", eval.knn_k),
  };
  return table;
}

#undef KM_SIZE
#undef KM_DOUBLE
#undef KM_BOOL
#undef KM_STRING
#undef KM_MODALITIES

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.key) return f;
  throw ConfigError("unknown configuration key '" + key + "'");
}

}  // namespace

std::vector<ModalityKind> parse_modality_list(const std::string& text) {
  std::vector<ModalityKind> out;
  for (const auto& name : split_list(text)) {
    auto kind = parse_modality(name);
    if (!kind) throw ConfigError("unknown modality '" + name + "'");
    out.push_back(*kind);
  }
  return out;
}

std::string format_modality_list(const std::vector<ModalityKind>& kinds) {
  std::string out;
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (i) out += ',';
    out += modality_name(kinds[i]);
  }
  return out;
}

void RunConfig::propagate_seed() {
  synthetic.seed = seed;
  pretrain.seed = seed;
  distill.seed = seed;
  eval.probe.seed = seed;
  data.split.seed = seed;
}

void RunConfig::validate() const {
  if (workers < 0) throw ConfigError("run.workers must be non-negative");
  if (data.bodies == 0 || data.bodies > kMaxBodies) throw ConfigError("data.bodies must be 1 or 2");
  if (!(data.split.train_fraction > 0.0 && data.split.train_fraction <= 1.0))
    throw ConfigError("data.train_fraction must lie in (0, 1]");
  if (paths.dataset.empty()) synthetic.validate();
  pretrain.validate();
  distill.validate();
  if (eval.probe.epochs == 0 || eval.probe.batch_size == 0) throw ConfigError("eval epochs/batch must be positive");
  if (eval.knn_k == 0) throw ConfigError("eval.knn_k must be positive");
  for (const auto* p : {&paths.dataset, &paths.topology}) {
    if (!p->empty() && !std::filesystem::exists(*p)) throw ConfigError("path does not exist: " + *p);
  }
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& f : fields()) out += fmt::format("{}={}\n", f.key, f.get(*this));
  return out;
}

std::string RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

void RunConfig::set(const std::string& key, const std::string& value) { find_field(key).set(*this, value); }

std::string RunConfig::get(const std::string& key) const { return find_field(key).get(*this); }

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

RunConfig load_run_config(const std::filesystem::path& ini) {
  if (!std::filesystem::exists(ini)) throw ConfigError("config file not found: " + ini.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(ini.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(e.what());
  }
  RunConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("key outside a section: " + section);
    for (const auto& [key, value] : body) config.set(section + "." + key, value.data());
  }
  config.propagate_seed();
  return config;
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override must look like section.key=value: " + o);
    config.set(trim(o.substr(0, eq)), o.substr(eq + 1));
  }
  config.propagate_seed();
}

void save_run_config(const RunConfig& config, const std::filesystem::path& ini) {
  std::ofstream out(ini);
  if (!out) throw ConfigError("cannot write " + ini.string());
  std::string section;
  for (const auto& f : fields()) {
    const std::string key = f.key;
    const auto dot = key.find('.');
    const auto sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out << '\n';
      out << '[' << sec << "]\n";
      section = sec;
    }
    out << key.substr(dot + 1) << " = " << f.get(config) << '\n';
  }
}

}  // namespace kinemod
