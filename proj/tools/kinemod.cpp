#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/cfg/helpers.h>
#include <spdlog/spdlog.h>

#include "kinemod/common.hpp"
#include "kinemod/config.hpp"
#include "kinemod/contrastive.hpp"
#include "kinemod/distill.hpp"
#include "kinemod/gradcheck.hpp"
#include "kinemod/pipeline.hpp"

namespace fs = std::filesystem;
using namespace kinemod;

namespace {

enum Exit { kOk = 0, kDataError = 1, kUsageError = 2, kNumericError = 3 };

struct GlobalOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
};

RunConfig build_config(const GlobalOptions& g) {
  RunConfig config = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  apply_overrides(config, g.overrides);
  if (g.seed) config.seed = *g.seed;
  if (g.workers) config.workers = *g.workers;
  if (!g.out.empty()) config.paths.out = g.out;
  config.propagate_seed();
  config.validate();
  set_worker_count(config.workers);
  return config;
}

fs::path out_dir(const RunConfig& config) {
  fs::path dir = config.paths.out;
  fs::create_directories(dir);
  return dir;
}

void write_run_record(const RunConfig& config, const fs::path& dir) {
  save_run_config(config, dir / "run.ini");
  std::ofstream(dir / "config_hash.txt") << config.hash() << '\n';
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

fs::path checkpoint_path(const RunConfig& config, const std::string& configured, const char* fallback) {
  return configured.empty() ? fs::path(config.paths.out) / fallback : fs::path(configured);
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::exists(path)) throw ConfigError(fmt::format("{} not found: {}", what, path.string()));
}

int cmd_generate(const RunConfig& config) {
  const auto topo = resolve_topology(config);
  const auto data = generate_synthetic(config.synthetic, topo);
  const auto dir = out_dir(config) / "data";
  save_dataset(data, dir);
  write_run_record(config, out_dir(config));
  spdlog::info("wrote {} synthetic samples to {}", data.samples.size(), dir.string());
  return kOk;
}

int cmd_derive(const RunConfig& config) {
  const auto topo = resolve_topology(config);
  std::vector<std::string> errors;
  const Dataset data = resolve_dataset(config, topo, &errors);
  const auto dir = out_dir(config) / "modalities";
  fs::create_directories(dir);
  const auto seqs = data.sequences();
  const auto sets = derive_batch(seqs, topo);

  struct Stats {
    std::size_t count = 0;
    double sum = 0.0, sum_sq = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
  };
  std::vector<Stats> stats(kAllModalities.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    write_modality_blob(dir / (data.samples[i].id + ".kmod"), sets[i]);
    for (auto kind : kAllModalities) {
      auto& s = stats[modality_index(kind)];
      for (double v : sets[i][kind].data.values()) {
        ++s.count;
        s.sum += v;
        s.sum_sq += v * v;
        s.lo = std::min(s.lo, v);
        s.hi = std::max(s.hi, v);
      }
    }
  }
  auto summary = open_out(dir / "summary.csv");
  summary << "modality,count,mean,std,min,max\n";
  for (auto kind : kAllModalities) {
    const auto& s = stats[modality_index(kind)];
    const double n = static_cast<double>(std::max<std::size_t>(s.count, 1));
    const double mean = s.sum / n;
    const double var = std::max(0.0, s.sum_sq / n - mean * mean);
    summary << fmt::format("{},{},{:.10g},{:.10g},{:.10g},{:.10g}\n", modality_name(kind), s.count, mean,
                           std::sqrt(var), s.count ? s.lo : 0.0, s.count ? s.hi : 0.0);
  }
  spdlog::info("derived {} samples into {}", sets.size(), dir.string());
  if (!errors.empty()) {
    for (const auto& e : errors) std::cerr << "error: " << e << '\n';
    std::cerr << errors.size() << " file(s) failed to parse\n";
    return kDataError;
  }
  return kOk;
}

int cmd_pretrain(const RunConfig& config) {
  const auto data = prepare_data(config);
  const auto dir = out_dir(config);
  const auto ckpt = checkpoint_path(config, config.paths.checkpoint, "pretrain.ckpt");
  TrainConfig train = config.pretrain;
  train.diagnostic_checkpoint = dir / "pretrain_diverged.ckpt";
  const auto seqs = data.train.sequences();
  auto result = pretrain(seqs, data.topo, train);
  result.models.config_hash = config.hash();
  save_checkpoint(result.models, ckpt);
  auto metrics = open_out(dir / "pretrain_metrics.csv");
  write_metrics_csv(metrics, result.metrics);
  write_run_record(config, dir);
  spdlog::info("pretrained {} encoders -> {}", result.models.kinds.size(), ckpt.string());
  return kOk;
}

int cmd_distill(const RunConfig& config) {
  const auto teacher_path = checkpoint_path(config, config.paths.checkpoint, "pretrain.ckpt");
  require_file(teacher_path, "teacher checkpoint");
  const auto teacher = load_checkpoint(teacher_path);
  const auto data = prepare_data(config);
  const auto dir = out_dir(config);
  DistillConfig distill = config.distill;
  distill.diagnostic_checkpoint = dir / "distill_diverged.ckpt";
  const auto seqs = data.train.sequences();
  auto result = distill_train(teacher, seqs, data.topo, distill);
  result.student.config_hash = config.hash();
  const auto student_path = checkpoint_path(config, config.paths.student, "student.ckpt");
  save_checkpoint(result.student, student_path);
  auto metrics = open_out(dir / "distill_metrics.csv");
  write_distill_metrics_csv(metrics, result.metrics);
  write_run_record(config, dir);
  spdlog::info("distilled {} student encoders -> {}", result.student.kinds.size(), student_path.string());
  return kOk;
}

int cmd_eval(const RunConfig& config, bool student) {
  const auto model_path = student ? checkpoint_path(config, config.paths.student, "student.ckpt")
                                  : checkpoint_path(config, config.paths.checkpoint, "pretrain.ckpt");
  require_file(model_path, "checkpoint");
  const auto models = load_checkpoint(model_path);
  const auto data = prepare_data(config);
  auto report = probe_and_evaluate(models, data.train, data.eval, data.topo, config.eval);
  report.config_hash = config.hash();
  const auto dir = out_dir(config);
  const std::string stem = model_path.stem().string();
  auto json = open_out(dir / (stem + "_report.json"));
  write_report_json(json, report);
  auto confusion = open_out(dir / (stem + "_confusion.csv"));
  write_confusion_csv(confusion, report);
  for (std::size_t s = 0; s < report.streams.size(); ++s)
    std::cout << fmt::format("{:<18} top1 {:.4f}\n", report.streams[s], report.top1[s]);
  std::cout << fmt::format("{:<18} top1 {:.4f}\n", "fused", report.fused_top1);
  return kOk;
}

int cmd_gradcheck(const RunConfig& config, std::size_t coords) {
  GradSuiteOptions opts;
  opts.seed = config.seed;
  opts.coords = coords;
  const auto results = run_gradient_suite(opts);
  const auto dir = out_dir(config);
  auto csv = open_out(dir / "gradcheck.csv");
  csv << "loss,coords,max_rel_error,max_abs_error,worst,passed\n";
  bool ok = true;
  for (const auto& r : results) {
    csv << fmt::format("{},{},{:.6e},{:.6e},{},{}\n", r.loss, r.report.coords_checked, r.report.max_rel_error,
                       r.report.max_abs_error, r.report.worst, r.report.passed ? "true" : "false");
    std::cout << fmt::format("{:<10} coords {:>4}  max rel {:.3e}  {}\n", r.loss, r.report.coords_checked,
                             r.report.max_rel_error, r.report.passed ? "PASS" : "FAIL");
    ok = ok && r.report.passed;
  }
  return ok ? kOk : kNumericError;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("KINEMOD_LOG")) spdlog::cfg::helpers::load_levels(level);

  CLI::App app{"kinemod: multi-modality self-supervised skeleton representations"};
  app.require_subcommand(1);
  GlobalOptions g;
  std::uint64_t seed = 0;
  int workers = 0;
  app.add_option("--config", g.config, "INI configuration file");
  app.add_option("--set", g.overrides, "override a field, section.key=value (repeatable)");
  auto* seed_opt = app.add_option("--seed", seed, "run seed");
  auto* workers_opt = app.add_option("--workers", workers, "OpenMP worker count (0 = runtime default)");
  app.add_option("--out", g.out, "output directory");
  app.fallthrough();

  auto* generate = app.add_subcommand("generate", "write the synthetic dataset as skeleton files + manifest");
  auto* derive = app.add_subcommand("derive", "export the six modalities per sample plus a summary CSV");
  auto* pre = app.add_subcommand("pretrain", "two-stage contrastive pretraining");
  auto* distill = app.add_subcommand("distill", "relational teacher-student distillation");
  auto* eval = app.add_subcommand("eval", "linear probe evaluation of a checkpoint");
  bool eval_student = false;
  eval->add_flag("--student", eval_student, "evaluate paths.student instead of paths.checkpoint");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of all four losses");
  std::size_t coords = 200;
  grad->add_option("--coords", coords, "coordinates sampled per loss")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }
  if (*seed_opt) g.seed = seed;
  if (*workers_opt) g.workers = workers;

  try {
    const RunConfig config = build_config(g);
    if (*generate) return cmd_generate(config);
    if (*derive) return cmd_derive(config);
    if (*pre) return cmd_pretrain(config);
    if (*distill) return cmd_distill(config);
    if (*eval) return cmd_eval(config, eval_student);
    if (*grad) return cmd_gradcheck(config, coords);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsageError;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsageError;
}
