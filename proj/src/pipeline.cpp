#include "kinemod/pipeline.hpp"

#include <spdlog/spdlog.h>

#include "kinemod/common.hpp"

namespace kinemod {

SkeletonTopology resolve_topology(const RunConfig& config) {
  if (config.paths.topology.empty()) return default_topology();
  return load_topology(config.paths.topology);
}

Dataset resolve_dataset(const RunConfig& config, const SkeletonTopology& topo, std::vector<std::string>* errors) {
  Dataset raw = config.paths.dataset.empty()
                    ? generate_synthetic(config.synthetic, topo)
                    : load_dataset(config.paths.dataset, topo.joint_count, errors, config.data.bodies);
  if (raw.samples.empty()) throw DataError("dataset is empty");
  return resized(raw, kResampledFrames);
}

PreparedData prepare_data(const RunConfig& config) {
  PreparedData out;
  out.topo = resolve_topology(config);
  const Dataset all = resolve_dataset(config, out.topo);
  const Split split = split_dataset(all, config.data.split);
  if (split.train.empty()) throw DataError("the split leaves no training samples");
  out.train = all.subset(split.train);
  out.eval = all.subset(split.eval);
  spdlog::info("dataset: {} samples ({} train, {} eval), {} classes", all.samples.size(), split.train.size(),
               split.eval.size(), all.num_classes);
  return out;
}

EvalReport probe_and_evaluate(const ModelSet& models, const Dataset& train, const Dataset& eval,
                              const SkeletonTopology& topo, const EvalConfig& config) {
  if (eval.samples.empty()) throw DataError("the eval split is empty");
  const std::size_t classes = std::max(train.num_classes, eval.num_classes);
  const auto train_seqs = train.sequences();
  const auto eval_seqs = eval.sequences();
  const auto train_sets = derive_batch(train_seqs, topo);
  const auto eval_sets = derive_batch(eval_seqs, topo);
  const auto train_labels = train.labels();
  const auto eval_labels = eval.labels();
  for (int l : train_labels)
    if (l < 0) throw DataError("linear evaluation needs labeled training samples");
  for (int l : eval_labels)
    if (l < 0) throw DataError("linear evaluation needs labeled eval samples");

  std::vector<LinearProbe> probes;
  for (std::size_t k = 0; k < models.kinds.size(); ++k)
    probes.push_back(train_probe(models.stacks[k], train_sets, models.kinds[k], train_labels, classes, config.probe));
  EvalReport report = evaluate(probes, models, eval_sets, eval_labels, config.fuse);
  if (config.knn_k > 0 && config.knn_k < eval_sets.size()) {
    report.knn_precision = knn_report(models, eval_sets, eval_labels, config.knn_k);
    report.knn_k = config.knn_k;
  }
  return report;
}

}  // namespace kinemod
