#pragma once

#include <cstddef>

#include "kinemod/config.hpp"
#include "kinemod/data_io.hpp"
#include "kinemod/eval.hpp"

namespace kinemod {

SkeletonTopology resolve_topology(const RunConfig& config);

// Loads paths.dataset (or generates [synthetic] data when empty) and resamples to 50 frames.
Dataset resolve_dataset(const RunConfig& config, const SkeletonTopology& topo,
                        std::vector<std::string>* errors = nullptr);

struct PreparedData {
  SkeletonTopology topo;
  Dataset train;
  Dataset eval;
};

PreparedData prepare_data(const RunConfig& config);

// Fits one linear probe per encoder stream on the train split and scores the eval split.
EvalReport probe_and_evaluate(const ModelSet& models, const Dataset& train, const Dataset& eval,
                              const SkeletonTopology& topo, const EvalConfig& config);

}  // namespace kinemod
