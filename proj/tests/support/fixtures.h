/*
 * Copyright 2026 The vflhssl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef VFLHSSL_TESTS_SUPPORT_FIXTURES_H_
#define VFLHSSL_TESTS_SUPPORT_FIXTURES_H_

#include <cstdint>
#include <string>
#include <vector>

#include "vflhssl/experiment.h"

namespace vflhssl::testing {

// Small dataset with `parties` blocks of `dim` continuous columns.
SyntheticSpec TinySpec(size_t parties = 2, size_t dim = 6, uint64_t seed = 3);

// Default experiment shrunk to run in well under a second per stage.
ExperimentConfig TinyExperiment(const std::string& method, const std::string& out_dir = "runs");

// Small model for the tiny dataset.
ModelConfig TinyModel(SslKind kind = SslKind::kSimSiam);

// Maximum absolute difference between two parameter lists with equal names
// and shapes.
double MaxAbsDiff(const NamedParameters& a, const NamedParameters& b);

struct SplitOracleResult {
  double max_param_diff = 0.0;
  double max_gradient_diff = 0.0;
  double max_loss_diff = 0.0;
  size_t batches = 0;
};

// Trains a split federation and a single-process copy of the same joint model
// side by side on `batches` random labeled batches and reports the largest
// deviation observed after any step.
SplitOracleResult CompareSplitWithMonolithic(size_t parties, size_t batches, uint64_t seed,
                                             ExecutionMode mode = ExecutionMode::kScheduler);

// Fresh scratch directory under the system temp dir.
std::string ScratchDir(const std::string& name);

}  // namespace vflhssl::testing

#endif  // VFLHSSL_TESTS_SUPPORT_FIXTURES_H_
