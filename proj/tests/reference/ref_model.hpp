#pragma once

#include <vector>

#include "ticl/continual.hpp"

// Double-precision re-implementation of the forward pass, written directly
// from the layer formulas with plain loops. It re-reads parameter storage on
// every call, so finite-difference harnesses can perturb parameters between
// evaluations. Kept independent of the Tape/kernel code it is used to check.

namespace refm {

// Feature u for one image: patch rows are N x patch_dim floats.
std::vector<double> feature(const ticl::FeatureExtractor& fe,
                            const std::vector<float>& patch_rows,
                            const ticl::Parameter& token);

std::vector<double> feature_of_image(const ticl::FeatureExtractor& fe,
                                     const ticl::Tensor& image,
                                     const ticl::Parameter& token);

// Mean cross-entropy of one head over a batch, hard labels local to the head.
double cross_entropy(const std::vector<std::vector<double>>& logits,
                     const std::vector<int32_t>& local_labels);

// Mirror of the learner's total loss on a batch (hard labels only).
double loss_total(const ticl::ContinualLearner& learner, const ticl::Batch& batch);

} // namespace refm
