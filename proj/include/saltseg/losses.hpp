#pragma once

#include "saltseg/tensor.hpp"

namespace saltseg {

// Numerically stable mean BCE over raw logits; gradient (sigmoid(z) - y)/n.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

// Gradient of the Jaccard-loss Lovasz extension for a label vector already
// sorted by descending error. All-zero labels give the zero vector.
Array lovasz_grad(const Array& gt_sorted);

// Lovasz hinge on flat logits/labels. The sort permutation and the extension
// gradient are constants of the forward pass; gradient flows through the
// hinge errors only.
Tensor lovasz_hinge(const Tensor& logits, const Tensor& labels);

// w_bce * bce + w_lovasz * lovasz_hinge; the default 0.1/0.9 blend of the
// second training phase.
Tensor combined_loss(const Tensor& logits, const Tensor& targets, double w_bce = 0.1,
                     double w_lovasz = 0.9);

}  // namespace saltseg
