#pragma once

#include <torch/torch.h>

#include <vector>

namespace tripro::model {

struct LossConfig {
    double tau_init = 0.07;
    double margin = 0.3;
    double label_smoothing = 0.1;
    double w_v2t = 1.0, w_t2v = 1.0, w_id = 1.0, w_tri = 1.0;
};

/// -1/B sum_i log softmax_j(a_i . b_j / tau)[i]. Rows of a and b are paired by index.
/// `tau` is a positive scalar tensor. Throws InputError on NaN input.
torch::Tensor contrastive(const torch::Tensor& a, const torch::Tensor& b, const torch::Tensor& tau);

inline torch::Tensor contrastive_v2t(const torch::Tensor& v, const torch::Tensor& t, const torch::Tensor& tau) {
    return contrastive(v, t, tau);
}
inline torch::Tensor contrastive_t2v(const torch::Tensor& t, const torch::Tensor& v, const torch::Tensor& tau) {
    return contrastive(t, v, tau);
}

/// Label-smoothed cross entropy averaged over the batch. Labels are 1-based
/// class numbers in [1, Y]; anything else is an InputError.
torch::Tensor id_loss(const torch::Tensor& logits, const std::vector<int>& labels, double smoothing);

/// Batch-hard triplet loss on squared Euclidean distances, averaged over anchors.
/// An anchor without another same-label sample uses itself as positive.
/// A batch with a single label is an InputError.
torch::Tensor triplet_loss(const torch::Tensor& features, const std::vector<int>& labels, double margin);

} // namespace tripro::model
