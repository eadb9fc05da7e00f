#pragma once

// The four training losses (reconstruction, map, diversity, detection BCE)
// and the reverse-engineering attack loss. All cosine terms are distances,
// 1 - cos, so every term is minimized. Each returns a scalar tensor on the
// tape; gradients of the summed total equal the accumulated per-term ones.

#include <cstdio>
#include <functional>

#include "padl/ops.hpp"

namespace padl {

struct LossBreakdown {
  float rec = 0.0f;
  float map = 0.0f;
  float div = 0.0f;
  float bce = 0.0f;
  float total = 0.0f;

  bool finite() const {
    return std::isfinite(rec) && std::isfinite(map) && std::isfinite(div) &&
           std::isfinite(bce) && std::isfinite(total);
  }
};

// Mean over the batch of per-image cosine distance between the encoded and
// decoded perturbations. 0 iff parallel per image, at most 2.
inline Tensor l_rec(const Tensor& delta_e, const Tensor& delta_d) {
  detail::check_same_shape(delta_e, delta_d, "l_rec");
  Tensor cos = cosine_rows(delta_e, delta_d);
  Tensor ones(Shape{cos.dim(0)}, 1.0f);
  return mean_all(sub(ones, cos));
}

// Cosine distance between ground-truth and predicted maps. Rows whose ground
// truth is all zero have no cosine gradient (the epsilon guard makes the term
// a constant 1), so they instead receive a small squared-magnitude push on
// the prediction, weight 0.1.
inline Tensor l_map(const Tensor& y_gt, const Tensor& m_pred) {
  detail::check_same_shape(y_gt, m_pred, "l_map");
  const int B = y_gt.dim(0);
  const std::size_t row = y_gt.numel() / static_cast<std::size_t>(B);
  Tensor cos = cosine_rows(y_gt, m_pred);
  Tensor ones(Shape{B}, 1.0f);
  Tensor dist = sub(ones, cos);

  Tensor zero_mask(Shape{B}, 0.0f);
  bool any_zero = false;
  for (int b = 0; b < B; ++b) {
    const float* prow = y_gt.data() + b * row;
    bool all_zero = true;
    for (std::size_t i = 0; i < row && all_zero; ++i)
      if (prow[i] != 0.0f) all_zero = false;
    if (all_zero) {
      zero_mask.data()[b] = 1.0f;
      any_zero = true;
    }
  }
  if (!any_zero) return mean_all(dist);
  Tensor mean_sq = mul_scalar(row_dot(m_pred, m_pred), 1.0f / static_cast<float>(row));
  return mean_all(add(dist, mul_scalar(mul(zero_mask, mean_sq), 0.1f)));
}

// Perturbation diversity: sum over ordered pairs i != j of the clamped cosine
// similarity. The clamp keeps opposite-direction pairs from being rewarded.
inline Tensor l_div(const Tensor& deltas) {
  const int B = deltas.dim(0);
  if (B < 2) {
    std::fprintf(stderr, "l_div: batch of %d has no pairs, returning 0\n", B);
    return Tensor::scalar(0.0f);
  }
  const int row = static_cast<int>(deltas.numel() / static_cast<std::size_t>(B));
  Tensor flat = reshape(deltas, {B, row});
  Tensor norms = sqrt_t(add_scalar(row_dot(flat, flat), 1e-16f));
  Tensor unit = div_rows(flat, norms);
  Tensor gram = matmul(unit, transpose(unit, {1, 0}));  // [B,B]
  Tensor off_diag(Shape{B, B}, 1.0f);
  for (int i = 0; i < B; ++i) off_diag.data()[i * B + i] = 0.0f;
  return sum_all(mul(relu(gram), off_diag));
}

// Detection loss: stabilized binary cross-entropy on the class-token logits.
inline Tensor l_bce(const Tensor& logits, const Tensor& labels) {
  return bce_with_logits(logits, labels);
}

// Training-time noise injection: each sample independently receives Gaussian
// noise with probability `prob`, sigma drawn uniformly from [sigma_min,
// sigma_max]. Returns a fresh leaf (the noisy image is input data, not a
// differentiable transform).
inline Tensor inject_detection_noise(const Tensor& x, Rng& rng, float prob = 0.5f,
                                     float sigma_min = 0.01f, float sigma_max = 0.05f) {
  Tensor out = x.detach();
  const int B = x.dim(0);
  const std::size_t plane = x.numel() / static_cast<std::size_t>(B);
  for (int b = 0; b < B; ++b) {
    if (rng.uniform() >= prob) continue;
    const float sigma = rng.uniform(sigma_min, sigma_max);
    float* p = out.data() + b * plane;
    for (std::size_t i = 0; i < plane; ++i)
      p[i] = std::min(1.0f, std::max(0.0f, p[i] + rng.normal(0.0f, sigma)));
  }
  return out;
}

// Black-box attack loss: align the learnable perturbation with what the
// extractor pulls out of protected images, while pushing the extractor to
// output nothing on unprotected ones and keeping the perturbation small.
// With one learnable perturbation it is compared to every protected image;
// with one per image (adaptive) rows pair up.
inline Tensor attack_loss(const Tensor& delta, const Tensor& protected_images,
                          const Tensor& unprotected_images,
                          const std::function<Tensor(const Tensor&)>& extractor) {
  const int K = protected_images.dim(0);
  const int M = delta.dim(0);
  if (M != 1 && M != K)
    throw std::invalid_argument("attack_loss: " + std::to_string(M) +
                                " perturbations for " + std::to_string(K) +
                                " protected images (want 1 or K)");
  Tensor ext_p = extractor(protected_images);
  detail::check_same_shape(ext_p, protected_images, "attack_loss extractor output");

  Tensor paired = delta;
  if (M == 1 && K > 1) {
    Shape rest(delta.shape().begin() + 1, delta.shape().end());
    paired = broadcast0(reshape(delta, rest), K);
  }
  Tensor cos = cosine_rows(paired, ext_p);
  Tensor ones(Shape{K}, 1.0f);
  Tensor align = mean_all(sub(ones, cos));

  Tensor ext_u = extractor(unprotected_images);
  Tensor quiet = mean_all(l2_norm_rows(ext_u));
  Tensor small = mean_all(l2_norm_rows(delta));
  return add(add(align, quiet), small);
}

}  // namespace padl
