#pragma once

// Shared finite-difference sweep over every differentiable operation. Each op
// is scalarized through a fixed random weighting so no gradient component is
// structurally zero. Used by the tensor unit tests and the acceptance suite.

#include <string>
#include <vector>

#include "padl/gradcheck.hpp"
#include "padl/losses.hpp"
#include "padl/ops.hpp"

namespace padl_tests {

struct GradCheckCase {
  std::string name;
  double max_rel_error;
};

// Weighted scalarization keeps grad_check away from symmetric cancellations
// (e.g. sum(softmax) is constant).
inline padl::Tensor weighted_sum(const padl::Tensor& t, padl::Rng& rng) {
  padl::Tensor w = rng.uniform_tensor(t.shape(), 0.25f, 1.0f);
  return padl::sum_all(padl::mul(t, w));
}

// Inputs bounded away from zero so kinked ops (relu, abs-like) see no
// crossing within the finite-difference step.
inline padl::Tensor signed_offset_tensor(padl::Rng& rng, const padl::Shape& shape,
                                         float lo = 0.2f, float hi = 1.0f) {
  padl::Tensor t(shape);
  for (auto& v : t.vec()) v = (rng.uniform() < 0.5f ? -1.0f : 1.0f) * rng.uniform(lo, hi);
  return t;
}

inline std::vector<GradCheckCase> run_op_gradchecks(std::uint64_t seed) {
  using namespace padl;
  Rng rng(seed);
  std::vector<GradCheckCase> results;
  auto record = [&](const std::string& name, double err) {
    results.push_back({name, err});
  };

  {
    Tensor x = rng.normal_tensor({3, 4});
    Tensor other = rng.normal_tensor({3, 4});
    Rng wrng(seed + 1);
    record("add", grad_check([&](Tensor& t) { return weighted_sum(add(t, other), wrng); }, x));
    record("sub", grad_check([&](Tensor& t) { return weighted_sum(sub(other, t), wrng); }, x));
    record("mul", grad_check([&](Tensor& t) { return weighted_sum(mul(t, other), wrng); }, x));
    record("mul_both", grad_check([&](Tensor& t) { return weighted_sum(mul(t, t), wrng); }, x));
    record("add_scalar",
           grad_check([&](Tensor& t) { return weighted_sum(add_scalar(t, 0.7f), wrng); }, x));
    record("mul_scalar",
           grad_check([&](Tensor& t) { return weighted_sum(mul_scalar(t, -1.3f), wrng); }, x));
  }
  {
    Tensor x = signed_offset_tensor(rng, {3, 4}, 0.5f, 1.5f);
    Tensor num = rng.normal_tensor({3, 4});
    Rng wrng(seed + 2);
    record("div_denominator",
           grad_check([&](Tensor& t) { return weighted_sum(div(num, t), wrng); }, x));
    Tensor den = signed_offset_tensor(rng, {3, 4}, 0.5f, 1.5f);
    Tensor x2 = rng.normal_tensor({3, 4});
    record("div_numerator",
           grad_check([&](Tensor& t) { return weighted_sum(div(t, den), wrng); }, x2));
  }
  {
    Tensor x = rng.normal_tensor({2, 3, 5});
    Tensor bias = rng.normal_tensor({5});
    Rng wrng(seed + 3);
    record("add_bias_x",
           grad_check([&](Tensor& t) { return weighted_sum(add_bias(t, bias), wrng); }, x));
    Tensor xc = rng.normal_tensor({2, 3, 5});
    record("add_bias_b",
           grad_check([&](Tensor& t) { return weighted_sum(add_bias(xc, t), wrng); }, bias));
  }
  {
    Rng wrng(seed + 4);
    Tensor x = rng.normal_tensor({4, 5});
    record("tanh", grad_check([&](Tensor& t) { return weighted_sum(tanh_t(t), wrng); }, x));
    record("sigmoid", grad_check([&](Tensor& t) { return weighted_sum(sigmoid(t), wrng); }, x));
    record("gelu", grad_check([&](Tensor& t) { return weighted_sum(gelu(t), wrng); }, x));
    Tensor xr = signed_offset_tensor(rng, {4, 5});
    record("relu", grad_check([&](Tensor& t) { return weighted_sum(relu(t), wrng); }, xr));
    Tensor xp = rng.uniform_tensor({4, 5}, 0.3f, 2.0f);
    record("sqrt", grad_check([&](Tensor& t) { return weighted_sum(sqrt_t(t), wrng); }, xp));
  }
  {
    Rng wrng(seed + 5);
    Tensor a = rng.normal_tensor({4, 3});
    Tensor b = rng.normal_tensor({3, 5});
    record("matmul_lhs",
           grad_check([&](Tensor& t) { return weighted_sum(matmul(t, b), wrng); }, a));
    record("matmul_rhs",
           grad_check([&](Tensor& t) { return weighted_sum(matmul(a, t), wrng); }, b));
    Tensor ab = rng.normal_tensor({2, 3, 4});
    Tensor bb = rng.normal_tensor({2, 4, 2});
    record("matmul_batched",
           grad_check([&](Tensor& t) { return weighted_sum(matmul(t, bb), wrng); }, ab));
  }
  {
    Rng wrng(seed + 6);
    Tensor x = rng.normal_tensor({2, 3, 4});
    record("softmax",
           grad_check([&](Tensor& t) { return weighted_sum(softmax(t, -1), wrng); }, x));
    record("softmax_axis1",
           grad_check([&](Tensor& t) { return weighted_sum(softmax(t, 1), wrng); }, x));
  }
  {
    Rng wrng(seed + 7);
    Tensor x = rng.normal_tensor({3, 6});
    Tensor gamma = rng.uniform_tensor({6}, 0.5f, 1.5f);
    Tensor beta = rng.normal_tensor({6});
    record("layer_norm_x", grad_check(
        [&](Tensor& t) { return weighted_sum(layer_norm(t, gamma, beta), wrng); }, x));
    Tensor x2 = rng.normal_tensor({3, 6});
    record("layer_norm_gamma", grad_check(
        [&](Tensor& t) { return weighted_sum(layer_norm(x2, t, beta), wrng); }, gamma));
    record("layer_norm_beta", grad_check(
        [&](Tensor& t) { return weighted_sum(layer_norm(x2, gamma, t), wrng); }, beta));
  }
  {
    Rng wrng(seed + 8);
    Tensor x = rng.normal_tensor({2, 3, 4});
    record("reshape", grad_check(
        [&](Tensor& t) { return weighted_sum(reshape(t, {4, 6}), wrng); }, x));
    record("transpose", grad_check(
        [&](Tensor& t) { return weighted_sum(transpose(t, {2, 0, 1}), wrng); }, x));
    Tensor other = rng.normal_tensor({2, 2, 4});
    record("concat", grad_check(
        [&](Tensor& t) { return weighted_sum(concat({t, other}, 1), wrng); }, x));
    record("slice", grad_check(
        [&](Tensor& t) { return weighted_sum(slice(t, 2, 1, 2), wrng); }, x));
    Tensor small = rng.normal_tensor({3, 2});
    record("broadcast0", grad_check(
        [&](Tensor& t) { return weighted_sum(broadcast0(t, 4), wrng); }, small));
  }
  {
    Tensor x = rng.normal_tensor({3, 5});
    record("sum_all", grad_check([&](Tensor& t) { return sum_all(t); }, x));
    record("mean_all", grad_check([&](Tensor& t) { return mean_all(t); }, x));
    Rng wrng(seed + 9);
    Tensor other = rng.normal_tensor({3, 5});
    record("row_dot", grad_check(
        [&](Tensor& t) { return weighted_sum(row_dot(t, other), wrng); }, x));
    Tensor scale = rng.uniform_tensor({3}, 0.5f, 2.0f);
    record("div_rows_x", grad_check(
        [&](Tensor& t) { return weighted_sum(div_rows(t, scale), wrng); }, x));
    Tensor x3 = rng.normal_tensor({3, 5});
    record("div_rows_s", grad_check(
        [&](Tensor& t) { return weighted_sum(div_rows(x3, t), wrng); }, scale));
  }
  {
    Rng wrng(seed + 10);
    Tensor img = rng.normal_tensor({2, 3, 4, 4});
    record("img_to_patches", grad_check(
        [&](Tensor& t) { return weighted_sum(img_to_patches(t, 2), wrng); }, img));
    Tensor patches = rng.normal_tensor({2, 4, 12});
    record("patches_to_img", grad_check(
        [&](Tensor& t) { return weighted_sum(patches_to_img(t, 3, 4, 4, 2), wrng); }, patches));
  }
  {
    Rng wrng(seed + 11);
    Tensor x = rng.normal_tensor({2, 2, 5, 5});
    Tensor k = rng.normal_tensor({3, 2, 3, 3}, 0.0f, 0.5f);
    Tensor b = rng.normal_tensor({3});
    record("conv2d_x", grad_check(
        [&](Tensor& t) { return weighted_sum(conv2d(t, k, b, 1, 1), wrng); }, x));
    Tensor x2 = rng.normal_tensor({2, 2, 5, 5});
    record("conv2d_kernel", grad_check(
        [&](Tensor& t) { return weighted_sum(conv2d(x2, t, b, 1, 1), wrng); }, k));
    record("conv2d_bias", grad_check(
        [&](Tensor& t) { return weighted_sum(conv2d(x2, k, t, 2, 0), wrng); }, b));
  }
  {
    Tensor logits = rng.normal_tensor({6, 1}, 0.0f, 2.0f);
    Tensor labels({6, 1}, 0.0f);
    for (int i = 0; i < 6; ++i) labels.data()[i] = rng.uniform() < 0.5f ? 0.0f : 1.0f;
    record("bce_with_logits",
           grad_check([&](Tensor& t) { return bce_with_logits(t, labels); }, logits));
  }
  {
    Rng wrng(seed + 12);
    Tensor a = rng.normal_tensor({3, 8});
    Tensor b = rng.normal_tensor({3, 8});
    record("cosine_rows_a", grad_check(
        [&](Tensor& t) { return weighted_sum(cosine_rows(t, b), wrng); }, a));
    Tensor a2 = rng.normal_tensor({3, 8});
    record("l2_norm_rows", grad_check(
        [&](Tensor& t) { return weighted_sum(l2_norm_rows(t), wrng); }, a2));
  }
  return results;
}

}  // namespace padl_tests
