#pragma once

// Black-box reverse-engineering attack and the fixed-perturbation baseline it
// defeats. The attack sees images only: it receives a protect callback, uses
// it once to obtain K protected images, and never touches defender weights or
// gradients.

#include "padl/evaluation.hpp"
#include "padl/losses.hpp"
#include "padl/optimizer.hpp"
#include "padl/training.hpp"

namespace padl {

// ---------------------------------------------------------------------------
// Protection extractor: a small CNN mapping images to perturbation-shaped
// output. 3x3 convolutions, same padding, channels 3 -> 16 -> 32 -> 16 -> 3.

struct ExtractorNet {
  Tensor w1, b1, w2, b2, w3, b3, w4, b4;

  void init(Rng& rng) {
    auto conv_init = [&](int out_c, int in_c) {
      const float std = std::sqrt(2.0f / static_cast<float>(in_c * 9));
      return rng.normal_tensor({out_c, in_c, 3, 3}, 0.0f, std, true);
    };
    w1 = conv_init(16, 3);
    b1 = Tensor({16}, 0.0f, true);
    w2 = conv_init(32, 16);
    b2 = Tensor({32}, 0.0f, true);
    w3 = conv_init(16, 32);
    b3 = Tensor({16}, 0.0f, true);
    w4 = conv_init(3, 16);
    b4 = Tensor({3}, 0.0f, true);
  }

  Tensor forward(const Tensor& x) const {
    Tensor h = relu(conv2d(x, w1, b1, 1, 1));
    h = relu(conv2d(h, w2, b2, 1, 1));
    h = relu(conv2d(h, w3, b3, 1, 1));
    return conv2d(h, w4, b4, 1, 1);
  }

  std::vector<Tensor> params() {
    return {w1, b1, w2, b2, w3, b3, w4, b4};
  }
};

struct AttackConfig {
  int k = 16;             // protected images available to the attacker
  bool adaptive = false;  // one perturbation per protected image, plus L_div
  int steps = 600;
  float learning_rate = 3e-3f;
  int trials = 10;
  int minibatch = 4;   // protected (and unprotected) images per step
  int probe_images = 16;  // adaptive only: images used to pick the best delta
  std::uint64_t seed = 7;

  void validate(int protect_pool_size) const {
    if (k < 1) throw std::invalid_argument("attack config: k must be >= 1");
    if (k > protect_pool_size)
      throw std::invalid_argument("attack config: k=" + std::to_string(k) +
                                  " exceeds protected pool of " +
                                  std::to_string(protect_pool_size));
    if (steps < 1 || trials < 1)
      throw std::invalid_argument("attack config: steps and trials must be >= 1");
  }
};

struct AttackFit {
  Tensor deltas;  // [M, C, H, W]; M = 1 or K
  ExtractorNet extractor;
};

namespace detail {
inline Tensor gather_rows(const Tensor& batch, const std::vector<int>& indices) {
  const int C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  Tensor out({static_cast<int>(indices.size()), C, H, W});
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::memcpy(out.data() + i * static_cast<std::size_t>(C) * H * W,
                batch.data() + static_cast<std::size_t>(indices[i]) * C * H * W,
                sizeof(float) * C * H * W);
  return out;
}
}  // namespace detail

// Jointly optimizes the learnable perturbation(s) and the extractor on K
// protected images drawn from protect_pool, with a disjoint unprotected pool
// as the negative reference. protect_fn is invoked exactly once, on images.
inline AttackFit fit_attack(const ProtectFn& protect_fn, const Tensor& protect_pool,
                            const Tensor& unprotected_pool, const AttackConfig& cfg,
                            Rng& rng) {
  cfg.validate(protect_pool.dim(0));
  const int C = protect_pool.dim(1), H = protect_pool.dim(2), W = protect_pool.dim(3);

  // draw K distinct images, protect them once
  std::vector<int> pool_indices(protect_pool.dim(0));
  for (std::size_t i = 0; i < pool_indices.size(); ++i) pool_indices[i] = static_cast<int>(i);
  std::shuffle(pool_indices.begin(), pool_indices.end(), rng.engine());
  pool_indices.resize(cfg.k);
  Tensor protected_images = protect_fn(detail::gather_rows(protect_pool, pool_indices));

  const int M = cfg.adaptive ? cfg.k : 1;
  AttackFit fit;
  fit.deltas = rng.normal_tensor({M, C, H, W}, 0.0f, 0.03f, true);
  fit.extractor.init(rng);

  std::vector<Tensor> params = fit.extractor.params();
  params.push_back(fit.deltas);
  AdamW::Config oc;
  oc.lr = cfg.learning_rate;
  oc.weight_decay = 0.0f;
  AdamW opt(params, oc);

  auto extract = [&fit](const Tensor& imgs) { return fit.extractor.forward(imgs); };
  const int mb = std::min(cfg.minibatch, cfg.k);
  const int U = unprotected_pool.dim(0);

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<int> prot_idx(mb), unprot_idx(mb);
    for (int i = 0; i < mb; ++i) {
      prot_idx[i] = rng.uniform_int(0, cfg.k - 1);
      unprot_idx[i] = rng.uniform_int(0, U - 1);
    }
    Tensor prot_mb = detail::gather_rows(protected_images, prot_idx);
    Tensor unprot_mb = detail::gather_rows(unprotected_pool, unprot_idx);

    Tensor delta_mb = fit.deltas;
    if (cfg.adaptive) {
      std::vector<Tensor> rows;
      rows.reserve(mb);
      for (int i = 0; i < mb; ++i) rows.push_back(slice(fit.deltas, 0, prot_idx[i], 1));
      delta_mb = concat(rows, 0);
    }

    Tensor loss = attack_loss(delta_mb, prot_mb, unprot_mb, extract);
    if (cfg.adaptive) loss = add(loss, l_div(fit.deltas));

    opt.zero_grad();
    backward(loss);
    opt.step();
  }
  return fit;
}

struct AttackEvaluation {
  double best_rate = 0.0;
  int best_delta = 0;
  std::vector<double> per_delta_rates;  // filled for adaptive fits
};

namespace detail {
inline double fooled_rate(const Tensor& delta_row, const Tensor& images,
                          const DetectFn& detect) {
  Tensor forged = images.detach();
  const std::size_t plane = delta_row.numel();
  for (int b = 0; b < images.dim(0); ++b) {
    float* p = forged.data() + static_cast<std::size_t>(b) * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] = clamp01(p[i] + delta_row.data()[i]);
  }
  DetectionResult res = detect(forged);
  std::size_t hits = 0;
  for (auto v : res.protected_intact) hits += v ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(images.dim(0));
}
}  // namespace detail

// Applies the reversed perturbation(s) to fresh images and reports the
// fraction the defender classifies as protected. With an ensemble, a probe
// subset picks the strongest perturbation, which is then scored on the full
// fresh set (attacker-favorable, so defense numbers are conservative).
inline AttackEvaluation evaluate_attack(const AttackFit& fit, const Tensor& fresh_images,
                                        const DetectFn& detect, int probe_images = 16) {
  AttackEvaluation eval;
  const int M = fit.deltas.dim(0);
  const int C = fit.deltas.dim(1), H = fit.deltas.dim(2), W = fit.deltas.dim(3);
  auto delta_row = [&](int m) {
    Tensor row({1, C, H, W});
    std::memcpy(row.data(), fit.deltas.data() + static_cast<std::size_t>(m) * C * H * W,
                sizeof(float) * C * H * W);
    return row;
  };
  int best = 0;
  if (M > 1) {
    const int n_probe = std::min(probe_images, fresh_images.dim(0));
    std::vector<int> idx(n_probe);
    for (int i = 0; i < n_probe; ++i) idx[i] = i;
    Tensor probe = detail::gather_rows(fresh_images, idx);
    double best_probe = -1.0;
    for (int m = 0; m < M; ++m) {
      const double r = detail::fooled_rate(delta_row(m), probe, detect);
      eval.per_delta_rates.push_back(r);
      if (r > best_probe) {
        best_probe = r;
        best = m;
      }
    }
  }
  eval.best_delta = best;
  eval.best_rate = detail::fooled_rate(delta_row(best), fresh_images, detect);
  return eval;
}

struct AttackSweepRow {
  int k = 0;
  double mean_rate = 0.0;
  double std_rate = 0.0;
  std::vector<double> trial_rates;
};

// Table-style sweep: for each K, `trials` independent fits on different
// protected subsets, scored on a fresh image set disjoint from both pools.
inline std::vector<AttackSweepRow> run_attack_sweep(
    const ProtectFn& protect_fn, const DetectFn& detect_fn, const Tensor& protect_pool,
    const Tensor& unprotected_pool, const Tensor& fresh_images, const std::vector<int>& ks,
    AttackConfig cfg) {
  std::vector<AttackSweepRow> rows;
  Rng trial_rng(cfg.seed);
  for (int k : ks) {
    AttackSweepRow row;
    row.k = k;
    for (int trial = 0; trial < cfg.trials; ++trial) {
      AttackConfig tc = cfg;
      tc.k = k;
      Rng rng(trial_rng.next_seed());
      AttackFit fit = fit_attack(protect_fn, protect_pool, unprotected_pool, tc, rng);
      AttackEvaluation ev = evaluate_attack(fit, fresh_images, detect_fn, cfg.probe_images);
      row.trial_rates.push_back(ev.best_rate);
    }
    double mean = 0.0;
    for (double r : row.trial_rates) mean += r;
    mean /= static_cast<double>(row.trial_rates.size());
    double var = 0.0;
    for (double r : row.trial_rates) var += (r - mean) * (r - mean);
    var /= static_cast<double>(row.trial_rates.size());
    row.mean_rate = mean;
    row.std_rate = std::sqrt(var);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Fixed-perturbation baseline: the prior-art stand-in. Protection picks one
// of a small set of learnable perturbations uniformly; the decoder and map
// block reuse the PADL architecture. Trained without the diversity loss and
// without image conditioning.

class BaselineModel {
 public:
  PADLModel core;  // encoder present but unused for protection
  int num_perturbations = 1;
  Tensor pert_params;  // [num, C, H, W]; tanh bounds them like the encoder

  BaselineModel() = default;
  BaselineModel(const ModelConfig& cfg, int num_perts, std::uint64_t seed)
      : core(cfg, seed), num_perturbations(num_perts) {
    if (num_perts < 1)
      throw std::invalid_argument("baseline: need at least one perturbation");
    Rng rng(seed + 0x5eedULL);
    pert_params = rng.normal_tensor(
        {num_perts, cfg.channels, cfg.image_height, cfg.image_width}, 0.0f, 1.0f, true);
  }

  Tensor perturbations() const { return tanh_t(pert_params); }

  // Input-independent protection: every image gets perturbation `index`.
  Tensor protect_with(const Tensor& x, int index) const {
    Tensor delta = slice(perturbations(), 0, index, 1);
    const int B = x.dim(0);
    Tensor delta_b = delta;
    if (B > 1) {
      Shape rest(delta.shape().begin() + 1, delta.shape().end());
      delta_b = broadcast0(reshape(delta, rest), B);
    }
    return add(x, mul_scalar(delta_b, core.cfg.alpha));
  }

  // One uniformly chosen perturbation per image.
  Tensor protect(const Tensor& x, Rng& rng) const {
    const int B = x.dim(0);
    Tensor perts = perturbations();
    std::vector<Tensor> rows;
    rows.reserve(B);
    for (int b = 0; b < B; ++b)
      rows.push_back(slice(perts, 0, rng.uniform_int(0, num_perturbations - 1), 1));
    return add(x, mul_scalar(concat(rows, 0), core.cfg.alpha));
  }

  DetectionResult detect(const Tensor& y) const { return core.detect(y); }

  std::vector<Tensor> trainable_params() {
    std::vector<Tensor> out = core.decoder_params();
    for (Tensor& t : core.map_params()) out.push_back(t);
    out.push_back(pert_params);
    return out;
  }
};

struct BaselineTrainConfig {
  int iterations = 800;
  int batch_size = 8;
  float learning_rate = 3e-4f;
  bool enable_noise_injection = false;  // prior art is not noise-aware
  std::uint64_t seed = 3;
  int train_pool = 256;
};

// Alg-1-style loop minus L_div and minus conditioning: reconstruction, map
// and BCE losses over the three streams.
inline void train_baseline(BaselineModel& model, const BaselineTrainConfig& cfg,
                           const Tensor& pool,
                           const std::function<void(int, const LossBreakdown&)>& log_fn = {}) {
  Rng rng(cfg.seed);
  AdamW::Config oc;
  oc.lr = cfg.learning_rate;
  AdamW opt(model.trainable_params(), oc);
  const int N = pool.dim(0);
  const int C = pool.dim(1), H = pool.dim(2), W = pool.dim(3);
  const float alpha = model.core.cfg.alpha;

  for (int it = 0; it < cfg.iterations; ++it) {
    Tensor batch({cfg.batch_size, C, H, W});
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int pick = rng.uniform_int(0, N - 1);
      std::memcpy(batch.data() + static_cast<std::size_t>(b) * C * H * W,
                  pool.data() + static_cast<std::size_t>(pick) * C * H * W,
                  sizeof(float) * C * H * W);
    }

    // one uniformly chosen fixed perturbation per image
    std::vector<Tensor> rows;
    rows.reserve(cfg.batch_size);
    Tensor perts = model.perturbations();
    for (int b = 0; b < cfg.batch_size; ++b)
      rows.push_back(slice(perts, 0, rng.uniform_int(0, model.num_perturbations - 1), 1));
    Tensor delta = concat(rows, 0);
    Tensor tau = add(batch, mul_scalar(delta, alpha));

    std::vector<ManipulationSpec> specs;
    for (int b = 0; b < cfg.batch_size; ++b)
      specs.push_back(random_manipulation_spec(rng, H, W));
    Tensor manipulated = toy_manipulate_each(tau.detach(), specs);
    Tensor gt_map = ground_truth_map(tau.detach(), manipulated);
    Tensor raw = cfg.enable_noise_injection ? inject_detection_noise(batch, rng) : batch;

    Tensor delta_g = model.core.decode_perturbation(manipulated);
    Tensor delta_tau = model.core.decode_perturbation(tau);
    Tensor delta_raw = model.core.decode_perturbation(raw);
    MapBlockOutput out_g = model.core.map_block(manipulated, delta_g);
    MapBlockOutput out_tau = model.core.map_block(tau, delta_tau);
    MapBlockOutput out_raw = model.core.map_block(raw, delta_raw);

    Tensor rec = l_rec(delta, delta_tau);
    Tensor map_loss = l_map(gt_map, out_g.map);
    Tensor logits = concat({out_g.cls_logit, out_tau.cls_logit, out_raw.cls_logit}, 0);
    Tensor labels(Shape{3 * cfg.batch_size, 1}, 0.0f);
    for (int b = 0; b < cfg.batch_size; ++b) labels.data()[cfg.batch_size + b] = 1.0f;
    Tensor bce = l_bce(logits, labels);
    Tensor total = add(add(rec, map_loss), bce);

    LossBreakdown lb;
    lb.rec = rec.item();
    lb.map = map_loss.item();
    lb.bce = bce.item();
    lb.total = total.item();
    if (!lb.finite())
      throw TrainingDivergence("baseline training diverged at iteration " + std::to_string(it),
                               lb);
    opt.zero_grad();
    backward(total);
    opt.step();
    if (log_fn) log_fn(it, lb);
  }
}

}  // namespace padl
