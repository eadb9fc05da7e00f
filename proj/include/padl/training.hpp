#pragma once

// The training loop: protect a batch, manipulate it with the toy generative
// model, decode all three streams (manipulated, protected, raw) and optimize
// the summed loss. Degradations ramp up linearly over the run and are applied
// to protected images before decoding; neither the manipulator nor the
// degradations ever carry gradients.

#include <sstream>

#include "padl/losses.hpp"
#include "padl/manipulator.hpp"
#include "padl/model.hpp"
#include "padl/optimizer.hpp"

namespace padl {

struct TrainConfig {
  int iterations = 1200;
  int batch_size = 8;
  float learning_rate = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float weight_decay = 0.01f;

  float degradation_p_max = 0.5f;
  std::vector<DegradationKind> degradations = {DegradationKind::jpeg, DegradationKind::blur,
                                               DegradationKind::noise, DegradationKind::lowres};
  // full-intensity degradation levels; the scheduler scales toward these
  float jpeg_quality_floor = 50.0f;
  float blur_max_size = 7.0f;
  float noise_max_sigma = 0.1f;
  float lowres_max_factor = 2.0f;

  float noise_sigma_min = 0.01f;
  float noise_sigma_max = 0.05f;
  float noise_inject_prob = 0.5f;
  bool enable_noise_injection = true;

  bool enable_l_div = true;
  bool supervise_clean_maps = false;  // map loss on manipulated samples only
  bool algorithm1_literal = false;    // feed the map block tau(x) for every stream

  std::uint64_t seed = 1;
  int checkpoint_every = 500;
  int train_pool = 256;  // procedural training images

  void validate() const {
    if (iterations <= 0) throw std::invalid_argument("train config: iterations must be > 0");
    if (batch_size < 2)
      throw std::invalid_argument("train config: batch_size must be >= 2 (diversity loss "
                                  "needs pairs)");
    if (degradation_p_max < 0.0f || degradation_p_max > 1.0f)
      throw std::invalid_argument("train config: degradation_p_max outside [0,1]");
  }
};

struct TrainingDivergence : std::runtime_error {
  LossBreakdown losses;
  TrainingDivergence(const std::string& msg, LossBreakdown lb)
      : std::runtime_error(msg), losses(lb) {}
};

// Linear ramp: probability of degrading grows from 0 to p_max over the run,
// intensity from a 0.25 floor to full level.
struct DegradationScheduler {
  float p_max = 0.5f;

  std::pair<float, float> schedule(int iter, int total) const {
    if (iter < 0 || iter > total)
      throw std::invalid_argument("schedule: iteration " + std::to_string(iter) +
                                  " outside [0," + std::to_string(total) + "]");
    const float t = total > 0 ? static_cast<float>(iter) / static_cast<float>(total) : 0.0f;
    return {p_max * t, 0.25f + 0.75f * t};
  }

  static DegradationSpec spec_for(DegradationKind kind, float intensity,
                                  const TrainConfig& cfg) {
    DegradationSpec spec;
    spec.kind = kind;
    switch (kind) {
      case DegradationKind::jpeg:
        spec.level = std::round(100.0f - intensity * (100.0f - cfg.jpeg_quality_floor));
        break;
      case DegradationKind::blur: {
        int size = static_cast<int>(std::lround(intensity * cfg.blur_max_size));
        if (size < 3) size = 3;
        if (size % 2 == 0) ++size;
        spec.level = static_cast<float>(size);
        break;
      }
      case DegradationKind::noise:
        spec.level = intensity * cfg.noise_max_sigma;
        break;
      case DegradationKind::lowres:
        spec.level = 1.0f + intensity * (cfg.lowres_max_factor - 1.0f);
        break;
    }
    return spec;
  }
};

class Trainer {
 public:
  Trainer(PADLModel& model, const TrainConfig& cfg)
      : model_(model), cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    AdamW::Config oc;
    oc.lr = cfg_.learning_rate;
    oc.beta1 = cfg_.beta1;
    oc.beta2 = cfg_.beta2;
    oc.weight_decay = cfg_.weight_decay;
    std::vector<Tensor> params;
    model_.visit_params([&](const std::string&, Tensor& t) { params.push_back(t); });
    opt_ = AdamW(std::move(params), oc);
    scheduler_.p_max = cfg_.degradation_p_max;
    degradation_counts_.assign(4, 0);
  }

  // One optimization step over a [B,C,H,W] batch of real images.
  LossBreakdown train_step(const Tensor& batch) {
    const int B = batch.dim(0);

    Tensor delta_e = model_.encode_perturbation(batch);
    Tensor tau = add(batch, mul_scalar(delta_e, model_.cfg.alpha));

    // Degradation, scheduled on the current iteration. The degraded image is
    // a detached leaf: protected-stream gradients reach the encoder only on
    // clean steps, matching the no-gradient contract of degrade().
    auto [p_deg, intensity] = scheduler_.schedule(iter_, cfg_.iterations);
    Tensor tau_used = tau;
    if (!cfg_.degradations.empty() && rng_.uniform() < p_deg) {
      const int pick = rng_.uniform_int(0, static_cast<int>(cfg_.degradations.size()) - 1);
      const DegradationKind kind = cfg_.degradations[pick];
      degradation_counts_[static_cast<int>(kind)]++;
      tau_used = degrade(tau.detach(), DegradationScheduler::spec_for(kind, intensity, cfg_),
                         rng_);
    }

    // Toy generative model, detached from the graph.
    std::vector<ManipulationSpec> specs;
    specs.reserve(B);
    for (int b = 0; b < B; ++b)
      specs.push_back(random_manipulation_spec(rng_, model_.cfg.image_height,
                                               model_.cfg.image_width));
    Tensor manipulated = toy_manipulate_each(tau_used.detach(), specs);
    Tensor gt_map = ground_truth_map(tau_used.detach(), manipulated);

    Tensor raw = cfg_.enable_noise_injection
                     ? inject_detection_noise(batch, rng_, cfg_.noise_inject_prob,
                                              cfg_.noise_sigma_min, cfg_.noise_sigma_max)
                     : batch;

    Tensor delta_g = model_.decode_perturbation(manipulated);
    Tensor delta_tau = model_.decode_perturbation(tau_used);
    Tensor delta_raw = model_.decode_perturbation(raw);

    const Tensor& img_g = cfg_.algorithm1_literal ? tau_used : manipulated;
    const Tensor& img_tau = tau_used;
    const Tensor& img_raw = cfg_.algorithm1_literal ? tau_used : raw;
    MapBlockOutput out_g = model_.map_block(img_g, delta_g);
    MapBlockOutput out_tau = model_.map_block(img_tau, delta_tau);
    MapBlockOutput out_raw = model_.map_block(img_raw, delta_raw);

    Tensor rec = l_rec(delta_e, delta_tau);
    Tensor map_loss = l_map(gt_map, out_g.map);
    if (cfg_.supervise_clean_maps) {
      Tensor zero_gt(gt_map.shape(), 0.0f);
      map_loss = mul_scalar(add(map_loss, l_map(zero_gt, out_tau.map)), 0.5f);
    }
    Tensor diversity = cfg_.enable_l_div ? l_div(delta_e) : Tensor::scalar(0.0f);

    Tensor logits = concat({out_g.cls_logit, out_tau.cls_logit, out_raw.cls_logit}, 0);
    Tensor labels(Shape{3 * B, 1}, 0.0f);
    for (int b = 0; b < B; ++b) labels.data()[B + b] = 1.0f;
    Tensor bce = l_bce(logits, labels);

    Tensor total = add(add(rec, map_loss), add(diversity, bce));

    LossBreakdown lb;
    lb.rec = rec.item();
    lb.map = map_loss.item();
    lb.div = diversity.item();
    lb.bce = bce.item();
    lb.total = total.item();
    if (!lb.finite()) {
      std::ostringstream os;
      os << "non-finite loss at iteration " << iter_ << ": rec=" << lb.rec
         << " map=" << lb.map << " div=" << lb.div << " bce=" << lb.bce;
      throw TrainingDivergence(os.str(), lb);
    }

    opt_.zero_grad();
    backward(total);
    opt_.step();
    ++iter_;
    return lb;
  }

  // Full run over a pool of toy images. log_fn(iter, LossBreakdown) fires per
  // step; checkpoint_fn(iter) at every checkpoint_every and at the end.
  template <typename LogFn, typename CkptFn>
  void run(const Tensor& pool, LogFn&& log_fn, CkptFn&& checkpoint_fn) {
    const int N = pool.dim(0);
    const int C = pool.dim(1), H = pool.dim(2), W = pool.dim(3);
    for (int it = iter_; it < cfg_.iterations; ++it) {
      Tensor batch({cfg_.batch_size, C, H, W});
      for (int b = 0; b < cfg_.batch_size; ++b) {
        const int pick = rng_.uniform_int(0, N - 1);
        std::memcpy(batch.data() + static_cast<std::size_t>(b) * C * H * W,
                    pool.data() + static_cast<std::size_t>(pick) * C * H * W,
                    sizeof(float) * C * H * W);
      }
      LossBreakdown lb = train_step(batch);
      log_fn(it, lb);
      if (cfg_.checkpoint_every > 0 && (it + 1) % cfg_.checkpoint_every == 0 &&
          it + 1 < cfg_.iterations)
        checkpoint_fn(it + 1);
    }
    checkpoint_fn(cfg_.iterations);
  }

  int iteration() const { return iter_; }
  Rng& rng() { return rng_; }
  AdamW& optimizer() { return opt_; }
  const TrainConfig& config() const { return cfg_; }
  const DegradationScheduler& scheduler() const { return scheduler_; }
  // draws per degradation kind, indexed by DegradationKind
  const std::vector<int>& degradation_counts() const { return degradation_counts_; }

 private:
  PADLModel& model_;
  TrainConfig cfg_;
  Rng rng_;
  AdamW opt_;
  DegradationScheduler scheduler_;
  std::vector<int> degradation_counts_;
  int iter_ = 0;
};

// Leave-one-out configuration for the degradation-robustness protocol: train
// with every kind except the excluded one.
inline TrainConfig leave_one_out_config(TrainConfig base, DegradationKind excluded) {
  std::vector<DegradationKind> kept;
  for (DegradationKind k :
       {DegradationKind::jpeg, DegradationKind::blur, DegradationKind::noise,
        DegradationKind::lowres})
    if (k != excluded) kept.push_back(k);
  base.degradations = kept;
  return base;
}

}  // namespace padl
