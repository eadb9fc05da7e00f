#pragma once

// Detection metrics, pooled pixel-level localization AUC, the
// detection-conditioned localization protocol, robustness sweeps and
// protection quality. AUC uses the rank statistic with ties counted 0.5,
// which the substituted all-zero maps of the protocol rely on.

#include <optional>

#include <nlohmann/json.hpp>

#include "padl/manipulator.hpp"
#include "padl/model.hpp"

namespace padl {

// Area under the ROC curve via midranks. Exactly the fraction of
// positive-negative pairs ranked correctly, ties contributing one half.
// Absent when only one class is present.
inline std::optional<double> auc_score(const std::vector<float>& scores,
                                       const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auc: " + std::to_string(scores.size()) + " scores vs " +
                                std::to_string(labels.size()) + " labels");
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int l : labels) pos += l ? 1 : 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum_pos += mid_rank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(pos) * (pos + 1);
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

inline double accuracy(const std::vector<float>& scores, const std::vector<int>& labels,
                       float threshold = 0.5f) {
  if (scores.empty()) throw std::invalid_argument("accuracy: empty inputs");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    correct += ((scores[i] > threshold) ? 1 : 0) == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

struct DetectionMetrics {
  double accuracy = 0.0;
  std::optional<double> auc;
};

inline DetectionMetrics detection_metrics(const std::vector<float>& scores,
                                          const std::vector<int>& labels) {
  DetectionMetrics m;
  m.accuracy = accuracy(scores, labels);
  m.auc = auc_score(scores, labels);
  return m;
}

// Pooled pixel AUC: one global ranking over every pixel of every image.
// Pixel labels come from thresholding the continuous ground truth at t.
inline std::optional<double> pixel_auc(const std::vector<Tensor>& gt_maps,
                                       const std::vector<Tensor>& pred_maps, float t) {
  if (t <= 0.0f || t >= 1.0f)
    throw std::invalid_argument("pixel_auc: threshold " + std::to_string(t) +
                                " outside (0,1)");
  if (gt_maps.size() != pred_maps.size())
    throw std::invalid_argument("pixel_auc: map count mismatch");
  std::vector<float> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < gt_maps.size(); ++i) {
    if (gt_maps[i].numel() != pred_maps[i].numel())
      throw std::invalid_argument("pixel_auc: map " + std::to_string(i) + " shapes differ, " +
                                  shape_str(gt_maps[i].shape()) + " vs " +
                                  shape_str(pred_maps[i].shape()));
    const float* g = gt_maps[i].data();
    const float* p = pred_maps[i].data();
    for (std::size_t j = 0; j < gt_maps[i].numel(); ++j) {
      labels.push_back(g[j] >= t ? 1 : 0);
      scores.push_back(p[j]);
    }
  }
  return auc_score(scores, labels);
}

// ---------------------------------------------------------------------------
// Conditioned localization protocol: maps are substituted according to the
// detector's verdict, then pooled. Every sample contributes the same pixel
// count whether or not the detector was right.

struct ConditionedSample {
  bool is_manipulated_gt = false;
  bool detected_manipulated = false;
  Tensor gt_map;    // [1,1,H,W], all-zero for clean samples
  Tensor pred_map;  // [1,1,H,W]
};

enum class Scenario {
  manipulated_detected,
  manipulated_missed,
  clean_correct,
  clean_false_alarm
};

inline Scenario classify(const ConditionedSample& s) {
  if (s.is_manipulated_gt)
    return s.detected_manipulated ? Scenario::manipulated_detected
                                  : Scenario::manipulated_missed;
  return s.detected_manipulated ? Scenario::clean_false_alarm : Scenario::clean_correct;
}

struct ConditionedResult {
  std::vector<float> thresholds;
  std::vector<std::optional<double>> auc;  // per threshold
  std::size_t pooled_pixels = 0;
  std::size_t scenario_counts[4] = {0, 0, 0, 0};
};

inline std::pair<Tensor, Tensor> substituted_maps(const ConditionedSample& s) {
  Tensor zeros(s.pred_map.shape(), 0.0f);
  switch (classify(s)) {
    case Scenario::manipulated_detected: return {s.gt_map, s.pred_map};
    case Scenario::manipulated_missed: return {s.gt_map, zeros};
    case Scenario::clean_correct: return {zeros, zeros};
    case Scenario::clean_false_alarm: return {zeros, s.pred_map};
  }
  throw std::logic_error("substituted_maps: unreachable");
}

inline ConditionedResult conditioned_protocol(const std::vector<ConditionedSample>& samples,
                                              const std::vector<float>& thresholds = {0.1f, 0.25f,
                                                                                      0.5f}) {
  ConditionedResult res;
  res.thresholds = thresholds;
  std::vector<Tensor> gts, preds;
  for (const auto& s : samples) {
    auto [g, p] = substituted_maps(s);
    gts.push_back(g);
    preds.push_back(p);
    res.pooled_pixels += p.numel();
    res.scenario_counts[static_cast<int>(classify(s))]++;
  }
  for (float t : thresholds) res.auc.push_back(pixel_auc(gts, preds, t));
  return res;
}

// ---------------------------------------------------------------------------
// Quality and robustness

inline double protection_quality(const Tensor& x, const Tensor& protected_x) {
  if (x.shape() != protected_x.shape())
    throw std::invalid_argument("protection_quality: " + shape_str(x.shape()) + " vs " +
                                shape_str(protected_x.shape()));
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = static_cast<double>(x.data()[i]) - protected_x.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(x.numel());
}

using DetectFn = std::function<DetectionResult(const Tensor&)>;
using ProtectFn = std::function<Tensor(const Tensor&)>;

// Fraction of noisy unprotected images the detector calls protected, per
// sigma. A robust defense keeps the whole curve near zero.
inline std::vector<double> noise_robustness_sweep(const DetectFn& detect, const Tensor& images,
                                                  const std::vector<float>& sigmas, Rng& rng) {
  std::vector<double> fractions;
  const int B = images.dim(0);
  for (float sigma : sigmas) {
    Tensor noisy = images.detach();
    if (sigma > 0.0f)
      for (auto& v : noisy.vec()) v = clamp01(v + rng.normal(0.0f, sigma));
    DetectionResult res = detect(noisy);
    std::size_t hits = 0;
    for (int b = 0; b < B; ++b) hits += res.protected_intact[b] ? 1 : 0;
    fractions.push_back(static_cast<double>(hits) / static_cast<double>(B));
  }
  return fractions;
}

// ---------------------------------------------------------------------------
// Full report

struct EvalReport {
  double detection_accuracy = 0.0;
  std::optional<double> detection_auc;
  std::vector<float> loc_thresholds;
  std::vector<std::optional<double>> loc_auc;
  double mse_quality = 0.0;
  std::size_t scenario_counts[4] = {0, 0, 0, 0};
  std::size_t n_protected = 0, n_raw = 0, n_manipulated = 0;
  std::size_t pooled_pixels = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["detection"]["accuracy"] = detection_accuracy;
    if (detection_auc)
      j["detection"]["auc"] = *detection_auc;
    else
      j["detection"]["auc"] = nullptr;
    for (std::size_t i = 0; i < loc_thresholds.size(); ++i) {
      nlohmann::json entry;
      entry["threshold"] = loc_thresholds[i];
      if (loc_auc[i])
        entry["auc"] = *loc_auc[i];
      else
        entry["auc"] = nullptr;
      j["localization"].push_back(entry);
    }
    j["quality"]["mse"] = mse_quality;
    j["scenarios"]["manipulated_detected"] = scenario_counts[0];
    j["scenarios"]["manipulated_missed"] = scenario_counts[1];
    j["scenarios"]["clean_correct"] = scenario_counts[2];
    j["scenarios"]["clean_false_alarm"] = scenario_counts[3];
    j["counts"]["protected"] = n_protected;
    j["counts"]["raw"] = n_raw;
    j["counts"]["manipulated"] = n_manipulated;
    j["counts"]["pooled_pixels"] = pooled_pixels;
    return j;
  }
};

namespace detail {
inline Tensor single_image(const Tensor& batch, int index) {
  const int C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  Tensor one({1, C, H, W});
  std::memcpy(one.data(), batch.data() + static_cast<std::size_t>(index) * C * H * W,
              sizeof(float) * C * H * W);
  return one;
}
}  // namespace detail

// Balanced evaluation over a pool of held-out real images: every image is
// protected; half the protected copies are manipulated. Detection accuracy
// covers protected / raw / manipulated; localization runs the conditioned
// protocol over the protected (clean) and manipulated samples.
inline EvalReport run_full_evaluation(const ProtectFn& protect, const DetectFn& detect,
                                      const Tensor& raw_pool, Rng& rng,
                                      const std::vector<float>& thresholds = {0.1f, 0.25f, 0.5f}) {
  const int N = raw_pool.dim(0);
  if (N < 2) throw std::invalid_argument("evaluation: need at least 2 images");
  const int H = raw_pool.dim(2), W = raw_pool.dim(3);

  Tensor protected_all = protect(raw_pool);

  // manipulate the second half of the protected images
  const int n_manip = N / 2;
  const int n_clean = N - n_manip;
  std::vector<ManipulationSpec> specs;
  for (int i = 0; i < n_manip; ++i) specs.push_back(random_manipulation_spec(rng, H, W));

  Tensor clean_prot({n_clean, 3, H, W});
  std::memcpy(clean_prot.data(), protected_all.data(),
              sizeof(float) * static_cast<std::size_t>(n_clean) * 3 * H * W);
  Tensor manip_src({n_manip, 3, H, W});
  std::memcpy(manip_src.data(),
              protected_all.data() + static_cast<std::size_t>(n_clean) * 3 * H * W,
              sizeof(float) * static_cast<std::size_t>(n_manip) * 3 * H * W);
  Tensor manipulated = toy_manipulate_each(manip_src, specs);
  Tensor gt_maps = ground_truth_map(manip_src, manipulated);

  DetectionResult det_clean = detect(clean_prot);
  DetectionResult det_manip = detect(manipulated);
  DetectionResult det_raw = detect(raw_pool);

  EvalReport report;
  report.n_protected = static_cast<std::size_t>(n_clean);
  report.n_manipulated = static_cast<std::size_t>(n_manip);
  report.n_raw = static_cast<std::size_t>(N);

  std::vector<float> scores;
  std::vector<int> labels;
  for (int i = 0; i < n_clean; ++i) {
    scores.push_back(det_clean.scores[i]);
    labels.push_back(1);
  }
  for (int i = 0; i < n_manip; ++i) {
    scores.push_back(det_manip.scores[i]);
    labels.push_back(0);
  }
  for (int i = 0; i < N; ++i) {
    scores.push_back(det_raw.scores[i]);
    labels.push_back(0);
  }
  DetectionMetrics dm = detection_metrics(scores, labels);
  report.detection_accuracy = dm.accuracy;
  report.detection_auc = dm.auc;

  std::vector<ConditionedSample> samples;
  for (int i = 0; i < n_clean; ++i) {
    ConditionedSample s;
    s.is_manipulated_gt = false;
    s.detected_manipulated = det_clean.protected_intact[i] == 0;
    s.gt_map = Tensor({1, 1, H, W}, 0.0f);
    s.pred_map = detail::single_image(det_clean.maps, i);
    samples.push_back(std::move(s));
  }
  for (int i = 0; i < n_manip; ++i) {
    ConditionedSample s;
    s.is_manipulated_gt = true;
    s.detected_manipulated = det_manip.protected_intact[i] == 0;
    s.gt_map = detail::single_image(gt_maps, i);
    s.pred_map = detail::single_image(det_manip.maps, i);
    samples.push_back(std::move(s));
  }
  ConditionedResult cond = conditioned_protocol(samples, thresholds);
  report.loc_thresholds = cond.thresholds;
  report.loc_auc = cond.auc;
  report.pooled_pixels = cond.pooled_pixels;
  for (int i = 0; i < 4; ++i) report.scenario_counts[i] = cond.scenario_counts[i];

  report.mse_quality = protection_quality(raw_pool, protected_all);
  return report;
}

}  // namespace padl
