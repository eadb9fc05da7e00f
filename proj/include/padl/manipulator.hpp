#pragma once

// Stand-in for the generative manipulator, plus ground-truth map construction
// and the degradation suite. Everything here is gradient-free by construction:
// outputs are fresh leaf tensors, so the tape never crosses a manipulation.

#include "padl/image_io.hpp"
#include "padl/tensor.hpp"

namespace padl {

struct Region {
  int x = 0, y = 0, w = 0, h = 0;
};

enum class ManipulationKind { none, region_recolor, local_blur, patch_swap };

struct ManipulationSpec {
  ManipulationKind kind = ManipulationKind::none;
  Region region;
  float strength = 1.0f;  // in [0,1]
  std::uint64_t seed = 0;
};

enum class DegradationKind { jpeg, blur, noise, lowres };

inline const char* to_string(DegradationKind k) {
  switch (k) {
    case DegradationKind::jpeg: return "jpeg";
    case DegradationKind::blur: return "blur";
    case DegradationKind::noise: return "noise";
    case DegradationKind::lowres: return "lowres";
  }
  return "?";
}

inline DegradationKind degradation_from_string(const std::string& s) {
  if (s == "jpeg") return DegradationKind::jpeg;
  if (s == "blur") return DegradationKind::blur;
  if (s == "noise") return DegradationKind::noise;
  if (s == "lowres") return DegradationKind::lowres;
  throw std::invalid_argument("unknown degradation kind: " + s);
}

struct DegradationSpec {
  DegradationKind kind = DegradationKind::noise;
  // jpeg: quality 1-100; blur: odd kernel size; noise: sigma >= 0;
  // lowres: downscale factor >= 1.
  float level = 0.0f;
};

// ---------------------------------------------------------------------------
// Gaussian blur (full image), sigma = size/3, reflect padding.

namespace detail {
inline int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

inline std::vector<float> gaussian_kernel(int size) {
  const float sigma = static_cast<float>(size) / 3.0f;
  const int c = size / 2;
  std::vector<float> k(size);
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const float d = static_cast<float>(i - c);
    k[i] = std::exp(-0.5f * d * d / (sigma * sigma));
    sum += k[i];
  }
  for (auto& v : k) v = static_cast<float>(v / sum);
  return k;
}
}  // namespace detail

inline Tensor gaussian_blur(const Tensor& x, int size) {
  if (size % 2 == 0 || size < 1)
    throw std::invalid_argument("gaussian_blur: kernel size must be odd, got " +
                                std::to_string(size));
  if (size == 1) return x.detach();
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::vector<float> k = detail::gaussian_kernel(size);
  const int r = size / 2;
  Tensor tmp({B, C, H, W}), out({B, C, H, W});
  const float* src = x.data();
  // horizontal then vertical pass
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const float* plane = src + (static_cast<std::size_t>(b) * C + c) * H * W;
      float* tplane = tmp.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
      for (int y = 0; y < H; ++y)
        for (int xo = 0; xo < W; ++xo) {
          double acc = 0.0;
          for (int t = -r; t <= r; ++t)
            acc += static_cast<double>(k[t + r]) * plane[y * W + detail::reflect_index(xo + t, W)];
          tplane[y * W + xo] = static_cast<float>(acc);
        }
      float* oplane = out.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
      for (int y = 0; y < H; ++y)
        for (int xo = 0; xo < W; ++xo) {
          double acc = 0.0;
          for (int t = -r; t <= r; ++t)
            acc += static_cast<double>(k[t + r]) * tplane[detail::reflect_index(y + t, H) * W + xo];
          oplane[y * W + xo] = static_cast<float>(acc);
        }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Toy manipulations

namespace detail {
inline void check_region(const Region& r, int H, int W) {
  if (r.x < 0 || r.y < 0 || r.w <= 0 || r.h <= 0 || r.x + r.w > W || r.y + r.h > H)
    throw std::invalid_argument("manipulation region [" + std::to_string(r.x) + "," +
                                std::to_string(r.y) + " " + std::to_string(r.w) + "x" +
                                std::to_string(r.h) + "] outside " + std::to_string(W) + "x" +
                                std::to_string(H) + " image");
}
}  // namespace detail

// Applies the manipulation to every image of the batch. Pixels outside the
// region are untouched; no gradients flow (output is a fresh leaf).
inline Tensor toy_manipulate(const Tensor& x, const ManipulationSpec& spec) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (spec.kind == ManipulationKind::none) return x.detach();
  detail::check_region(spec.region, H, W);
  if (spec.strength < 0.0f || spec.strength > 1.0f)
    throw std::invalid_argument("manipulation strength " + std::to_string(spec.strength) +
                                " outside [0,1]");
  Tensor out = x.detach();
  Rng rng(spec.seed);
  const Region& rg = spec.region;
  const float s = spec.strength;

  switch (spec.kind) {
    case ManipulationKind::region_recolor: {
      float target[3];
      for (int c = 0; c < 3; ++c) target[c] = rng.uniform(0.05f, 0.95f);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          float* plane = out.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
          const float t = target[c % 3];
          for (int y = rg.y; y < rg.y + rg.h; ++y)
            for (int xo = rg.x; xo < rg.x + rg.w; ++xo)
              plane[y * W + xo] = (1.0f - s) * plane[y * W + xo] + s * t;
        }
      break;
    }
    case ManipulationKind::local_blur: {
      const int size = 3 + 2 * static_cast<int>(std::lround(s * 2.0f));  // 3, 5 or 7
      Tensor blurred = gaussian_blur(x, size);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          float* plane = out.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
          const float* bp = blurred.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
          for (int y = rg.y; y < rg.y + rg.h; ++y)
            for (int xo = rg.x; xo < rg.x + rg.w; ++xo)
              plane[y * W + xo] = bp[y * W + xo];
        }
      break;
    }
    case ManipulationKind::patch_swap: {
      // copy a same-size source window (chosen from the seed) into the region
      const int sx = rng.uniform_int(0, W - rg.w);
      const int sy = rng.uniform_int(0, H - rg.h);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const float* plane = x.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
          float* oplane = out.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
          for (int y = 0; y < rg.h; ++y)
            for (int xo = 0; xo < rg.w; ++xo) {
              const float src = plane[(sy + y) * W + sx + xo];
              float& dst = oplane[(rg.y + y) * W + rg.x + xo];
              dst = (1.0f - s) * dst + s * src;
            }
        }
      break;
    }
    case ManipulationKind::none:
      break;
  }
  return out;
}

// One random spec per image, manipulated-pixel fraction in [min_frac, max_frac].
inline ManipulationSpec random_manipulation_spec(Rng& rng, int H, int W,
                                                 float min_frac = 0.05f,
                                                 float max_frac = 0.5f) {
  ManipulationSpec spec;
  const int kinds[] = {1, 2, 3};
  spec.kind = static_cast<ManipulationKind>(kinds[rng.uniform_int(0, 2)]);
  const float frac = rng.uniform(min_frac, max_frac);
  const float aspect = rng.uniform(0.5f, 2.0f);
  int w = static_cast<int>(std::lround(std::sqrt(frac * H * W * aspect)));
  w = std::min(std::max(w, 2), W);
  int h = static_cast<int>(std::lround(frac * H * W / w));
  h = std::min(std::max(h, 2), H);
  spec.region.w = w;
  spec.region.h = h;
  spec.region.x = rng.uniform_int(0, W - w);
  spec.region.y = rng.uniform_int(0, H - h);
  spec.strength = rng.uniform(0.5f, 1.0f);
  spec.seed = rng.next_seed();
  return spec;
}

// Per-image specs over a batch.
inline Tensor toy_manipulate_each(const Tensor& x, const std::vector<ManipulationSpec>& specs) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (static_cast<int>(specs.size()) != B)
    throw std::invalid_argument("toy_manipulate_each: " + std::to_string(specs.size()) +
                                " specs for batch of " + std::to_string(B));
  Tensor out({B, C, H, W});
  for (int b = 0; b < B; ++b) {
    Tensor one({1, C, H, W});
    std::memcpy(one.data(), x.data() + static_cast<std::size_t>(b) * C * H * W,
                sizeof(float) * C * H * W);
    Tensor m = toy_manipulate(one, specs[b]);
    std::memcpy(out.data() + static_cast<std::size_t>(b) * C * H * W, m.data(),
                sizeof(float) * C * H * W);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ground-truth map: grayscale of the absolute difference. Inputs live in
// [0,1], which absorbs the 8-bit normalization factor.

inline Tensor ground_truth_map(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("ground_truth_map: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const int B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  if (C != 3)
    throw std::invalid_argument("ground_truth_map: expected 3 channels, got " +
                                shape_str(a.shape()));
  Tensor out({B, 1, H, W});
  const float wr = 0.299f, wg = 0.587f, wb = 0.114f;
  for (int bi = 0; bi < B; ++bi) {
    const float* pa = a.data() + static_cast<std::size_t>(bi) * C * H * W;
    const float* pb = b.data() + static_cast<std::size_t>(bi) * C * H * W;
    float* po = out.data() + static_cast<std::size_t>(bi) * H * W;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (std::size_t i = 0; i < plane; ++i)
      po[i] = wr * std::abs(pa[i] - pb[i]) + wg * std::abs(pa[plane + i] - pb[plane + i]) +
              wb * std::abs(pa[2 * plane + i] - pb[2 * plane + i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Degradations

inline void validate(const DegradationSpec& spec) {
  switch (spec.kind) {
    case DegradationKind::jpeg:
      if (spec.level < 1.0f || spec.level > 100.0f)
        throw std::invalid_argument("jpeg quality " + std::to_string(spec.level) +
                                    " outside [1,100]");
      break;
    case DegradationKind::blur: {
      const int size = static_cast<int>(spec.level);
      if (size < 1 || size % 2 == 0)
        throw std::invalid_argument("blur kernel size " + std::to_string(size) +
                                    " must be odd and positive");
      break;
    }
    case DegradationKind::noise:
      if (spec.level < 0.0f)
        throw std::invalid_argument("noise sigma must be nonnegative");
      break;
    case DegradationKind::lowres:
      if (spec.level < 1.0f)
        throw std::invalid_argument("lowres factor must be >= 1");
      break;
  }
}

inline Tensor degrade(const Tensor& x, const DegradationSpec& spec, Rng& rng) {
  validate(spec);
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  switch (spec.kind) {
    case DegradationKind::jpeg: {
      Tensor out({B, C, H, W});
      for (int b = 0; b < B; ++b) {
        Tensor one({1, C, H, W});
        std::memcpy(one.data(), x.data() + static_cast<std::size_t>(b) * C * H * W,
                    sizeof(float) * C * H * W);
        Tensor dec = jpeg_roundtrip(one, static_cast<int>(spec.level));
        std::memcpy(out.data() + static_cast<std::size_t>(b) * C * H * W, dec.data(),
                    sizeof(float) * C * H * W);
      }
      return out;
    }
    case DegradationKind::blur:
      return gaussian_blur(x, static_cast<int>(spec.level));
    case DegradationKind::noise: {
      Tensor out = x.detach();
      if (spec.level > 0.0f)
        for (auto& v : out.vec()) v = clamp01(v + rng.normal(0.0f, spec.level));
      return out;
    }
    case DegradationKind::lowres: {
      const int lh = std::max(1, static_cast<int>(std::lround(H / spec.level)));
      const int lw = std::max(1, static_cast<int>(std::lround(W / spec.level)));
      return bilinear_resize(bilinear_resize(x, lh, lw), H, W);
    }
  }
  throw std::logic_error("degrade: unreachable");
}

// ---------------------------------------------------------------------------
// Procedural toy images: smooth color gradients with a few geometric shapes.

inline Tensor toy_image(std::uint64_t seed, int H, int W) {
  Rng rng(seed);
  Tensor img({1, 3, H, W});
  float corners[4][3];
  for (auto& corner : corners)
    for (float& c : corner) c = rng.uniform(0.05f, 0.95f);
  float* p = img.data();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y) {
      const float fy = H > 1 ? static_cast<float>(y) / (H - 1) : 0.0f;
      for (int x = 0; x < W; ++x) {
        const float fx = W > 1 ? static_cast<float>(x) / (W - 1) : 0.0f;
        const float top = corners[0][c] * (1 - fx) + corners[1][c] * fx;
        const float bot = corners[2][c] * (1 - fx) + corners[3][c] * fx;
        p[(static_cast<std::size_t>(c) * H + y) * W + x] = top * (1 - fy) + bot * fy;
      }
    }
  const int shapes = rng.uniform_int(1, 3);
  for (int s = 0; s < shapes; ++s) {
    float color[3];
    for (float& c : color) c = rng.uniform(0.0f, 1.0f);
    if (rng.uniform() < 0.5f) {
      const int w = rng.uniform_int(W / 8, W / 2);
      const int h = rng.uniform_int(H / 8, H / 2);
      const int x0 = rng.uniform_int(0, W - w);
      const int y0 = rng.uniform_int(0, H - h);
      for (int c = 0; c < 3; ++c)
        for (int y = y0; y < y0 + h; ++y)
          for (int x = x0; x < x0 + w; ++x)
            p[(static_cast<std::size_t>(c) * H + y) * W + x] = color[c];
    } else {
      const int r = rng.uniform_int(std::max(2, H / 10), H / 3);
      const int cx = rng.uniform_int(0, W - 1);
      const int cy = rng.uniform_int(0, H - 1);
      for (int c = 0; c < 3; ++c)
        for (int y = std::max(0, cy - r); y <= std::min(H - 1, cy + r); ++y)
          for (int x = std::max(0, cx - r); x <= std::min(W - 1, cx + r); ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
              p[(static_cast<std::size_t>(c) * H + y) * W + x] = color[c];
    }
  }
  return img;
}

inline Tensor toy_batch(std::uint64_t seed_base, int count, int H, int W) {
  Tensor out({count, 3, H, W});
  for (int i = 0; i < count; ++i) {
    Tensor img = toy_image(seed_base + static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ull,
                           H, W);
    std::memcpy(out.data() + static_cast<std::size_t>(i) * 3 * H * W, img.data(),
                sizeof(float) * 3 * H * W);
  }
  return out;
}

}  // namespace padl
