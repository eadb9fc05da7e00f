#pragma once

// Minimal PNG report panels: score histograms, robustness curves and
// image/map overlays. Just enough rasterization for the eval reports.

#include "padl/image_io.hpp"

namespace padl {

class Canvas {
 public:
  Canvas(int width, int height, float r = 1.0f, float g = 1.0f, float b = 1.0f)
      : w_(width), h_(height), img_({1, 3, height, width}, 0.0f) {
    fill_rect(0, 0, width, height, r, g, b);
  }

  int width() const { return w_; }
  int height() const { return h_; }

  void set_pixel(int x, int y, float r, float g, float b) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    float* p = img_.data();
    p[(0 * h_ + y) * w_ + x] = r;
    p[(1 * h_ + y) * w_ + x] = g;
    p[(2 * h_ + y) * w_ + x] = b;
  }

  void fill_rect(int x, int y, int w, int h, float r, float g, float b) {
    for (int yy = y; yy < y + h; ++yy)
      for (int xx = x; xx < x + w; ++xx) set_pixel(xx, yy, r, g, b);
  }

  void line(int x0, int y0, int x1, int y1, float r, float g, float b) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set_pixel(x0, y0, r, g, b);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void blit(const Tensor& image, int x, int y, int scale = 1) {
    const int C = image.dim(1), H = image.dim(2), W = image.dim(3);
    for (int yy = 0; yy < H * scale; ++yy)
      for (int xx = 0; xx < W * scale; ++xx) {
        const int sy = yy / scale, sx = xx / scale;
        const float r = image.data()[(0 * H + sy) * W + sx];
        const float g = image.data()[((C > 1 ? 1 : 0) * H + sy) * W + sx];
        const float b = image.data()[((C > 1 ? 2 : 0) * H + sy) * W + sx];
        set_pixel(x + xx, y + yy, clamp01(r), clamp01(g), clamp01(b));
      }
  }

  void save(const std::string& path) const { png_write_rgb(path, img_); }

 private:
  int w_, h_;
  Tensor img_;
};

inline void fill_two(Canvas& canvas, int x, int base, int bar, int ph, int nh) {
  canvas.fill_rect(x + 1, base - ph, bar / 2 - 1, ph, 0.20f, 0.45f, 0.85f);
  canvas.fill_rect(x + bar / 2 + 1, base - nh, bar / 2 - 1, nh, 0.85f, 0.35f, 0.25f);
}

// Two-population histogram of scores in [0,1].
inline void plot_score_histogram(const std::string& path, const std::vector<float>& pos,
                                 const std::vector<float>& neg, int bins = 20) {
  const int W = 420, H = 240, margin = 30;
  Canvas canvas(W, H);
  std::vector<int> hp(bins, 0), hn(bins, 0);
  for (float s : pos) hp[std::min(bins - 1, static_cast<int>(s * bins))]++;
  for (float s : neg) hn[std::min(bins - 1, static_cast<int>(s * bins))]++;
  int peak = 1;
  for (int i = 0; i < bins; ++i) peak = std::max({peak, hp[i], hn[i]});
  const int plot_w = W - 2 * margin, plot_h = H - 2 * margin;
  const int bar = plot_w / bins;
  for (int i = 0; i < bins; ++i) {
    const int x = margin + i * bar;
    const int ph = hp[i] * plot_h / peak;
    const int nh = hn[i] * plot_h / peak;
    fill_two(canvas, x, H - margin, bar, ph, nh);
  }
  canvas.line(margin, H - margin, W - margin, H - margin, 0, 0, 0);
  canvas.line(margin, margin, margin, H - margin, 0, 0, 0);
  canvas.save(path);
}

// Fraction-vs-sigma curve (e.g. noisy unprotected images called protected).
inline void plot_curve(const std::string& path, const std::vector<float>& xs,
                       const std::vector<double>& ys) {
  const int W = 420, H = 240, margin = 30;
  Canvas canvas(W, H);
  canvas.line(margin, H - margin, W - margin, H - margin, 0, 0, 0);
  canvas.line(margin, margin, margin, H - margin, 0, 0, 0);
  if (xs.size() < 2) {
    canvas.save(path);
    return;
  }
  const float x_max = *std::max_element(xs.begin(), xs.end());
  auto px = [&](float x) {
    return margin + static_cast<int>((W - 2 * margin) * (x_max > 0 ? x / x_max : 0));
  };
  auto py = [&](double y) { return H - margin - static_cast<int>((H - 2 * margin) * y); };
  for (std::size_t i = 1; i < xs.size(); ++i)
    canvas.line(px(xs[i - 1]), py(ys[i - 1]), px(xs[i]), py(ys[i]), 0.20f, 0.45f, 0.85f);
  canvas.save(path);
}

// Side-by-side panel: image, predicted map, optional ground truth.
inline void plot_map_overlay(const std::string& path, const Tensor& image, const Tensor& map,
                             const Tensor* gt = nullptr, int scale = 3) {
  const int H = image.dim(2), W = image.dim(3);
  const int panels = gt ? 3 : 2;
  const int pad = 6;
  Canvas canvas(panels * (W * scale + pad) + pad, H * scale + 2 * pad, 0.92f, 0.92f, 0.92f);
  canvas.blit(image, pad, pad, scale);
  canvas.blit(map, pad + (W * scale + pad), pad, scale);
  if (gt) canvas.blit(*gt, pad + 2 * (W * scale + pad), pad, scale);
  canvas.save(path);
}

}  // namespace padl
