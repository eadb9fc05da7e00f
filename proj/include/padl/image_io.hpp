#pragma once

// PNG and JPEG codecs plus resampling. Images move through the pipeline as
// [B,C,H,W] float tensors in [0,1]; 8-bit quantization happens only here.

#include <csetjmp>
#include <cstdio>

#include <jpeglib.h>
#include <png.h>

#include "padl/tensor.hpp"

namespace padl {

inline float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

inline std::uint8_t quantize8(float v) {
  return static_cast<std::uint8_t>(std::lround(clamp01(v) * 255.0f));
}

// [1,C,H,W] float -> interleaved RGB8 (C=1 replicates the channel).
inline std::vector<std::uint8_t> to_rgb8(const Tensor& img) {
  if (img.ndim() != 4 || img.dim(0) != 1)
    throw std::invalid_argument("to_rgb8: expected single image [1,C,H,W], got " +
                                shape_str(img.shape()));
  const int C = img.dim(1), H = img.dim(2), W = img.dim(3);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(H) * W * 3);
  const float* p = img.data();
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        const int src_c = C == 1 ? 0 : c;
        out[(static_cast<std::size_t>(y) * W + x) * 3 + c] =
            quantize8(p[(static_cast<std::size_t>(src_c) * H + y) * W + x]);
      }
  return out;
}

inline Tensor from_rgb8(const std::uint8_t* rgb, int H, int W) {
  Tensor img({1, 3, H, W});
  float* p = img.data();
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        p[(static_cast<std::size_t>(c) * H + y) * W + x] =
            rgb[(static_cast<std::size_t>(y) * W + x) * 3 + c] / 255.0f;
  return img;
}

// ---------------------------------------------------------------------------
// PNG

inline void png_write_rgb(const std::string& path, const Tensor& img) {
  std::vector<std::uint8_t> rgb = to_rgb8(img);
  const int H = img.dim(2), W = img.dim(3);
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("png write: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("png write: encode failure for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, W, H, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < H; ++y)
    png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * W * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

// Grayscale export for manipulation maps ([1,1,H,W]).
inline void png_write_gray(const std::string& path, const Tensor& map) {
  if (map.ndim() != 4 || map.dim(0) != 1 || map.dim(1) != 1)
    throw std::invalid_argument("png_write_gray: expected [1,1,H,W], got " +
                                shape_str(map.shape()));
  const int H = map.dim(2), W = map.dim(3);
  std::vector<std::uint8_t> gray(static_cast<std::size_t>(H) * W);
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = quantize8(map.data()[i]);
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("png write: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("png write: encode failure for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, W, H, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < H; ++y)
    png_write_row(png, gray.data() + static_cast<std::size_t>(y) * W);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline Tensor png_read(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("png read: cannot open " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    std::fclose(fp);
    throw std::runtime_error("png read: " + path + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("png read: decode failure for " + path);
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int W = static_cast<int>(png_get_image_width(png, info));
  const int H = static_cast<int>(png_get_image_height(png, info));
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(H) * W * 3);
  for (int y = 0; y < H; ++y)
    png_read_row(png, rgb.data() + static_cast<std::size_t>(y) * W * 3, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return from_rgb8(rgb.data(), H, W);
}

// ---------------------------------------------------------------------------
// JPEG (baseline JFIF, in-memory)

namespace detail {
struct JpegErrorMgr {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};
inline void jpeg_error_throw(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(err->jump, 1);
}
}  // namespace detail

inline std::vector<std::uint8_t> jpeg_encode(const Tensor& img, int quality) {
  std::vector<std::uint8_t> rgb = to_rgb8(img);
  const int H = img.dim(2), W = img.dim(3);

  jpeg_compress_struct cinfo;
  detail::JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = detail::jpeg_error_throw;
  unsigned char* buf = nullptr;
  unsigned long buf_len = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    if (buf) free(buf);
    throw std::runtime_error("jpeg encode failed");
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buf, &buf_len);
  cinfo.image_width = W;
  cinfo.image_height = H;
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = rgb.data() + static_cast<std::size_t>(cinfo.next_scanline) * W * 3;
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<std::uint8_t> out(buf, buf + buf_len);
  jpeg_destroy_compress(&cinfo);
  free(buf);
  return out;
}

inline Tensor jpeg_decode(const std::vector<std::uint8_t>& bytes) {
  jpeg_decompress_struct cinfo;
  detail::JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = detail::jpeg_error_throw;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw std::runtime_error("jpeg decode failed");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), bytes.size());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int W = static_cast<int>(cinfo.output_width);
  const int H = static_cast<int>(cinfo.output_height);
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(H) * W * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * W * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_rgb8(rgb.data(), H, W);
}

inline Tensor jpeg_roundtrip(const Tensor& img, int quality) {
  return jpeg_decode(jpeg_encode(img, quality));
}

// ---------------------------------------------------------------------------
// Bilinear resampling of [B,C,H,W] to a new spatial size.

inline Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  if (x.ndim() != 4)
    throw std::invalid_argument("bilinear_resize: expected [B,C,H,W], got " +
                                shape_str(x.shape()));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (out_h == H && out_w == W) return x.detach();
  Tensor out({B, C, out_h, out_w});
  const float sy = static_cast<float>(H) / out_h;
  const float sx = static_cast<float>(W) / out_w;
  const float* src = x.data();
  float* dst = out.data();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const float* plane = src + (static_cast<std::size_t>(b) * C + c) * H * W;
      float* oplane = dst + (static_cast<std::size_t>(b) * C + c) * out_h * out_w;
      for (int y = 0; y < out_h; ++y) {
        const float fy = (y + 0.5f) * sy - 0.5f;
        int y0 = static_cast<int>(std::floor(fy));
        const float wy = fy - y0;
        const int y1 = std::min(std::max(y0 + 1, 0), H - 1);
        y0 = std::min(std::max(y0, 0), H - 1);
        for (int xo = 0; xo < out_w; ++xo) {
          const float fx = (xo + 0.5f) * sx - 0.5f;
          int x0 = static_cast<int>(std::floor(fx));
          const float wx = fx - x0;
          const int x1 = std::min(std::max(x0 + 1, 0), W - 1);
          x0 = std::min(std::max(x0, 0), W - 1);
          const float top = plane[y0 * W + x0] * (1 - wx) + plane[y0 * W + x1] * wx;
          const float bot = plane[y1 * W + x0] * (1 - wx) + plane[y1 * W + x1] * wx;
          oplane[y * out_w + xo] = top * (1 - wy) + bot * wy;
        }
      }
    }
  return out;
}

}  // namespace padl
