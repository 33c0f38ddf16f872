#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>
#include <png.h>

#include "modir/tensor.hpp"

namespace modir::io {

namespace fs = std::filesystem;

/// Corrupt, truncated or checksum-mismatched bundle content.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, const void* data, std::size_t size) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

inline void write_text(const fs::path& path, const std::string& text) { write_file(path, text.data(), text.size()); }

inline std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

inline std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

// ---------------------------------------------------------------------------
// DVF raster: "MODVF1", u8 version, u8 ndim = 2, u32le H, u32le W, then H*W
// float32le x-displacements and H*W float32le y-displacements, row-major.

inline constexpr std::array<char, 6> kDvfMagic{'M', 'O', 'D', 'V', 'F', '1'};
inline constexpr std::uint8_t kDvfVersion = 1;
inline constexpr std::size_t kDvfHeaderBytes = 16;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_dvf(const Tensor& dvf) {
  if (dvf.rank() != 4 || dvf.dim(0) != 1 || dvf.dim(1) != 2) throw ShapeError("encode_dvf: expected [1,2,H,W]");
  const auto h = static_cast<std::uint32_t>(dvf.dim(2)), w = static_cast<std::uint32_t>(dvf.dim(3));
  std::vector<std::uint8_t> out(kDvfMagic.begin(), kDvfMagic.end());
  out.push_back(kDvfVersion);
  out.push_back(2);
  detail::put_u32(out, h);
  detail::put_u32(out, w);
  for (double v : dvf.data()) {
    const auto f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    detail::put_u32(out, bits);
  }
  return out;
}

inline Tensor decode_dvf(std::span<const std::uint8_t> bytes, const std::string& name = "dvf") {
  if (bytes.size() < kDvfHeaderBytes) throw IntegrityError(name + ": truncated DVF header");
  if (!std::equal(kDvfMagic.begin(), kDvfMagic.end(), bytes.begin())) throw IntegrityError(name + ": bad DVF magic");
  if (bytes[6] != kDvfVersion) throw VersionError(name + ": unsupported DVF version " + std::to_string(bytes[6]));
  if (bytes[7] != 2) throw IntegrityError(name + ": DVF ndim must be 2");
  const std::size_t h = detail::get_u32(bytes.data() + 8), w = detail::get_u32(bytes.data() + 12);
  if (bytes.size() != kDvfHeaderBytes + 8 * h * w)
    throw IntegrityError(name + ": DVF length " + std::to_string(bytes.size()) + " does not match " +
                         std::to_string(h) + "x" + std::to_string(w));
  std::vector<double> v(2 * h * w);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::uint32_t bits = detail::get_u32(bytes.data() + kDvfHeaderBytes + 4 * i);
    float f;
    std::memcpy(&f, &bits, 4);
    v[i] = f;
  }
  return Tensor::from({1, 2, h, w}, std::move(v));
}

inline void write_dvf(const fs::path& path, const Tensor& dvf) {
  const auto bytes = encode_dvf(dvf);
  write_file(path, bytes.data(), bytes.size());
}

inline Tensor read_dvf(const fs::path& path) { return decode_dvf(read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Lossless float64 tensor container: "MOTEN1", u8 version, u8 reserved,
// u32le count, then per tensor u32le rank, rank x u32le dims, float64le data.

inline constexpr std::array<char, 6> kTensorMagic{'M', 'O', 'T', 'E', 'N', '1'};

inline std::vector<std::uint8_t> encode_tensors(const std::vector<Tensor>& tensors) {
  std::vector<std::uint8_t> out(kTensorMagic.begin(), kTensorMagic.end());
  out.push_back(1);
  out.push_back(0);
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      detail::put_u32(out, static_cast<std::uint32_t>(bits));
      detail::put_u32(out, static_cast<std::uint32_t>(bits >> 32));
    }
  }
  return out;
}

inline std::vector<Tensor> decode_tensors(std::span<const std::uint8_t> bytes, const std::string& name = "tensors") {
  std::size_t pos = 0;
  const auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) throw IntegrityError(name + ": truncated tensor file");
  };
  need(12);
  if (!std::equal(kTensorMagic.begin(), kTensorMagic.end(), bytes.begin())) throw IntegrityError(name + ": bad magic");
  if (bytes[6] != 1) throw VersionError(name + ": unsupported tensor file version " + std::to_string(bytes[6]));
  const std::uint32_t count = detail::get_u32(bytes.data() + 8);
  pos = 12;
  std::vector<Tensor> out;
  for (std::uint32_t t = 0; t < count; ++t) {
    need(4);
    const std::uint32_t rank = detail::get_u32(bytes.data() + pos);
    pos += 4;
    if (rank > 8) throw IntegrityError(name + ": implausible tensor rank");
    need(4 * rank);
    Shape shape(rank);
    for (auto& d : shape) {
      d = detail::get_u32(bytes.data() + pos);
      pos += 4;
    }
    const std::size_t n = shape_numel(shape);
    need(8 * n);
    std::vector<double> v(n);
    for (auto& x : v) {
      const std::uint64_t bits = detail::get_u32(bytes.data() + pos) |
                                 static_cast<std::uint64_t>(detail::get_u32(bytes.data() + pos + 4)) << 32;
      std::memcpy(&x, &bits, 8);
      pos += 8;
    }
    out.push_back(Tensor::from(std::move(shape), std::move(v)));
  }
  if (pos != bytes.size()) throw IntegrityError(name + ": trailing bytes in tensor file");
  return out;
}

inline void write_tensors(const fs::path& path, const std::vector<Tensor>& tensors) {
  const auto bytes = encode_tensors(tensors);
  write_file(path, bytes.data(), bytes.size());
}

inline std::vector<Tensor> read_tensors(const fs::path& path) { return decode_tensors(read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// 8-bit PNG via libpng.

struct Image8 {
  std::size_t width = 0, height = 0, channels = 1;  // 1 = gray, 3 = RGB
  std::vector<std::uint8_t> pixels;
};

inline void write_png(const fs::path& path, const Image8& img) {
  fs::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * img.width * img.channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline Image8 read_png(const fs::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "rb"), &std::fclose);
  if (!fp) throw IntegrityError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IntegrityError("corrupt PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  if (png_get_bit_depth(png, info) != 8) png_set_strip_16(png);
  const int type = png_get_color_type(png, info);
  if (type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  png_read_update_info(png, info);
  Image8 img;
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  img.pixels.resize(img.width * img.height * img.channels);
  for (std::size_t y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + y * img.width * img.channels, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

/// One channel of a [1,C,H,W] tensor in [0,1], quantised to 8 bits.
inline Image8 to_gray8(const Tensor& t, std::size_t channel = 0) {
  const std::size_t h = t.dim(2), w = t.dim(3);
  Image8 img{w, h, 1, std::vector<std::uint8_t>(h * w)};
  for (std::size_t i = 0; i < h * w; ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(t[channel * h * w + i], 0.0, 1.0) * 255.0));
  return img;
}

inline Tensor from_gray8(const Image8& img) {
  if (img.channels != 1) throw IntegrityError("expected a grayscale PNG");
  std::vector<double> v(img.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = img.pixels[i] / 255.0;
  return Tensor::from({1, 1, img.height, img.width}, std::move(v));
}

}  // namespace modir::io
