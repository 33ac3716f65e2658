#include "splatnorm/image.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace splatnorm {
namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32_be(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& payload) {
  put_u32_be(out, static_cast<uint32_t>(payload.size()));
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start)));
  put_u32_be(out, crc);
}

constexpr uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

int color_type_for(int channels) {
  switch (channels) {
    case 1: return 0;
    case 3: return 2;
    case 4: return 6;
    default: throw std::invalid_argument("png: unsupported channel count");
  }
}

int channels_for(int color_type) {
  switch (color_type) {
    case 0: return 1;
    case 2: return 3;
    case 6: return 4;
    default: throw std::runtime_error("png: unsupported color type");
  }
}

uint8_t paeth(uint8_t a, uint8_t b, uint8_t c) {
  const int p = static_cast<int>(a) + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png(const std::string& path, const ImageU8& img) {
  if (img.width <= 0 || img.height <= 0)
    throw std::invalid_argument("png: non-positive image size");
  if (img.pixels.size() !=
      static_cast<size_t>(img.width) * img.height * img.channels)
    throw std::invalid_argument("png: pixel buffer size mismatch");
  const int ct = color_type_for(img.channels);

  // Filter 0 on every scanline: deterministic and trivially invertible.
  const size_t stride = static_cast<size_t>(img.width) * img.channels;
  std::vector<uint8_t> raw;
  raw.reserve((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), img.pixels.begin() + y * stride, img.pixels.begin() + (y + 1) * stride);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png: compression failed");
  compressed.resize(bound);

  std::vector<uint8_t> out(kPngSig, kPngSig + 8);
  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(img.width));
  put_u32_be(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);                         // bit depth
  ihdr.push_back(static_cast<uint8_t>(ct));  // color type
  ihdr.push_back(0);                         // compression
  ihdr.push_back(0);                         // filter
  ihdr.push_back(0);                         // interlace
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", compressed);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("png: cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("png: write failed: " + path);
}

ImageU8 read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("png: cannot open: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 8 || std::memcmp(buf.data(), kPngSig, 8) != 0)
    throw std::runtime_error("png: bad signature: " + path);

  ImageU8 img;
  int bit_depth = 0, color_type = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  bool saw_ihdr = false, saw_iend = false;
  while (pos + 8 <= buf.size()) {
    const uint32_t len = get_u32_be(&buf[pos]);
    if (pos + 12 + len > buf.size()) throw std::runtime_error("png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(&buf[pos + 4]);
    const uint8_t* payload = &buf[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw std::runtime_error("png: bad IHDR");
      img.width = static_cast<int>(get_u32_be(payload));
      img.height = static_cast<int>(get_u32_be(payload + 4));
      bit_depth = payload[8];
      color_type = payload[9];
      if (payload[12] != 0) throw std::runtime_error("png: interlaced images unsupported");
      if (bit_depth != 8) throw std::runtime_error("png: only 8-bit images supported");
      img.channels = channels_for(color_type);
      saw_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      saw_iend = true;
      break;
    }
    pos += 12 + len;
  }
  if (!saw_ihdr || !saw_iend || idat.empty())
    throw std::runtime_error("png: missing required chunks");

  const size_t stride = static_cast<size_t>(img.width) * img.channels;
  std::vector<uint8_t> raw((stride + 1) * img.height);
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw std::runtime_error("png: decompression failed");

  img.pixels.assign(stride * img.height, 0);
  const int bpp = img.channels;  // bytes per pixel at depth 8
  for (int y = 0; y < img.height; ++y) {
    const uint8_t filter = raw[y * (stride + 1)];
    const uint8_t* src = &raw[y * (stride + 1) + 1];
    uint8_t* dst = &img.pixels[y * stride];
    const uint8_t* prev = y > 0 ? &img.pixels[(y - 1) * stride] : nullptr;
    for (size_t x = 0; x < stride; ++x) {
      const uint8_t a = x >= static_cast<size_t>(bpp) ? dst[x - bpp] : 0;
      const uint8_t b = prev ? prev[x] : 0;
      const uint8_t c = (prev && x >= static_cast<size_t>(bpp)) ? prev[x - bpp] : 0;
      switch (filter) {
        case 0: dst[x] = src[x]; break;
        case 1: dst[x] = static_cast<uint8_t>(src[x] + a); break;
        case 2: dst[x] = static_cast<uint8_t>(src[x] + b); break;
        case 3: dst[x] = static_cast<uint8_t>(src[x] + ((a + b) >> 1)); break;
        case 4: dst[x] = static_cast<uint8_t>(src[x] + paeth(a, b, c)); break;
        default: throw std::runtime_error("png: unknown filter type");
      }
    }
  }
  return img;
}

void write_pfm(const std::string& path, const Tensor& img) {
  const bool color = img.rank() == 3 && img.dim(2) == 3;
  if (!color && img.rank() != 2)
    throw std::invalid_argument("pfm: expected H x W or H x W x 3");
  const int64_t h = img.dim(0), w = img.dim(1);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("pfm: cannot open for writing: " + path);
  f << (color ? "PF" : "Pf") << "\n" << w << " " << h << "\n" << "-1.0" << "\n";
  const int64_t ch = color ? 3 : 1;
  std::vector<float> row(static_cast<size_t>(w * ch));
  for (int64_t y = h - 1; y >= 0; --y) {  // bottom-to-top
    for (int64_t i = 0; i < w * ch; ++i)
      row[static_cast<size_t>(i)] = static_cast<float>(img.at(y * w * ch + i));
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("pfm: write failed: " + path);
}

Tensor read_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("pfm: cannot open: " + path);
  std::string magic;
  f >> magic;
  if (magic != "PF" && magic != "Pf") throw std::runtime_error("pfm: bad magic: " + path);
  int64_t w = 0, h = 0;
  double sc = 0.0;
  f >> w >> h >> sc;
  if (!f || w <= 0 || h <= 0) throw std::runtime_error("pfm: bad header: " + path);
  if (sc >= 0.0) throw std::runtime_error("pfm: big-endian images unsupported");
  f.get();  // single whitespace after the scale line

  const int64_t ch = magic == "PF" ? 3 : 1;
  Tensor img = ch == 3 ? Tensor::zeros({h, w, 3}) : Tensor::zeros({h, w});
  double* out = img.unique_data();
  std::vector<float> row(static_cast<size_t>(w * ch));
  for (int64_t y = h - 1; y >= 0; --y) {
    f.read(reinterpret_cast<char*>(row.data()),
           static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!f) throw std::runtime_error("pfm: truncated pixel data: " + path);
    for (int64_t i = 0; i < w * ch; ++i) out[y * w * ch + i] = row[static_cast<size_t>(i)];
  }
  return img;
}

Tensor to_unit_tensor(const ImageU8& img) {
  Tensor t = Tensor::zeros({img.height, img.width, img.channels});
  double* p = t.unique_data();
  for (size_t i = 0; i < img.pixels.size(); ++i) p[i] = img.pixels[i] / 255.0;
  return t;
}

ImageU8 to_u8(const Tensor& img, int channels) {
  if (img.rank() != 3 && img.rank() != 2)
    throw std::invalid_argument("to_u8: expected H x W or H x W x C");
  ImageU8 out;
  out.height = static_cast<int>(img.dim(0));
  out.width = static_cast<int>(img.dim(1));
  out.channels = img.rank() == 3 ? static_cast<int>(img.dim(2)) : 1;
  if (channels != 0 && channels != out.channels)
    throw std::invalid_argument("to_u8: channel count mismatch");
  out.pixels.resize(static_cast<size_t>(img.numel()));
  for (int64_t i = 0; i < img.numel(); ++i) {
    const double v = std::clamp(img.at(i), 0.0, 1.0);
    out.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

ImageU8 normal_preview(const Tensor& normal_map) {
  if (normal_map.rank() != 3 || normal_map.dim(2) != 3)
    throw std::invalid_argument("normal_preview: expected H x W x 3");
  ImageU8 out;
  out.height = static_cast<int>(normal_map.dim(0));
  out.width = static_cast<int>(normal_map.dim(1));
  out.channels = 3;
  out.pixels.resize(static_cast<size_t>(normal_map.numel()));
  for (int64_t i = 0; i < normal_map.numel() / 3; ++i) {
    double n2 = 0.0;
    for (int c = 0; c < 3; ++c) n2 += normal_map.at(i * 3 + c) * normal_map.at(i * 3 + c);
    if (n2 < 1e-18) continue;  // empty pixel -> (0,0,0) marker; no unit normal hits it
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(normal_map.at(i * 3 + c), -1.0, 1.0);
      out.pixels[static_cast<size_t>(i * 3 + c)] =
          static_cast<uint8_t>(std::lround((v + 1.0) * 0.5 * 255.0));
    }
  }
  return out;
}

Tensor normal_from_preview(const ImageU8& img) {
  if (img.channels != 3) throw std::invalid_argument("normal_from_preview: expected RGB");
  Tensor t = Tensor::zeros({img.height, img.width, 3});
  double* p = t.unique_data();
  for (int64_t i = 0; i < t.numel() / 3; ++i) {
    double n[3];
    bool zero = true;
    for (int c = 0; c < 3; ++c) {
      const uint8_t b = img.pixels[static_cast<size_t>(i * 3 + c)];
      if (b != 0) zero = false;
      n[c] = b / 255.0 * 2.0 - 1.0;
    }
    if (zero) continue;  // empty pixels round-trip to zero, not (-1,-1,-1)
    for (int c = 0; c < 3; ++c) p[i * 3 + c] = n[c];
  }
  return t;
}

}  // namespace splatnorm
