#include "mscc/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mscc {

std::size_t BinaryMask::area() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Netpbm header token reader that skips whitespace and '#' comments.
class PnmHeader {
 public:
  explicit PnmHeader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}
  std::string token() {
    skip();
    std::string t;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) t.push_back(static_cast<char>(bytes_[pos_++]));
    return t;
  }
  int integer(const std::filesystem::path& path) {
    auto t = token();
    try {
      return std::stoi(t);
    } catch (const std::exception&) {
      throw ImageIoError("malformed netpbm header in " + path.string());
    }
  }
  // A single whitespace byte separates the header from binary data.
  std::size_t data_start() const { return pos_ + 1; }
  std::size_t pos() const { return pos_; }

 private:
  void skip() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

RawImage read_pnm(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  PnmHeader hdr(bytes);
  const std::string magic = hdr.token();
  const bool ascii = magic == "P2" || magic == "P3";
  const int channels = (magic == "P3" || magic == "P6") ? 3 : 1;
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") {
    throw ImageIoError("unsupported netpbm type '" + magic + "' in " + path.string());
  }
  RawImage img;
  img.width = hdr.integer(path);
  img.height = hdr.integer(path);
  const int maxval = hdr.integer(path);
  if (img.width <= 0 || img.height <= 0 || maxval <= 0 || maxval > 65535) {
    throw ImageIoError("bad netpbm dimensions in " + path.string());
  }
  img.channels = channels;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * channels;
  img.data.resize(n);
  if (ascii) {
    std::istringstream in(std::string(bytes.begin() + static_cast<long>(hdr.pos()), bytes.end()));
    for (auto& v : img.data) {
      int s = 0;
      if (!(in >> s)) throw ImageIoError("truncated netpbm data in " + path.string());
      v = static_cast<double>(s) / maxval;
    }
    return img;
  }
  const std::size_t start = hdr.data_start();
  const std::size_t bps = maxval > 255 ? 2 : 1;
  if (bytes.size() < start + n * bps) throw ImageIoError("truncated netpbm data in " + path.string());
  for (std::size_t i = 0; i < n; ++i) {
    unsigned s = bps == 1 ? bytes[start + i] : (static_cast<unsigned>(bytes[start + 2 * i]) << 8) | bytes[start + 2 * i + 1];
    img.data[i] = static_cast<double>(s) / maxval;
  }
  return img;
}

RawImage read_png_file(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw ImageIoError("cannot read PNG " + path.string() + ": " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ImageIoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  RawImage raw;
  raw.width = static_cast<int>(image.width);
  raw.height = static_cast<int>(image.height);
  raw.channels = color ? 3 : 1;
  raw.data.resize(buffer.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) raw.data[i] = buffer[i] / 255.0;
  return raw;
}

void write_file(const std::filesystem::path& path, const std::string& header, const std::vector<unsigned char>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIoError("cannot open " + path.string() + " for writing");
  out << header;
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!out) throw ImageIoError("failed writing " + path.string());
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_png_buffer(const std::filesystem::path& path, int height, int width, bool color,
                      const std::vector<std::uint8_t>& pixels) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, pixels.data(), 0, nullptr)) {
    throw ImageIoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

}  // namespace

RawImage read_image(const std::filesystem::path& path) {
  auto bytes = slurp(path);
  static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_sig, 8) == 0) return read_png_file(path);
  if (bytes.size() >= 2 && bytes[0] == 'P') return read_pnm(path, bytes);
  throw ImageIoError("unrecognized image format: " + path.string());
}

GrayImage to_gray(const RawImage& raw) {
  GrayImage g(raw.height, raw.width);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (raw.channels == 1) {
      g.data[i] = raw.data[i];
    } else {
      const double* p = &raw.data[i * raw.channels];
      g.data[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    }
  }
  return g;
}

void write_pgm8(const std::filesystem::path& path, const GrayImage& image) {
  std::vector<unsigned char> body(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) body[i] = to_byte(image.data[i]);
  write_file(path, "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n", body);
}

void write_pgm8(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<unsigned char> body(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) body[i] = mask.data[i] ? 255 : 0;
  write_file(path, "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n", body);
}

void write_pgm16(const std::filesystem::path& path, const ProbabilityMap& prob) {
  std::vector<unsigned char> body(prob.size() * 2);
  for (std::size_t i = 0; i < prob.size(); ++i) {
    auto s = static_cast<unsigned>(std::lround(std::clamp(prob.data[i], 0.0, 1.0) * 65535.0));
    body[2 * i] = static_cast<unsigned char>(s >> 8);
    body[2 * i + 1] = static_cast<unsigned char>(s & 0xff);
  }
  write_file(path, "P5\n" + std::to_string(prob.width) + " " + std::to_string(prob.height) + "\n65535\n", body);
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  write_png_buffer(path, image.height, image.width, true, image.data);
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  std::vector<std::uint8_t> px(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) px[i] = to_byte(image.data[i]);
  write_png_buffer(path, image.height, image.width, false, px);
}

void write_png(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> px(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) px[i] = mask.data[i] ? 255 : 0;
  write_png_buffer(path, mask.height, mask.width, false, px);
}

GrayImage read_gray(const std::filesystem::path& path) { return to_gray(read_image(path)); }

ProbabilityMap read_probability(const std::filesystem::path& path) {
  auto g = read_gray(path);
  ProbabilityMap p(g.height, g.width);
  p.data = std::move(g.data);
  return p;
}

BinaryMask read_mask(const std::filesystem::path& path) {
  auto g = read_gray(path);
  BinaryMask m(g.height, g.width);
  for (std::size_t i = 0; i < g.size(); ++i) m.data[i] = g.data[i] > 0.0 ? 1 : 0;
  return m;
}

GrayImage resize_bilinear(const GrayImage& image, int height, int width) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("resize: target size must be positive");
  GrayImage out(height, width);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (int r = 0; r < height; ++r) {
    double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    int y0 = static_cast<int>(std::floor(fy));
    int y1 = std::min(y0 + 1, image.height - 1);
    double wy = fy - y0;
    for (int c = 0; c < width; ++c) {
      double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      int x0 = static_cast<int>(std::floor(fx));
      int x1 = std::min(x0 + 1, image.width - 1);
      double wx = fx - x0;
      double top = image.at(y0, x0) * (1 - wx) + image.at(y0, x1) * wx;
      double bot = image.at(y1, x0) * (1 - wx) + image.at(y1, x1) * wx;
      out.at(r, c) = top * (1 - wy) + bot * wy;
    }
  }
  return out;
}

GrayImage resize_nearest(const GrayImage& image, int height, int width) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("resize: target size must be positive");
  GrayImage out(height, width);
  for (int r = 0; r < height; ++r) {
    int y = std::min(image.height - 1, static_cast<int>((r + 0.5) * image.height / height));
    for (int c = 0; c < width; ++c) {
      int x = std::min(image.width - 1, static_cast<int>((c + 0.5) * image.width / width));
      out.at(r, c) = image.at(y, x);
    }
  }
  return out;
}

}  // namespace mscc
