#ifndef LFHN_IMAGE_IO_HPP
#define LFHN_IMAGE_IO_HPP

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace lfhn {

/// Encodes an H x W x C image with values in [0,1] as binary PGM (C = 1) or
/// PPM (C = 3), maxval 255.
inline std::string encode_pnm(const Tensor& image) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3))
    detail::raise<shape_error>("pnm: expected HxWx1 or HxWx3 image, got ", to_string(image.shape()));
  const bool color = image.dim(2) == 3;
  std::string out = (color ? "P6\n" : "P5\n") + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) +
                    "\n255\n";
  out.reserve(out.size() + image.size());
  for (double v : image.data()) {
    const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  return out;
}

/// Decodes binary PGM/PPM (P5/P6, maxval up to 65535) into [0,1] values.
inline Tensor decode_pnm(const std::string& bytes, const std::string& name = "image") {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* field) {
    skip_space();
    std::size_t v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])))
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
    if (pos == start) detail::raise<format_error>(name, ": malformed header field ", field);
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    detail::raise<format_error>(name, ": not a binary PGM/PPM file");
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  pos = 2;
  const std::size_t width = read_uint("width");
  const std::size_t height = read_uint("height");
  const std::size_t maxval = read_uint("maxval");
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535)
    detail::raise<format_error>(name, ": invalid header ", width, "x", height, " maxval ", maxval);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    detail::raise<format_error>(name, ": missing whitespace after header");
  ++pos;

  const std::size_t sample_bytes = maxval < 256 ? 1 : 2;
  const std::size_t count = width * height * channels;
  if (bytes.size() - pos < count * sample_bytes)
    detail::raise<format_error>(name, ": truncated pixel data");
  Tensor image({height, width, channels});
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t v = static_cast<unsigned char>(bytes[pos + i * sample_bytes]);
    if (sample_bytes == 2) v = (v << 8) | static_cast<unsigned char>(bytes[pos + i * 2 + 1]);
    image[i] = static_cast<double>(std::min(v, maxval)) * scale;
  }
  return image;
}

inline void write_pnm(const std::filesystem::path& path, const Tensor& image) {
  const std::string bytes = encode_pnm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) detail::raise<data_error>("cannot write image '", path.string(), "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) detail::raise<data_error>("write failed for image '", path.string(), "'");
}

inline Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) detail::raise<data_error>("cannot read image '", path.string(), "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_pnm(bytes, path.filename().string());
  } catch (const format_error& e) {
    throw data_error(e.what());
  }
}

}  // namespace lfhn

#endif  // LFHN_IMAGE_IO_HPP
