#ifndef LFHN_CHECKPOINT_HPP
#define LFHN_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "network.hpp"

namespace lfhn {

// Checkpoint layout, all integers little-endian:
//
//   "LFHN"                      4 bytes magic
//   u32 version                 currently 1
//   u32 length, bytes           config block, UTF-8 "key=value\n" lines
//   u32 count                   number of parameter records
//   per record:
//     u32 length, bytes         parameter name
//     u32 rank, u64 extents[rank]
//     f64 values[prod(extents)] IEEE-754 binary64, row-major

inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> buf) : buf_(std::move(buf)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string bytes() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::string fixed(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) raise<format_error>("checkpoint: truncated file");
  }
  std::uint64_t get(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise<data_error>(what, ": cannot open '", path.string(), "'");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::vector<char>& bytes, const char* what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise<data_error>(what, ": cannot write '", path.string(), "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) raise<data_error>(what, ": write failed for '", path.string(), "'");
}

}  // namespace detail

inline std::vector<char> serialize_checkpoint(const NetworkGraph& net) {
  detail::require_allocated(net);
  detail::ByteWriter w;
  w.raw("LFHN", 4);
  w.u32(checkpoint_version);
  std::string block;
  for (const auto& [k, v] : net.metadata) block += k + "=" + v + "\n";
  w.bytes(block);
  w.u32(static_cast<std::uint32_t>(net.parameters().size()));
  for (const Parameter& p : net.parameters()) {
    w.bytes(p.name);
    w.u32(static_cast<std::uint32_t>(p.shape.size()));
    for (std::size_t e : p.shape) w.u64(e);
    for (double v : p.value.data()) w.f64(v);
  }
  return w.buffer();
}

inline NetworkGraph deserialize_checkpoint(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.fixed(4) != "LFHN") detail::raise<format_error>("checkpoint: bad magic, not an LFHN checkpoint");
  const std::uint32_t version = r.u32();
  if (version != checkpoint_version)
    detail::raise<format_error>("checkpoint: unsupported version ", version, " (expected ", checkpoint_version, ")");

  KeyValues kv;
  const std::string block = r.bytes();
  std::size_t start = 0;
  while (start < block.size()) {
    std::size_t end = block.find('\n', start);
    if (end == std::string::npos) end = block.size();
    const std::string line = block.substr(start, end - start);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) detail::raise<format_error>("checkpoint: malformed config line '", line, "'");
    kv.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    start = end + 1;
  }
  NetworkGraph net = detail::lfhn_structure(config_from_key_values(kv));

  const std::uint32_t count = r.u32();
  if (count != net.parameters().size())
    detail::raise<shape_error>("checkpoint: ", count, " parameter records but the config implies ",
                               net.parameters().size());
  std::vector<bool> seen(count, false);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes();
    if (!net.has_parameter(name)) detail::raise<shape_error>("checkpoint: unexpected parameter '", name, "'");
    Parameter& p = net.parameter(name);
    Shape shape(r.u32());
    for (std::size_t& e : shape) e = static_cast<std::size_t>(r.u64());
    if (shape != p.shape)
      detail::raise<shape_error>("checkpoint: parameter '", name, "' has shape ", to_string(shape),
                                 " but the config implies ", to_string(p.shape));
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = r.f64();
    p.value = Tensor(shape, std::move(values));
  }
  if (!r.at_end()) detail::raise<format_error>("checkpoint: trailing bytes after last record");
  detail::require_allocated(net);
  return net;
}

inline void save_checkpoint(const NetworkGraph& net, const std::filesystem::path& path) {
  detail::write_file(path, serialize_checkpoint(net), "checkpoint");
}

inline NetworkGraph load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(detail::read_file(path, "checkpoint"));
}

/// Loads a checkpoint and rejects it unless its architecture equals `expected`.
inline NetworkGraph load_checkpoint(const std::filesystem::path& path, const LfhnConfig& expected) {
  NetworkGraph net = load_checkpoint(path);
  const LfhnConfig actual = config_of(net);
  if (actual.classes != expected.classes)
    detail::raise<shape_error>("checkpoint: model has ", actual.classes, " classes but ", expected.classes,
                               " were requested");
  if (!(actual == expected)) detail::raise<shape_error>("checkpoint: architecture differs from the requested config");
  return net;
}

/// Imports pretrained root-convolution weights from a flat file of
/// little-endian float32 values: kernel in (kh, kw, Cin, Cout) order
/// followed by Cout biases. For the default config that is 11*11*3*96 + 96
/// values.
inline void load_root_weights(NetworkGraph& net, const std::filesystem::path& path) {
  Parameter& kernel = net.parameter(std::string(root_group) + ".kernel");
  Parameter& bias = net.parameter(std::string(root_group) + ".bias");
  const std::vector<char> bytes = detail::read_file(path, "root weights");
  const std::size_t expected = shape_size(kernel.shape) + shape_size(bias.shape);
  if (bytes.size() != expected * 4)
    detail::raise<shape_error>("root weights: file has ", bytes.size(), " bytes, expected ", expected * 4, " (",
                               to_string(kernel.shape), " kernel + ", to_string(bias.shape), " bias as float32)");
  std::vector<double> values(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    values[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  const std::size_t split = shape_size(kernel.shape);
  kernel.value = Tensor(kernel.shape, std::vector<double>(values.begin(), values.begin() + split));
  bias.value = Tensor(bias.shape, std::vector<double>(values.begin() + split, values.end()));
}

}  // namespace lfhn

#endif  // LFHN_CHECKPOINT_HPP
