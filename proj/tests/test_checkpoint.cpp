#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "oracles.hpp"

using namespace lfhn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "lfhn_checkpoint_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<char> bytes_of(const Tensor& t) {
  std::vector<char> out(t.size() * sizeof(double));
  std::memcpy(out.data(), t.raw(), out.size());
  return out;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  LfhnConfig cfg = tiny_config();
  cfg.lrn.beta = 0.1 + 0.2;  // not exactly representable in short decimal
  NetworkGraph net = build_lfhn(cfg, 42);
  net.parameter("fc7.bias").value[0] = -0.0;
  net.parameter("fc7.bias").value[1] = 1e-310;  // subnormal
  const fs::path path = scratch("roundtrip.lfhn");
  save_checkpoint(net, path);
  const NetworkGraph back = load_checkpoint(path);
  EXPECT_EQ(config_of(back), cfg);
  ASSERT_EQ(back.parameters().size(), net.parameters().size());
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    EXPECT_EQ(back.parameters()[i].name, net.parameters()[i].name);
    EXPECT_EQ(bytes_of(back.parameters()[i].value), bytes_of(net.parameters()[i].value));
  }
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(net));
}

TEST(Checkpoint, HeaderLayout) {
  const std::vector<char> b = serialize_checkpoint(build_lfhn(tiny_config()));
  ASSERT_GE(b.size(), 8u);
  EXPECT_EQ(std::string(b.data(), 4), "LFHN");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[5], 0);
}

TEST(Checkpoint, CorruptionIsReported) {
  const std::vector<char> good = serialize_checkpoint(build_lfhn(tiny_config(), 1));

  std::vector<char> magic = good;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic), format_error);

  std::vector<char> version = good;
  version[4] = 9;
  EXPECT_THROW(deserialize_checkpoint(version), format_error);

  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, good.size() / 2, good.size() - 1}) {
    std::vector<char> truncated(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(deserialize_checkpoint(truncated), format_error) << "cut at " << cut;
  }

  std::vector<char> trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(trailing), format_error);
}

TEST(Checkpoint, ClassMismatchIsShapeError) {
  const fs::path path = scratch("classes.lfhn");
  save_checkpoint(build_lfhn(tiny_config()), path);
  LfhnConfig want = tiny_config();
  EXPECT_NO_THROW(load_checkpoint(path, want));
  want.classes = 4;
  EXPECT_THROW(load_checkpoint(path, want), shape_error);
}

TEST(Checkpoint, MissingFileIsDataError) { EXPECT_THROW(load_checkpoint(scratch("absent.lfhn")), data_error); }

TEST(RootWeights, LoadsFloat32KernelThenBias) {
  NetworkGraph net = build_lfhn(tiny_config());
  const std::size_t nk = 4 * 4 * 3 * 4, nb = 4;
  std::vector<float> values(nk + nb);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = 0.25f * static_cast<float>(i) - 3.0f;
  const fs::path path = scratch("root.f32");
  {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
  }
  load_root_weights(net, path);
  EXPECT_EQ(net.parameter("conv1.kernel").value[5], static_cast<double>(values[5]));
  EXPECT_EQ(net.parameter("conv1.bias").value[3], static_cast<double>(values[nk + 3]));

  std::ofstream(path, std::ios::binary | std::ios::trunc).write("abcd", 4);
  EXPECT_THROW(load_root_weights(net, path), shape_error);
}
