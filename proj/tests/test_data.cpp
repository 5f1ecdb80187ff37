#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"

using namespace lfhn;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "lfhn_data_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Pnm, ColorRoundTripWithinQuantization) {
  std::mt19937_64 rng(1);
  const Tensor img = oracle::random({5, 7, 3}, rng, 0.0, 1.0);
  const Tensor back = decode_pnm(encode_pnm(img));
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_LE(std::abs(back[i] - img[i]), 0.5 / 255.0 + 1e-12);
  EXPECT_EQ(encode_pnm(back), encode_pnm(img));
}

TEST(Pnm, GrayHeaderCommentsAndSixteenBit) {
  const Tensor g = decode_pnm(std::string("P5\n# comment\n2 1\n# another\n255\n") + char(0) + char(255));
  EXPECT_EQ(g.shape(), (Shape{1, 2, 1}));
  EXPECT_EQ(g[1], 1.0);
  const Tensor wide = decode_pnm(std::string("P5 1 1 65535\n") + char(0x80) + char(0x00));
  EXPECT_DOUBLE_EQ(wide[0], 32768.0 / 65535.0);
}

TEST(Pnm, MalformedInputs) {
  EXPECT_THROW(decode_pnm("P3\n1 1\n255\n0 0 0"), format_error);
  EXPECT_THROW(decode_pnm("P5\n2 2\n255\n\x01"), format_error);
  EXPECT_THROW(decode_pnm("P6\n0 2\n255\n"), format_error);
  EXPECT_THROW(encode_pnm(Tensor({2, 2, 2})), shape_error);
}

TEST(Filenames, ParseAndReject) {
  const auto p = parse_sample_filename("id12_p3_l7.ppm");
  ASSERT_TRUE(p);
  EXPECT_EQ(p->identity, 12u);
  EXPECT_EQ(p->pose_id, 3u);
  EXPECT_EQ(p->light_id, 7u);
  EXPECT_FALSE(parse_sample_filename("id12_p3.ppm"));
  EXPECT_FALSE(parse_sample_filename("id1_p3_l7.png"));
  EXPECT_EQ(sample_filename(4, 0, 2, 1), "id4_p0_l2.pgm");
}

TEST(Rendering, LambertianProductIsPointwise) {
  std::mt19937_64 rng(2);
  const Tensor r = oracle::random({4, 5, 3}, rng, 0.0, 1.0);
  const Tensor l = oracle::random({4, 5, 1}, rng, 0.2, 1.0);
  const Tensor i = lambertian_product(r, l);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 5; ++x)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(i(y, x, c), r(y, x, c) * l(y, x, 0));
  EXPECT_THROW(lambertian_product(r, Tensor({4, 4, 1})), shape_error);
}

TEST(Rendering, LightFieldBoundsAndDirection) {
  for (const LightSpec& l : default_light_roster()) {
    const Tensor f = light_field(l, 16, 16);
    for (double v : f.data()) {
      EXPECT_GE(v, l.ambient - 1e-12);
      EXPECT_LE(v, 1.0 + 1e-12);
    }
  }
  // Azimuth 0 lights the right side more than the left.
  const Tensor f = light_field(LightSpec{0.0, 0.2}, 8, 8);
  EXPECT_GT(f(4, 7, 0), f(4, 0, 0));
  EXPECT_THROW(light_field(LightSpec{0.0, 0.05}, 4, 4), config_error);
}

TEST(Rendering, FrontalPoseIsTheTemplate) {
  const IdentityTemplate t = make_template(3, 1, 24, 24);
  EXPECT_EQ(project_reflectance(t, PoseSpec{0.0}), t.rasterize());
  EXPECT_EQ(render(t, PoseSpec{0.0}, LightSpec{0.0, 1.0}), t.rasterize());
}

TEST(Rendering, ProfileHidesFarHalf) {
  const IdentityTemplate t = make_template(3, 1, 32, 32);
  const Tensor r = project_reflectance(t, PoseSpec{90.0});
  // With yaw +90 the squeezed face sits right of centre; the far-left columns are background.
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(r(y, 0, c), t.background_value(c));
  EXPECT_THROW(project_reflectance(t, PoseSpec{91.0}), config_error);
}

TEST(Rendering, IdentitiesDiffer) {
  std::set<std::vector<double>> seen;
  for (std::size_t id = 0; id < 10; ++id) {
    const Tensor r = make_template(7, id, 16, 16).rasterize();
    seen.insert(std::vector<double>(r.data().begin(), r.data().end()));
  }
  EXPECT_EQ(seen.size(), 10u);
}

TEST(Corpus, GenerationIsDeterministicAndComplete) {
  CorpusSpec spec;
  spec.identities = 2;
  spec.height = spec.width = 20;
  spec.seed = 5;
  const fs::path a = fresh_dir("gen_a"), b = fresh_dir("gen_b");
  const auto rows = generate_corpus(spec, a);
  generate_corpus(spec, b);
  EXPECT_EQ(rows.size(), 2u * 13u * 8u);
  for (const ManifestRow& r : rows) EXPECT_EQ(slurp(a / r.filename), slurp(b / r.filename)) << r.filename;
  EXPECT_EQ(slurp(a / manifest_name), slurp(b / manifest_name));
  EXPECT_EQ(read_manifest(a / manifest_name), rows);

  const auto samples = load_corpus(a);
  ASSERT_EQ(samples.size(), rows.size());
  for (const LabeledSample& s : samples) {
    EXPECT_EQ(s.image.shape(), (Shape{20, 20, 3}));
    const auto parsed = parse_sample_filename(s.filename);
    EXPECT_EQ(parsed->identity, s.identity);
  }
  const auto yaws = yaw_by_pose(rows);
  EXPECT_EQ(yaws.at(0), -90.0);
  EXPECT_EQ(yaws.at(6), 0.0);
  EXPECT_EQ(yaws.at(12), 90.0);
}

TEST(Corpus, GrayscaleWritesPgm) {
  CorpusSpec spec;
  spec.identities = 1;
  spec.yaws = {0.0};
  spec.lights = {LightSpec{}};
  spec.height = spec.width = 8;
  spec.channels = 1;
  const fs::path dir = fresh_dir("gray");
  generate_corpus(spec, dir);
  const auto samples = load_corpus(dir);
  ASSERT_EQ(samples.size(), 1u);
  EXPECT_EQ(samples[0].filename, "id0_p0_l0.pgm");
  EXPECT_EQ(samples[0].image.dim(2), 1u);
}

TEST(Corpus, MalformedNamesListedTogether) {
  const fs::path dir = fresh_dir("malformed");
  write_pnm(dir / "id0_p0_l0.pgm", Tensor({2, 2, 1}));
  write_pnm(dir / "face.pgm", Tensor({2, 2, 1}));
  write_pnm(dir / "id1.pgm", Tensor({2, 2, 1}));
  std::ofstream(dir / "notes.txt") << "ignored";
  try {
    load_corpus(dir);
    FAIL() << "expected data_error";
  } catch (const data_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("face.pgm"), std::string::npos);
    EXPECT_NE(msg.find("id1.pgm"), std::string::npos);
    EXPECT_EQ(msg.find("notes.txt"), std::string::npos);
  }
  EXPECT_THROW(load_corpus(dir / "missing"), data_error);
}

namespace {

struct Fake {
  std::size_t identity, pose_id, light_id;
};

std::vector<Fake> grid(std::size_t ids, std::size_t poses, std::size_t lights) {
  std::vector<Fake> out;
  for (std::size_t i = 0; i < ids; ++i)
    for (std::size_t p = 0; p < poses; ++p)
      for (std::size_t l = 0; l < lights; ++l) out.push_back({i, p, l});
  return out;
}

void expect_partition(const SplitResult& r, std::size_t n) {
  std::vector<std::size_t> all = r.train;
  all.insert(all.end(), r.test.begin(), r.test.end());
  std::sort(all.begin(), all.end());
  ASSERT_EQ(all.size(), n);
  for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(all[i], i);
  EXPECT_TRUE(std::is_sorted(r.train.begin(), r.train.end()));
  EXPECT_TRUE(std::is_sorted(r.test.begin(), r.test.end()));
}

}  // namespace

TEST(Split, HoldoutLightPartitionsByLight) {
  const auto samples = grid(3, 13, 8);
  const SplitResult r = split(samples, SplitProtocol{SplitProtocol::Kind::holdout_light, 0.9, 0, {2, 6}});
  expect_partition(r, samples.size());
  EXPECT_EQ(r.test.size(), 3u * 13u * 2u);
  for (std::size_t i : r.test) EXPECT_TRUE(samples[i].light_id == 2 || samples[i].light_id == 6);
  for (std::size_t i : r.train) EXPECT_TRUE(samples[i].light_id != 2 && samples[i].light_id != 6);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Split, HoldoutPosePartitionsByPose) {
  const auto samples = grid(2, 13, 8);
  const SplitResult r = split(samples, SplitProtocol{SplitProtocol::Kind::holdout_pose, 0.9, 0, {0, 12}});
  expect_partition(r, samples.size());
  for (std::size_t i : r.test) EXPECT_TRUE(samples[i].pose_id == 0 || samples[i].pose_id == 12);
}

TEST(Split, RandomIsSeededAndSized) {
  const auto samples = grid(2, 5, 4);
  const SplitProtocol p{SplitProtocol::Kind::random, 0.75, 9, {}};
  const SplitResult a = split(samples, p), b = split(samples, p);
  expect_partition(a, samples.size());
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.train.size(), 30u);
  SplitProtocol other = p;
  other.seed = 10;
  EXPECT_NE(split(samples, other).train, a.train);
}

TEST(Split, EmptyTestWarnsAndUnknownKindRejected) {
  const auto samples = grid(1, 2, 2);
  const SplitResult r = split(samples, SplitProtocol{SplitProtocol::Kind::holdout_light, 0.9, 0, {7}});
  EXPECT_TRUE(r.test.empty());
  EXPECT_FALSE(r.warnings.empty());
  EXPECT_THROW(parse_split_kind("leave-one-out"), config_error);
}
