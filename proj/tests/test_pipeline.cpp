#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "splatnorm/checkpoint.hpp"
#include "splatnorm/config.hpp"
#include "splatnorm/pipeline.hpp"

using namespace splatnorm;

namespace {

bool bits_equal(const Tensor& a, const Tensor& b) {
  return a.numel() == b.numel() &&
         std::memcmp(a.data(), b.data(), static_cast<size_t>(a.numel()) * sizeof(double)) == 0;
}

std::vector<uint8_t> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(f), {});
}

void spit(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Small enough to train for a couple of steps inside a unit test.
TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.image_size = 16;
  cfg.dataset_size = 2;
  cfg.seed = 11;
  cfg.max_objects = 1;
  cfg.splat_count = 8;
  cfg.tile_size = 16;
  cfg.stage1_steps = 2;
  cfg.stage1_batch = 2;
  cfg.stage2_steps = 2;
  cfg.stage2_batch = 2;
  cfg.stage3_steps = 2;
  cfg.stage3_batch = 1;
  cfg.diffusion_steps = 8;
  return cfg;
}

}  // namespace

TEST_CASE("config text roundtrips and rejects junk") {
  TrainConfig cfg;
  cfg.image_size = 32;
  cfg.seed = 99;
  cfg.light = "ambient";
  cfg.stage2_lr = 3e-6;
  const std::string text = serialize_config(cfg);
  TrainConfig back = parse_config(text);
  CHECK(back.image_size == 32);
  CHECK(back.seed == 99);
  CHECK(back.light == "ambient");
  CHECK(back.stage2_lr == doctest::Approx(3e-6).epsilon(1e-15));
  // serialize is a fixed point
  CHECK(serialize_config(back) == text);

  CHECK_THROWS(parse_config("no_such_key = 1\n"));
  CHECK_THROWS(parse_config("image_size = 15\n"));       // not a multiple of 16
  CHECK_THROWS(parse_config("image_size = 0\n"));
  CHECK_THROWS(parse_config("light = disco\n"));
  CHECK_THROWS(parse_config("light_x = 0\nlight_y = 0\nlight_z = 0\n"));  // zero direction
  CHECK_THROWS(parse_config("light_r = -1\n"));
  CHECK_THROWS(parse_config("splat_count = 0\n"));
  CHECK_THROWS(parse_config("diffusion_steps = 0\n"));

  // comments and blank lines pass through
  TrainConfig c2 = parse_config("# comment\n\nimage_size = 16\n");
  CHECK(c2.image_size == 16);
}

TEST_CASE("configured light comes out unit length") {
  TrainConfig cfg;
  cfg.light_x = 3.0;
  cfg.light_y = 0.0;
  cfg.light_z = -4.0;
  LightField lf = light_from_config(cfg);
  double dir[3];
  lf.effective_direction(dir);
  CHECK(dir[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(dir[1] == doctest::Approx(0.0));
  CHECK(dir[2] == doctest::Approx(-0.8).epsilon(1e-12));
}

TEST_CASE("dataset generation is deterministic and well-formed") {
  TrainConfig cfg = tiny_config();
  auto d1 = make_dataset(cfg);
  auto d2 = make_dataset(cfg);
  REQUIRE(d1.size() == 2);
  REQUIRE(d2.size() == 2);
  for (size_t i = 0; i < d1.size(); ++i) {
    REQUIRE(shapes_equal(d1[i].rgb.shape(), {16, 16, 3}));
    REQUIRE(shapes_equal(d1[i].alpha.shape(), {16, 16}));
    REQUIRE(shapes_equal(d1[i].normal.shape(), {16, 16, 3}));
    REQUIRE(shapes_equal(d1[i].depth.shape(), {16, 16}));
    CHECK(bits_equal(d1[i].rgb, d2[i].rgb));
    CHECK(bits_equal(d1[i].alpha, d2[i].alpha));
    CHECK(bits_equal(d1[i].normal, d2[i].normal));
    CHECK(bits_equal(d1[i].depth, d2[i].depth));
    // rgb went through the 8-bit quantizer: every value is k/255
    for (int64_t j = 0; j < d1[i].rgb.numel(); ++j) {
      const double v = d1[i].rgb.at(j);
      const double k = v * 255.0;
      CHECK(std::abs(k - std::round(k)) < 1e-9);
    }
  }
  // different seed, different content
  TrainConfig other = cfg;
  other.seed = 12;
  auto d3 = make_dataset(other);
  bool any_diff = false;
  for (size_t i = 0; i < d1.size(); ++i) any_diff |= !bits_equal(d1[i].rgb, d3[i].rgb);
  CHECK(any_diff);
}

TEST_CASE("dataset writes are byte-stable and load back exactly") {
  TrainConfig cfg = tiny_config();
  const std::string dir = "/tmp/splatnorm_test_ds";
  write_dataset(dir, cfg);
  auto loaded = make_dataset(cfg);
  auto from_disk = load_dataset(dir, cfg);
  REQUIRE(from_disk.size() == loaded.size());
  for (size_t i = 0; i < loaded.size(); ++i) {
    CHECK(bits_equal(from_disk[i].rgb, loaded[i].rgb));
    CHECK(bits_equal(from_disk[i].alpha, loaded[i].alpha));
    CHECK(bits_equal(from_disk[i].depth, loaded[i].depth));
    CHECK(bits_equal(from_disk[i].normal, loaded[i].normal));
  }

  // writing again changes nothing on disk
  const std::string probe = dir + "/sample_0000_rgb.png";
  auto before = slurp(probe);
  write_dataset(dir, cfg);
  CHECK(slurp(probe) == before);

  // geometry mismatch is refused
  TrainConfig wrong = cfg;
  wrong.image_size = 32;
  CHECK_THROWS(load_dataset(dir, wrong));
}

TEST_CASE("checkpoint container roundtrips and flags corruption") {
  Checkpoint ck;
  ck.config = tiny_config();
  ck.completed_stage = 2;
  Tensor a({2, 3}, {1.0, -2.0, 3.5, 0.25, 1e-300, -0.0});
  Tensor b({4}, {5.0, 6.0, 7.0, 8.0});
  ck.add("alpha", a);
  ck.add("beta", b);

  const std::string path = "/tmp/splatnorm_test_ck.bin";
  save_checkpoint(path, ck);
  Checkpoint back = load_checkpoint(path);
  CHECK(back.completed_stage == 2);
  CHECK(back.config.image_size == 16);
  REQUIRE(back.blocks.size() == 2);
  CHECK(back.blocks[0].first == "alpha");
  CHECK(bits_equal(back.blocks[0].second, a));
  REQUIRE(back.find("beta") != nullptr);
  CHECK(bits_equal(*back.find("beta"), b));
  CHECK(back.find("gamma") == nullptr);

  // save -> load -> save is byte-identical
  const std::string path2 = "/tmp/splatnorm_test_ck2.bin";
  save_checkpoint(path2, back);
  CHECK(slurp(path) == slurp(path2));

  auto expect_code = [&](const std::vector<uint8_t>& bytes, CheckpointError code) {
    const std::string mangled = "/tmp/splatnorm_test_ck_bad.bin";
    spit(mangled, bytes);
    try {
      load_checkpoint(mangled);
      FAIL("expected a CheckpointIoError");
    } catch (const CheckpointIoError& e) {
      CHECK(e.code == code);
    }
    std::remove(mangled.c_str());
  };

  auto good = slurp(path);
  auto bad = good;
  bad[0] = 'X';
  expect_code(bad, CheckpointError::kBadMagic);
  bad = good;
  bad[4] = 0xee;  // version word
  expect_code(bad, CheckpointError::kBadVersion);
  bad = good;
  bad[good.size() / 2] ^= 0x40;  // flip a payload bit
  expect_code(bad, CheckpointError::kChecksumMismatch);
  bad = good;
  bad.resize(good.size() - 9);
  expect_code(bad, CheckpointError::kTruncated);

  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("pipeline init is seed-deterministic") {
  TrainConfig cfg = tiny_config();
  Pipeline p1 = Pipeline::init(cfg);
  Pipeline p2 = Pipeline::init(cfg);
  CHECK(block_fingerprint(p1, 1) == block_fingerprint(p2, 1));
  CHECK(block_fingerprint(p1, 2) == block_fingerprint(p2, 2));

  TrainConfig other = cfg;
  other.seed = 12;
  Pipeline p3 = Pipeline::init(other);
  const bool same = block_fingerprint(p1, 1) == block_fingerprint(p3, 1) &&
                    block_fingerprint(p1, 2) == block_fingerprint(p3, 2);
  CHECK(!same);

  // parameter names are unique across the whole system
  std::vector<std::string> names;
  visit_all_params(p1, [&](const std::string& n, Tensor&) { names.push_back(n); });
  std::vector<std::string> sorted = names;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  CHECK(names.size() > 40);  // encoder, fpn, tex, fusion, score, gate
}

TEST_CASE("stage order is enforced") {
  TrainConfig cfg = tiny_config();
  Pipeline p = Pipeline::init(cfg);
  auto data = make_dataset(cfg);
  CHECK_THROWS(train_stage(p, 2, data));
  CHECK_THROWS(train_stage(p, 3, data));
  CHECK_THROWS(train_stage(p, 0, data));
  CHECK_THROWS(train_stage(p, 4, data));
}

TEST_CASE("three tiny stages run, freeze what they must, and advance") {
  TrainConfig cfg = tiny_config();
  Pipeline p = Pipeline::init(cfg);
  auto data = make_dataset(cfg);

  const uint64_t enc0 = block_fingerprint(p, 1);
  const uint64_t dif0 = block_fingerprint(p, 2);

  StageReport r1 = train_stage(p, 1, data);
  CHECK(r1.stage == 1);
  CHECK(static_cast<int>(r1.losses.size()) == cfg.stage1_steps);
  for (double l : r1.losses) CHECK(std::isfinite(l));
  CHECK(p.completed_stage == 1);
  const uint64_t enc1 = block_fingerprint(p, 1);
  CHECK(enc1 != enc0);                       // the regressor moved
  CHECK(block_fingerprint(p, 2) == dif0);    // the generator did not

  StageReport r2 = train_stage(p, 2, data);
  CHECK(p.completed_stage == 2);
  for (double l : r2.losses) CHECK(std::isfinite(l));
  CHECK(block_fingerprint(p, 1) == enc1);    // stage 2 freezes the regressor
  const uint64_t dif2 = block_fingerprint(p, 2);
  CHECK(dif2 != dif0);

  StageReport r3 = train_stage(p, 3, data);
  CHECK(p.completed_stage == 3);
  for (double l : r3.losses) CHECK(std::isfinite(l));
  // stage 3 is joint: both blocks move
  CHECK(block_fingerprint(p, 1) != enc1);
  CHECK(block_fingerprint(p, 2) != dif2);

  // estimate after training: deterministic, well-formed, unit-ish normals
  EstimateResult e1 = estimate(p, data[0].rgb);
  EstimateResult e2 = estimate(p, data[0].rgb);
  REQUIRE(shapes_equal(e1.n_fused.shape(), {16, 16, 3}));
  REQUIRE(shapes_equal(e1.rgb.shape(), {16, 16, 3}));
  REQUIRE(shapes_equal(e1.alpha.shape(), {16, 16}));
  CHECK(bits_equal(e1.n_fused, e2.n_fused));
  CHECK(bits_equal(e1.rgb, e2.rgb));
  CHECK(e1.valid.size() == 16 * 16);
  CHECK(e1.n_fused.all_finite());
  for (int64_t i = 0; i < 16 * 16; ++i) {
    double n2 = 0;
    for (int c = 0; c < 3; ++c) {
      const double v = e1.n_fused.at(i * 3 + c);
      n2 += v * v;
    }
    if (e1.valid[static_cast<size_t>(i)])
      CHECK(n2 == doctest::Approx(1.0).epsilon(1e-9));
    else
      CHECK(n2 == 0.0);
  }

  // round-trip through the container preserves inference bit for bit
  const std::string path = "/tmp/splatnorm_test_pipe.bin";
  save_pipeline(path, p);
  Pipeline q = load_pipeline(path);
  CHECK(q.completed_stage == 3);
  CHECK(block_fingerprint(q, 1) == block_fingerprint(p, 1));
  CHECK(block_fingerprint(q, 2) == block_fingerprint(p, 2));
  EstimateResult e3 = estimate(q, data[0].rgb);
  CHECK(bits_equal(e3.n_fused, e1.n_fused));
  CHECK(bits_equal(e3.rgb, e1.rgb));

  // saving the loaded pipeline reproduces the file byte for byte
  const std::string path2 = "/tmp/splatnorm_test_pipe2.bin";
  save_pipeline(path2, q);
  CHECK(slurp(path) == slurp(path2));
  std::remove(path.c_str());
  std::remove(path2.c_str());

  // render_view accepts the estimated scene from an arbitrary camera
  const double eye[3] = {0.5, 0.2, -0.5}, target[3] = {0.0, 0.0, 3.0}, up[3] = {0.0, 1.0, 0.0};
  Camera cam = Camera::look_at(eye, target, up, 16, 16, 14.0);
  RenderOutput rv = render_view(p, e1.scene, cam);
  CHECK(shapes_equal(rv.rgb.shape(), {16, 16, 3}));
  CHECK(rv.rgb.all_finite());
}
