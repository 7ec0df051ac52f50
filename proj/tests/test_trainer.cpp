#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "qvae/error.hpp"
#include "qvae/models.hpp"
#include "qvae/trainer.hpp"
#include "support/synth_digits.hpp"

using namespace qvae;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& leaf) {
  const fs::path p = fs::temp_directory_path() / "qvae_trainer_tests" / leaf;
  fs::create_directories(p);
  return p;
}

PreparedDataset synth_prepared(int n, uint64_t seed, const std::string& split) {
  const synth::Corpus c = synth::make_digits28(n, seed);
  RawDataset raw;
  raw.n = c.n;
  raw.h = 28;
  raw.w = 28;
  raw.labels = c.labels;
  raw.source = "mnist";
  raw.split = split;
  raw.images.resize(c.pixels.size());
  for (size_t i = 0; i < c.pixels.size(); ++i)
    raw.images[i] = static_cast<float>(c.pixels[i]) / 255.0f;
  return prepare(raw);
}

std::vector<uint8_t> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

bool params_identical(const VaeModel& a, const VaeModel& b) {
  const auto& pa = a.named_parameters();
  const auto& pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name != pb[i].name) return false;
    const auto da = pa[i].tensor.data();
    const auto db = pb[i].tensor.data();
    if (da.size() != db.size()) return false;
    if (std::memcmp(da.data(), db.data(), da.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

TrainConfig small_config(const std::string& out_dir) {
  TrainConfig cfg;
  cfg.dataset = "mnist";
  cfg.variant = Variant::kQ;
  cfg.lr = 0.001f;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 3;
  cfg.out_dir = out_dir;
  return cfg;
}

}  // namespace

TEST_CASE("checkpoint round-trips bit-exactly with its metadata") {
  const fs::path dir = scratch_dir("roundtrip");
  TrainConfig cfg = small_config(dir.string());
  cfg.variant = Variant::kCdp;
  cfg.epochs = 7;
  cfg.batch_size = 33;
  cfg.seed = 909;
  cfg.lr = 0.0025f;
  cfg.angle_scale = 2.5;

  VaeModel model(cfg.variant, cfg.angle_scale, cfg.seed);
  const fs::path path = dir / "model.ckpt";
  save_checkpoint(model, cfg, path.string());

  CheckpointMeta meta;
  VaeModel loaded = load_checkpoint(path.string(), &meta);
  CHECK(params_identical(model, loaded));
  CHECK(meta.variant == Variant::kCdp);
  CHECK(meta.dataset == "mnist");
  CHECK(meta.lr == 0.0025f);
  CHECK(meta.angle_scale == 2.5);
  CHECK(meta.seed == 909);
  CHECK(meta.epochs == 7);
  CHECK(meta.batch_size == 33);
  CHECK(loaded.variant() == Variant::kCdp);
  CHECK(loaded.angle_scale() == 2.5);
}

TEST_CASE("checkpoint loader rejects corruption") {
  const fs::path dir = scratch_dir("corrupt");
  TrainConfig cfg = small_config(dir.string());
  VaeModel model(cfg.variant, cfg.angle_scale, cfg.seed);
  const fs::path path = dir / "model.ckpt";
  save_checkpoint(model, cfg, path.string());
  const std::vector<uint8_t> good = slurp(path);

  // Quantum bundle: 37024 encoder + 58673 decoder floats plus headers.
  CHECK(good.size() > (37024u + 58673u) * 4);

  std::vector<uint8_t> bad_magic = good;
  bad_magic[0] ^= 0xFF;
  const fs::path p1 = dir / "bad_magic.ckpt";
  spit(p1, bad_magic);
  CHECK_THROWS_AS(load_checkpoint(p1.string()), FormatError);

  std::vector<uint8_t> bad_version = good;
  bad_version[4] = 99;
  const fs::path p2 = dir / "bad_version.ckpt";
  spit(p2, bad_version);
  CHECK_THROWS_AS(load_checkpoint(p2.string()), FormatError);

  std::vector<uint8_t> truncated(good.begin(), good.begin() + good.size() / 2);
  const fs::path p3 = dir / "truncated.ckpt";
  spit(p3, truncated);
  CHECK_THROWS_AS(load_checkpoint(p3.string()), FormatError);

  std::vector<uint8_t> trailing = good;
  trailing.push_back(0);
  const fs::path p4 = dir / "trailing.ckpt";
  spit(p4, trailing);
  CHECK_THROWS_AS(load_checkpoint(p4.string()), FormatError);

  CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), IoError);
}

TEST_CASE("training writes its artifacts and logs finite metrics") {
  const fs::path dir = scratch_dir("smoke");
  const PreparedDataset train_ds = synth_prepared(64, 1, "train");
  const PreparedDataset test_ds = synth_prepared(32, 2, "test");
  TrainConfig cfg = small_config(dir.string());

  VaeModel model(cfg.variant, cfg.angle_scale, cfg.seed);
  const TrainResult res = train(cfg, train_ds, test_ds, model);

  REQUIRE(res.log.size() == 2);
  for (const EpochRecord& r : res.log) {
    CHECK(std::isfinite(r.recon_per_sample));
    CHECK(std::isfinite(r.kl_per_sample));
    CHECK(std::isfinite(r.test_mse));
    CHECK(r.recon_per_sample > 0.0);
    CHECK(r.test_mse >= 0.0);
    CHECK(r.test_mse <= 1.0);
  }
  CHECK(res.log[0].epoch == 1);
  CHECK(res.log[1].epoch == 2);

  REQUIRE(fs::exists(res.checkpoint_path));
  REQUIRE(fs::exists(res.metrics_path));
  CHECK(fs::path(res.checkpoint_path).filename() == "mnist_q.ckpt");
  CHECK(fs::path(res.metrics_path).filename() == "mnist_q_metrics.csv");

  // CSV: header plus one row per epoch, all fields parse as finite numbers.
  std::ifstream csv(res.metrics_path);
  std::string line;
  REQUIRE(std::getline(csv, line));
  CHECK(line == "epoch,recon_per_sample,kl_per_sample,test_mse");
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    std::stringstream ss(line);
    std::string field;
    int fields = 0;
    while (std::getline(ss, field, ',')) {
      ++fields;
      CHECK(std::isfinite(std::stod(field)));
    }
    CHECK(fields == 4);
  }
  CHECK(rows == 2);

  // Reloading the final checkpoint reproduces the logged final test MSE.
  VaeModel reloaded = load_checkpoint(res.checkpoint_path);
  const double mse = evaluate_mse(reloaded, test_ds, cfg.batch_size);
  CHECK(std::abs(mse - res.log.back().test_mse) < 1e-9);
}

TEST_CASE("zero learning rate trains to an unchanged model") {
  const fs::path dir = scratch_dir("lr0");
  const PreparedDataset train_ds = synth_prepared(32, 3, "train");
  const PreparedDataset test_ds = synth_prepared(16, 4, "test");
  TrainConfig cfg = small_config(dir.string());
  cfg.lr = 0.0f;
  cfg.epochs = 1;

  VaeModel model(cfg.variant, cfg.angle_scale, cfg.seed);
  VaeModel pristine(cfg.variant, cfg.angle_scale, cfg.seed);
  train(cfg, train_ds, test_ds, model);
  CHECK(params_identical(model, pristine));
}

TEST_CASE("identical configurations produce byte-identical artifacts") {
  const PreparedDataset train_ds = synth_prepared(64, 5, "train");
  const PreparedDataset test_ds = synth_prepared(32, 6, "test");

  auto run = [&](const std::string& leaf) {
    const fs::path dir = scratch_dir(leaf);
    TrainConfig cfg = small_config(dir.string());
    VaeModel model(cfg.variant, cfg.angle_scale, cfg.seed);
    return train(cfg, train_ds, test_ds, model);
  };
  const TrainResult a = run("runA");
  const TrainResult b = run("runB");
  CHECK(slurp(a.checkpoint_path) == slurp(b.checkpoint_path));
  CHECK(slurp(a.metrics_path) == slurp(b.metrics_path));
}

TEST_CASE("snapshot interval writes intermediate checkpoints") {
  const fs::path dir = scratch_dir("snap");
  const PreparedDataset train_ds = synth_prepared(32, 7, "train");
  const PreparedDataset test_ds = synth_prepared(16, 8, "test");
  TrainConfig cfg = small_config(dir.string());
  cfg.epochs = 3;
  cfg.snapshot_every = 2;

  VaeModel model(cfg.variant, cfg.angle_scale, cfg.seed);
  train(cfg, train_ds, test_ds, model);
  CHECK(fs::exists(dir / "mnist_q_epoch0002.ckpt"));
  CHECK_FALSE(fs::exists(dir / "mnist_q_epoch0001.ckpt"));
  CHECK_FALSE(fs::exists(dir / "mnist_q_epoch0003.ckpt"));  // final file covers it
  CHECK(fs::exists(dir / "mnist_q.ckpt"));
}

TEST_CASE("trainer validates its configuration") {
  const PreparedDataset train_ds = synth_prepared(8, 9, "train");
  const PreparedDataset test_ds = synth_prepared(8, 10, "test");

  TrainConfig cfg = small_config(scratch_dir("validate").string());
  VaeModel model(cfg.variant, cfg.angle_scale, cfg.seed);

  TrainConfig bad = cfg;
  bad.dataset = "usps";  // data says mnist
  CHECK_THROWS_AS(train(bad, train_ds, test_ds, model), ValueError);

  bad = cfg;
  bad.batch_size = 9;  // larger than the training set
  CHECK_THROWS_AS(train(bad, train_ds, test_ds, model), ValueError);

  bad = cfg;
  bad.lr = -0.1f;
  CHECK_THROWS_AS(train(bad, train_ds, test_ds, model), ValueError);

  bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(train(bad, train_ds, test_ds, model), ValueError);
}

TEST_CASE("evaluate_mse matches a closed-form case") {
  // Zeroed decoder emits 0.5 everywhere, so the MSE is mean((x - 0.5)^2).
  const PreparedDataset ds = synth_prepared(10, 11, "test");
  VaeModel model(Variant::kCdp, kDefaultAngleScale, 1);
  for (Tensor& p : model.parameters())
    for (float& v : p.data()) v = 0.0f;
  const double got = evaluate_mse(model, ds, 4);

  double acc = 0.0;
  for (float v : ds.images) {
    const double d = static_cast<double>(v) - 0.5;
    acc += d * d;
  }
  const double expect = acc / static_cast<double>(ds.images.size());
  CHECK(got == doctest::Approx(expect).epsilon(1e-7));
}
