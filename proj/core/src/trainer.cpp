#include "qvae/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "qvae/adam.hpp"
#include "qvae/error.hpp"
#include "qvae/ops.hpp"

namespace qvae {

namespace {

void validate(const TrainConfig& cfg) {
  if (cfg.dataset != "mnist" && cfg.dataset != "usps")
    throw ValueError("dataset must be mnist|usps");
  if (cfg.lr < 0.0f) throw ValueError("learning rate must be >= 0");
  if (cfg.epochs < 1) throw ValueError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ValueError("batch size must be >= 1");
  if (cfg.angle_scale <= 0.0) throw ValueError("angle scale must be positive");
}

std::string run_stem(const TrainConfig& cfg) {
  return cfg.dataset + "_" + to_string(cfg.variant);
}

}  // namespace

double evaluate_mse(const VaeModel& model, const PreparedDataset& ds, int batch_size) {
  NoGradGuard guard;
  Batcher batches(ds, batch_size, false);
  double sq = 0.0;
  int64_t pixels = 0;
  for (int b = 0; b < batches.num_batches(); ++b) {
    Tensor x = batches.batch_images(b);
    auto [mu, logvar] = model.encode(x);
    Tensor xhat = model.decode(mu);
    const auto xv = x.data(), hv = xhat.data();
    for (size_t i = 0; i < xv.size(); ++i) {
      const double d = static_cast<double>(xv[i]) - hv[i];
      sq += d * d;
    }
    pixels += static_cast<int64_t>(xv.size());
  }
  return sq / static_cast<double>(pixels);
}

TrainResult train(const TrainConfig& cfg, const PreparedDataset& train_ds,
                  const PreparedDataset& test_ds, VaeModel& model) {
  validate(cfg);
  if (train_ds.source != cfg.dataset) {
    throw ValueError("config dataset '" + cfg.dataset + "' does not match data '" +
                     train_ds.source + "'");
  }
  if (train_ds.n < cfg.batch_size) {
    throw ValueError("training set smaller than one batch (" +
                     std::to_string(train_ds.n) + " < " + std::to_string(cfg.batch_size) +
                     ")");
  }
  std::filesystem::create_directories(cfg.out_dir);

  Adam opt(model.parameters(), cfg.lr);
  Rng noise_rng = Rng(cfg.seed).derive("noise");
  Batcher batches(train_ds, cfg.batch_size, true);

  TrainResult result;
  const std::string stem = cfg.out_dir + "/" + run_stem(cfg);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    batches.shuffle(cfg.seed + static_cast<uint64_t>(epoch));
    double sum_recon = 0.0, sum_kl = 0.0;
    int64_t samples = 0;
    for (int b = 0; b < batches.num_batches(); ++b) {
      Tensor x = batches.batch_images(b);
      VaeModel::Forward f = model.forward(x, noise_rng);
      ElboTerms terms = elbo_loss(x, f.xhat, f.mu, f.logvar);
      const double total = terms.total.item();
      if (!std::isfinite(total)) {
        throw Error("non-finite loss at epoch " + std::to_string(epoch + 1) + " step " +
                    std::to_string(b + 1));
      }
      opt.zero_grad();
      backward(terms.total);
      opt.step();
      sum_recon += terms.reconstruction.item();
      sum_kl += terms.kl.item();
      samples += x.dim(0);
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.recon_per_sample = sum_recon / static_cast<double>(samples);
    rec.kl_per_sample = sum_kl / static_cast<double>(samples);
    rec.test_mse = evaluate_mse(model, test_ds, cfg.batch_size);
    if (!std::isfinite(rec.recon_per_sample) || !std::isfinite(rec.kl_per_sample) ||
        !std::isfinite(rec.test_mse)) {
      throw Error("non-finite metric at epoch " + std::to_string(epoch + 1));
    }
    result.log.push_back(rec);
    if (cfg.snapshot_every > 0 && (epoch + 1) % cfg.snapshot_every == 0 &&
        epoch + 1 != cfg.epochs) {
      char suffix[32];
      std::snprintf(suffix, sizeof suffix, "_epoch%04d.ckpt", epoch + 1);
      save_checkpoint(model, cfg, stem + suffix);
    }
  }

  result.checkpoint_path = stem + ".ckpt";
  result.metrics_path = stem + "_metrics.csv";
  save_checkpoint(model, cfg, result.checkpoint_path);
  write_metrics_csv(result.log, result.metrics_path);
  return result;
}

namespace {

constexpr char kMagic[4] = {'Q', 'V', 'A', 'E'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<uint32_t>(v)); }
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

class Reader {
 public:
  Reader(const uint8_t* p, size_t n, std::string path)
      : p_(p), n_(n), path_(std::move(path)) {}

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  uint8_t u8() {
    need(1);
    return p_[pos_++];
  }
  std::string str(size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), len);
    pos_ += len;
    return s;
  }
  void f32_block(float* dst, size_t count) {
    need(count * 4);
    for (size_t i = 0; i < count; ++i) {
      uint32_t v = 0;
      for (int b = 0; b < 4; ++b)
        v |= static_cast<uint32_t>(p_[pos_ + 4 * i + b]) << (8 * b);
      dst[i] = std::bit_cast<float>(v);
    }
    pos_ += count * 4;
  }
  bool exhausted() const { return pos_ == n_; }

 private:
  void need(size_t k) const {
    if (n_ - pos_ < k) throw FormatError(path_ + ": truncated checkpoint");
  }
  const uint8_t* p_;
  size_t n_, pos_ = 0;
  std::string path_;
};

uint8_t variant_tag(Variant v) { return static_cast<uint8_t>(v); }

Variant variant_from_tag(uint8_t t, const std::string& path) {
  if (t > 2) throw FormatError(path + ": unknown variant tag " + std::to_string(t));
  return static_cast<Variant>(t);
}

}  // namespace

void save_checkpoint(const VaeModel& model, const TrainConfig& cfg,
                     const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  out.push_back(static_cast<char>(variant_tag(model.variant())));
  out.push_back(static_cast<char>(cfg.dataset == "usps" ? 1 : 0));
  out.push_back(static_cast<char>(cfg.deterministic ? 1 : 0));
  out.push_back(0);  // reserved
  put_f32(out, cfg.lr);
  put_f64(out, model.angle_scale());
  put_u64(out, cfg.seed);
  put_u32(out, static_cast<uint32_t>(cfg.epochs));
  put_u32(out, static_cast<uint32_t>(cfg.batch_size));
  const auto& named = model.named_parameters();
  put_u32(out, static_cast<uint32_t>(named.size()));
  for (const NamedParam& p : named) {
    put_u32(out, static_cast<uint32_t>(p.name.size()));
    out.append(p.name);
    put_u32(out, static_cast<uint32_t>(p.tensor.rank()));
    for (int d = 0; d < p.tensor.rank(); ++d)
      put_u32(out, static_cast<uint32_t>(p.tensor.dim(d)));
    for (float v : p.tensor.data()) put_f32(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path);
}

VaeModel load_checkpoint(const std::string& path, CheckpointMeta* meta_out) {
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  Reader r(bytes.data(), bytes.size(), path);
  if (r.str(4) != std::string(kMagic, 4)) throw FormatError(path + ": bad magic");
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointMeta meta;
  meta.variant = variant_from_tag(r.u8(), path);
  meta.dataset = r.u8() == 1 ? "usps" : "mnist";
  meta.deterministic = r.u8() != 0;
  r.u8();  // reserved
  meta.lr = r.f32();
  meta.angle_scale = r.f64();
  meta.seed = r.u64();
  meta.epochs = static_cast<int>(r.u32());
  meta.batch_size = static_cast<int>(r.u32());

  VaeModel model(meta.variant, meta.angle_scale, meta.seed);
  const auto& named = model.named_parameters();
  const uint32_t count = r.u32();
  if (count != named.size()) {
    throw FormatError(path + ": " + std::to_string(count) + " tensors, expected " +
                      std::to_string(named.size()) + " for variant " +
                      to_string(meta.variant));
  }
  for (const NamedParam& p : named) {
    const std::string name = r.str(r.u32());
    if (name != p.name) throw FormatError(path + ": unexpected tensor '" + name + "'");
    const uint32_t rank = r.u32();
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(r.u32());
    if (shape != p.tensor.shape()) {
      throw FormatError(path + ": tensor '" + name + "' has shape " + shape_str(shape) +
                        ", expected " + shape_str(p.tensor.shape()));
    }
    Tensor dst = p.tensor;  // handle copy, shares the parameter storage
    r.f32_block(dst.data().data(), dst.size());
  }
  if (!r.exhausted()) throw FormatError(path + ": trailing bytes after tensor table");
  if (meta_out) *meta_out = meta;
  return model;
}

void write_metrics_csv(const std::vector<EpochRecord>& log, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << "epoch,recon_per_sample,kl_per_sample,test_mse\n";
  char line[160];
  for (const EpochRecord& r : log) {
    std::snprintf(line, sizeof line, "%d,%.12g,%.12g,%.12g\n", r.epoch,
                  r.recon_per_sample, r.kl_per_sample, r.test_mse);
    f << line;
  }
  if (!f) throw IoError("write failed for " + path);
}

}  // namespace qvae
