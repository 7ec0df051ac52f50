#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qvae/data.hpp"
#include "qvae/models.hpp"

namespace qvae {

inline constexpr double kDefaultAngleScale = 3.141592653589793;

struct TrainConfig {
  std::string dataset = "mnist";  // mnist | usps
  Variant variant = Variant::kC;
  float lr = 0.001f;
  int epochs = 200;
  int batch_size = 400;
  uint64_t seed = 0;
  double angle_scale = kDefaultAngleScale;
  bool deterministic = true;
  std::string out_dir = ".";
  int snapshot_every = 0;  // 0 writes only the final checkpoint
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double recon_per_sample = 0.0;
  double kl_per_sample = 0.0;
  double test_mse = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::string checkpoint_path;
  std::string metrics_path;
};

// Mean squared pixel error of deterministic reconstructions (z = mu) over the
// whole set, accumulated in double in a fixed order.
double evaluate_mse(const VaeModel& model, const PreparedDataset& ds, int batch_size);

// Full training run: per epoch a seeded shuffle (seed + epoch index), a sweep
// over full batches (short tail dropped), Adam on the total ELBO loss, then a
// test-set MSE evaluation. Writes the metrics CSV and the final checkpoint.
TrainResult train(const TrainConfig& cfg, const PreparedDataset& train_ds,
                  const PreparedDataset& test_ds, VaeModel& model);

struct CheckpointMeta {
  Variant variant = Variant::kC;
  std::string dataset;
  bool deterministic = true;
  float lr = 0.0f;
  double angle_scale = kDefaultAngleScale;
  uint64_t seed = 0;
  int epochs = 0;
  int batch_size = 0;
};

void save_checkpoint(const VaeModel& model, const TrainConfig& cfg,
                     const std::string& path);

// Rebuilds the bundle for the stored variant and overwrites its parameters
// bit-exactly. Rejects bad magic, unknown versions and shape mismatches.
VaeModel load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

void write_metrics_csv(const std::vector<EpochRecord>& log, const std::string& path);

}  // namespace qvae
