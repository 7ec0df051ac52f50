#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qvae/data.hpp"
#include "qvae/error.hpp"
#include "qvae/metrics.hpp"
#include "qvae/models.hpp"
#include "qvae/trainer.hpp"

namespace {

using namespace qvae;

PreparedDataset take_subset(PreparedDataset ds, int n) {
  if (n <= 0 || n >= ds.n) return ds;
  ds.n = n;
  ds.images.resize(static_cast<size_t>(n) * 1024);
  ds.labels.resize(n);
  return ds;
}

Tensor sample_latents(int count, Rng& rng) {
  Tensor z = Tensor::zeros({count, VaeModel::kLatentDim});
  for (float& v : z.data()) v = static_cast<float>(rng.normal());
  return z;
}

Tensor first_images(const PreparedDataset& ds, int count) {
  Tensor x = Tensor::zeros({count, 1, 32, 32});
  std::copy_n(ds.images.data(), static_cast<size_t>(count) * 1024, x.data().data());
  return x;
}

int cmd_train(const std::string& dataset, const std::string& variant,
              const std::string& data_dir, const std::string& out, int epochs,
              int batch_size, float lr, uint64_t seed, double angle_scale, int subset,
              bool deterministic, int snapshot_every) {
  TrainConfig cfg;
  cfg.dataset = dataset;
  cfg.variant = variant_from_string(variant);
  cfg.lr = lr;
  cfg.epochs = epochs;
  cfg.batch_size = batch_size;
  cfg.seed = seed;
  cfg.angle_scale = angle_scale;
  cfg.deterministic = deterministic;
  cfg.out_dir = out;
  cfg.snapshot_every = snapshot_every;

  PreparedDataset train_ds = take_subset(load_prepared(data_dir, dataset, "train"), subset);
  PreparedDataset test_ds = load_prepared(data_dir, dataset, "test");
  VaeModel model(cfg.variant, cfg.angle_scale, cfg.seed);
  const ParamCount pc = model.param_count();
  std::printf("training %s on %s: %lld encoder + %lld decoder = %lld parameters, %d samples\n",
              variant.c_str(), dataset.c_str(), static_cast<long long>(pc.encoder),
              static_cast<long long>(pc.decoder), static_cast<long long>(pc.total),
              train_ds.n);

  TrainResult result = train(cfg, train_ds, test_ds, model);
  for (const EpochRecord& r : result.log) {
    std::printf("epoch %d/%d  recon %.4f  kl %.4f  test_mse %.6f\n", r.epoch, epochs,
                r.recon_per_sample, r.kl_per_sample, r.test_mse);
  }
  std::printf("checkpoint: %s\nmetrics: %s\n", result.checkpoint_path.c_str(),
              result.metrics_path.c_str());
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& data_dir,
                 int fid_samples, const std::string& out) {
  CheckpointMeta meta;
  VaeModel model = load_checkpoint(checkpoint, &meta);
  PreparedDataset train_ds = load_prepared(data_dir, meta.dataset, "train");
  PreparedDataset test_ds = load_prepared(data_dir, meta.dataset, "test");

  const double test_mse = evaluate_mse(model, test_ds, 256);

  FeatureExtractor fx(meta.seed);
  const FeatureExtractor::TrainSummary fxs = fx.fit(train_ds, test_ds);
  if (!fxs.reached_floor) {
    std::fprintf(stderr,
                 "warning: feature extractor accuracy %.4f below the %.2f floor; "
                 "distance values may not be meaningful\n",
                 fxs.test_accuracy, fxs.accuracy_floor);
  }

  const int n = std::min(fid_samples, test_ds.n);
  if (n < 2) throw ValueError("need at least 2 evaluation samples");
  Tensor real = first_images(test_ds, n);
  Tensor recon, generated;
  {
    NoGradGuard guard;
    auto [mu, logvar] = model.encode(real);
    recon = model.decode(mu);
    Rng gen_rng = Rng(meta.seed).derive("generate");
    generated = model.decode(sample_latents(n, gen_rng));
  }
  const FidResult fid_recon = fid_report(real, recon, fx);
  const FidResult fid_gen = fid_report(real, generated, fx);
  if (!fid_recon.warning.empty())
    std::fprintf(stderr, "warning: %s\n", fid_recon.warning.c_str());

  std::ofstream f(out, std::ios::trunc);
  if (!f) throw IoError("cannot write " + out);
  const std::string variant = to_string(meta.variant);
  char line[160];
  f << "metric,dataset,variant,value\n";
  std::snprintf(line, sizeof line, "mse,%s,%s,%.12g\n", meta.dataset.c_str(),
                variant.c_str(), test_mse);
  f << line;
  std::snprintf(line, sizeof line, "fid_reconstruction,%s,%s,%.12g\n",
                meta.dataset.c_str(), variant.c_str(), fid_recon.value);
  f << line;
  std::snprintf(line, sizeof line, "fid_generation,%s,%s,%.12g\n", meta.dataset.c_str(),
                variant.c_str(), fid_gen.value);
  f << line;
  std::snprintf(line, sizeof line, "fx_accuracy,%s,%s,%.12g\n", meta.dataset.c_str(),
                variant.c_str(), fxs.test_accuracy);
  f << line;
  if (!f) throw IoError("write failed for " + out);

  std::printf("mse %.6f  fid_reconstruction %.3f  fid_generation %.3f (proxy embedding, "
              "not comparable with published values)\n",
              test_mse, fid_recon.value, fid_gen.value);
  std::printf("report: %s\n", out.c_str());
  return 0;
}

int cmd_reconstruct(const std::string& checkpoint, const std::string& data_dir, int count,
                    const std::string& out) {
  CheckpointMeta meta;
  VaeModel model = load_checkpoint(checkpoint, &meta);
  PreparedDataset test_ds = load_prepared(data_dir, meta.dataset, "test");
  const int n = std::min(count, test_ds.n);
  Tensor x = first_images(test_ds, n);
  NoGradGuard guard;
  auto [mu, logvar] = model.encode(x);
  Tensor xhat = model.decode(mu);
  // Rows pair each input with its reconstruction.
  Tensor paired = Tensor::zeros({2 * n, 1, 32, 32});
  auto pv = paired.data();
  const auto xv = x.data(), hv = xhat.data();
  for (int i = 0; i < n; ++i) {
    std::copy_n(xv.data() + static_cast<size_t>(i) * 1024, 1024,
                pv.data() + static_cast<size_t>(2 * i) * 1024);
    std::copy_n(hv.data() + static_cast<size_t>(i) * 1024, 1024,
                pv.data() + static_cast<size_t>(2 * i + 1) * 1024);
  }
  image_grid_pgm(paired, 2, out);
  std::printf("wrote %d input/reconstruction pairs to %s\n", n, out.c_str());
  return 0;
}

int cmd_generate(const std::string& checkpoint, int count, uint64_t seed,
                 const std::string& out) {
  VaeModel model = load_checkpoint(checkpoint);
  NoGradGuard guard;
  Rng rng = Rng(seed).derive("generate");
  Tensor images = model.decode(sample_latents(count, rng));
  const int columns = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count))));
  image_grid_pgm(images, columns, out);
  std::printf("wrote %d generated images to %s\n", count, out.c_str());
  return 0;
}

int cmd_latent(const std::string& checkpoint, const std::string& data_dir,
               const std::string& out, int gmm_k) {
  CheckpointMeta meta;
  VaeModel model = load_checkpoint(checkpoint, &meta);
  PreparedDataset test_ds = load_prepared(data_dir, meta.dataset, "test");
  export_latents(model, test_ds, out);
  std::printf("wrote %d latent rows to %s\n", test_ds.n, out.c_str());

  if (gmm_k > 0) {
    NoGradGuard guard;
    std::vector<double> rows(static_cast<size_t>(test_ds.n) * VaeModel::kLatentDim);
    Batcher batches(test_ds, 256, false);
    size_t at = 0;
    for (int b = 0; b < batches.num_batches(); ++b) {
      auto [mu, logvar] = model.encode(batches.batch_images(b));
      for (float v : mu.data()) rows[at++] = v;
    }
    GmmModel gm = gmm_fit(rows, test_ds.n, VaeModel::kLatentDim, gmm_k, meta.seed);
    std::printf("gmm: %d components, %d iterations, final log-likelihood %.4f\n", gmm_k,
                gm.iterations, gm.ll_trace.back());
    std::printf("weights:");
    for (double w : gm.weights) std::printf(" %.4f", w);
    std::printf("\n");
  }
  return 0;
}

int cmd_info(const std::string& checkpoint) {
  CheckpointMeta meta;
  VaeModel model = load_checkpoint(checkpoint, &meta);
  const ParamCount pc = model.param_count();
  std::printf("variant: %s\ndataset: %s\nangle_scale: %.12g\nseed: %llu\n",
              to_string(meta.variant).c_str(), meta.dataset.c_str(), meta.angle_scale,
              static_cast<unsigned long long>(meta.seed));
  std::printf("encoder parameters: %lld\ndecoder parameters: %lld\ntotal parameters: %lld\n",
              static_cast<long long>(pc.encoder), static_cast<long long>(pc.decoder),
              static_cast<long long>(pc.total));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational autoencoders with classical and quantum down-sampling front-ends"};
  app.require_subcommand(1);

  std::string dataset, variant, data_dir, out, checkpoint;
  int epochs = 200, batch_size = 400, subset = 0, snapshot_every = 0;
  int fid_samples = 1000, count = 8, gmm_k = 10;
  float lr = 0.001f;
  uint64_t seed = 0;
  double angle_scale = kDefaultAngleScale;
  bool deterministic = false;

  CLI::App* train = app.add_subcommand("train", "Train one VAE variant");
  train->add_option("--dataset", dataset, "mnist|usps")->required();
  train->add_option("--variant", variant, "c|cdp|q")->required();
  train->add_option("--data-dir", data_dir, "directory with the dataset files")->required();
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--epochs", epochs)->check(CLI::Range(1, 100000));
  train->add_option("--batch-size", batch_size)->check(CLI::Range(1, 1000000));
  train->add_option("--lr", lr)->check(CLI::PositiveNumber);
  train->add_option("--seed", seed);
  train->add_option("--angle-scale", angle_scale)->check(CLI::PositiveNumber);
  train->add_option("--subset", subset, "cap the training set size (0 = full)");
  train->add_option("--snapshot-every", snapshot_every, "extra checkpoint every N epochs");
  train->add_flag("--deterministic", deterministic, "fixed reduction order everywhere");

  CLI::App* evaluate = app.add_subcommand("evaluate", "MSE and proxy distance report");
  evaluate->add_option("--checkpoint", checkpoint)->required();
  evaluate->add_option("--data-dir", data_dir)->required();
  evaluate->add_option("--fid-samples", fid_samples)->check(CLI::Range(2, 1000000));
  evaluate->add_option("--out", out, "report CSV path")->required();

  CLI::App* reconstruct = app.add_subcommand("reconstruct", "Paired input/output grid");
  reconstruct->add_option("--checkpoint", checkpoint)->required();
  reconstruct->add_option("--data-dir", data_dir)->required();
  reconstruct->add_option("--count", count)->check(CLI::Range(1, 100000));
  reconstruct->add_option("--out", out, "PGM path")->required();

  CLI::App* generate = app.add_subcommand("generate", "Decode standard-normal latents");
  generate->add_option("--checkpoint", checkpoint)->required();
  generate->add_option("--count", count)->check(CLI::Range(1, 100000));
  generate->add_option("--seed", seed);
  generate->add_option("--out", out, "PGM path")->required();

  CLI::App* latent = app.add_subcommand("latent", "Export latent means, fit a GMM");
  latent->add_option("--checkpoint", checkpoint)->required();
  latent->add_option("--data-dir", data_dir)->required();
  latent->add_option("--out", out, "CSV path")->required();
  latent->add_option("--gmm-k", gmm_k, "mixture components (0 skips the fit)");

  CLI::App* info = app.add_subcommand("info", "Print checkpoint metadata and counts");
  info->add_option("--checkpoint", checkpoint)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage problems are exit 1, help is success
  }

  try {
    if (app.got_subcommand(train))
      return cmd_train(dataset, variant, data_dir, out, epochs, batch_size, lr, seed,
                       angle_scale, subset, deterministic, snapshot_every);
    if (app.got_subcommand(evaluate))
      return cmd_evaluate(checkpoint, data_dir, fid_samples, out);
    if (app.got_subcommand(reconstruct))
      return cmd_reconstruct(checkpoint, data_dir, count, out);
    if (app.got_subcommand(generate)) return cmd_generate(checkpoint, count, seed, out);
    if (app.got_subcommand(latent)) return cmd_latent(checkpoint, data_dir, out, gmm_k);
    if (app.got_subcommand(info)) return cmd_info(checkpoint);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
