#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#ifndef _WIN32
#include <sys/wait.h>
#endif

#include "doctest.h"
#include "support/synth_digits.hpp"

// End-to-end checks against the installed command-line binary, driven through
// the shell. QVAE_CLI_PATH is injected by the build.

namespace fs = std::filesystem;

namespace {

fs::path scratch_root() {
  const fs::path p = fs::temp_directory_path() / "qvae_cli_tests";
  fs::create_directories(p);
  return p;
}

int run(const std::string& args, std::string* output = nullptr) {
  static int counter = 0;
  const fs::path cap = scratch_root() / ("capture_" + std::to_string(counter++) + ".txt");
  const std::string cmd =
      std::string(QVAE_CLI_PATH) + " " + args + " > " + cap.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream f(cap);
    output->assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }
#ifdef _WIN32
  return status;
#else
  return WEXITSTATUS(status);
#endif
}

std::vector<uint8_t> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

struct Fixture {
  fs::path data_dir;
  fs::path out_dir;
  fs::path checkpoint;
  std::string train_output;
  int train_exit = -1;
};

// One tiny training run shared by the read-only subcommand tests.
const Fixture& fixture() {
  static Fixture fx = [] {
    Fixture f;
    f.data_dir = scratch_root() / "data";
    f.out_dir = scratch_root() / "out";
    fs::create_directories(f.data_dir);
    fs::create_directories(f.out_dir);
    synth::write_mnist_layout(f.data_dir.string(), 160, 48, 2027);
    f.train_exit = run("train --dataset mnist --variant q --data-dir " +
                           f.data_dir.string() + " --out " + f.out_dir.string() +
                           " --epochs 1 --batch-size 16 --subset 64 --seed 3",
                       &f.train_output);
    f.checkpoint = f.out_dir / "mnist_q.ckpt";
    return f;
  }();
  return fx;
}

}  // namespace

TEST_CASE("usage errors exit 1, help exits 0") {
  CHECK(run("") == 1);
  CHECK(run("--help") == 0);
  CHECK(run("train --help") == 0);

  std::string out;
  CHECK(run("train --no-such-flag", &out) == 1);
  CHECK(run("bogus-subcommand") == 1);
  CHECK(run("train") == 1);  // missing required options

  // Out-of-range values are parse errors, not crashes.
  const std::string base = "train --dataset mnist --variant q --data-dir d --out o ";
  CHECK(run(base + "--epochs 0") == 1);
  CHECK(run(base + "--batch-size 0") == 1);
  CHECK(run(base + "--lr -0.5") == 1);
  CHECK(run(base + "--angle-scale 0") == 1);
}

TEST_CASE("runtime failures exit 2") {
  std::string out;
  CHECK(run("info --checkpoint /nonexistent/model.ckpt", &out) == 2);
  CHECK(out.find("error:") != std::string::npos);

  const Fixture& fx = fixture();
  REQUIRE(fx.train_exit == 0);
  // Valid flags, bad data directory.
  CHECK(run("reconstruct --checkpoint " + fx.checkpoint.string() +
            " --data-dir /nonexistent --count 2 --out " +
            (scratch_root() / "x.pgm").string()) == 2);
  // Unknown dataset name inside an otherwise well-formed invocation.
  CHECK(run("train --dataset emnist --variant q --data-dir " + fx.data_dir.string() +
            " --out " + fx.out_dir.string()) == 2);
}

TEST_CASE("train writes checkpoint and metrics and reports progress") {
  const Fixture& fx = fixture();
  REQUIRE(fx.train_exit == 0);
  CHECK(fs::exists(fx.checkpoint));
  CHECK(fs::exists(fx.out_dir / "mnist_q_metrics.csv"));
  CHECK(fx.train_output.find("epoch 1/1") != std::string::npos);
  CHECK(fx.train_output.find("37024 encoder") != std::string::npos);
  CHECK(fx.train_output.find("58673 decoder") != std::string::npos);
}

TEST_CASE("info prints the parameter budget") {
  const Fixture& fx = fixture();
  REQUIRE(fx.train_exit == 0);
  std::string out;
  CHECK(run("info --checkpoint " + fx.checkpoint.string(), &out) == 0);
  CHECK(out.find("variant: q") != std::string::npos);
  CHECK(out.find("dataset: mnist") != std::string::npos);
  CHECK(out.find("encoder parameters: 37024") != std::string::npos);
  CHECK(out.find("decoder parameters: 58673") != std::string::npos);
  CHECK(out.find("total parameters: 95697") != std::string::npos);
}

TEST_CASE("generate is deterministic in the seed") {
  const Fixture& fx = fixture();
  REQUIRE(fx.train_exit == 0);
  const fs::path g1 = scratch_root() / "gen1.pgm";
  const fs::path g2 = scratch_root() / "gen2.pgm";
  const fs::path g3 = scratch_root() / "gen3.pgm";
  const std::string base = "generate --checkpoint " + fx.checkpoint.string() + " --count 4 ";
  CHECK(run(base + "--seed 9 --out " + g1.string()) == 0);
  CHECK(run(base + "--seed 9 --out " + g2.string()) == 0);
  CHECK(run(base + "--seed 10 --out " + g3.string()) == 0);
  CHECK(slurp(g1) == slurp(g2));
  CHECK(slurp(g1) != slurp(g3));

  // 4 images in ceil(sqrt(4)) = 2 columns: 66x66 canvas.
  std::ifstream f(g1, std::ios::binary);
  std::string magic;
  int w = 0, h = 0;
  f >> magic >> w >> h;
  CHECK(magic == "P5");
  CHECK(w == 66);
  CHECK(h == 66);
}

TEST_CASE("reconstruct pairs inputs with outputs") {
  const Fixture& fx = fixture();
  REQUIRE(fx.train_exit == 0);
  const fs::path out = scratch_root() / "recon.pgm";
  std::string text;
  CHECK(run("reconstruct --checkpoint " + fx.checkpoint.string() + " --data-dir " +
                fx.data_dir.string() + " --count 3 --out " + out.string(),
            &text) == 0);
  CHECK(text.find("3 input/reconstruction pairs") != std::string::npos);

  std::ifstream f(out, std::ios::binary);
  std::string magic;
  int w = 0, h = 0;
  f >> magic >> w >> h;
  CHECK(magic == "P5");
  CHECK(w == 66);   // two columns of 32 plus one separator
  CHECK(h == 100);  // three rows of 32 plus two separators
}

TEST_CASE("latent exports labeled means and a mixture summary") {
  const Fixture& fx = fixture();
  REQUIRE(fx.train_exit == 0);
  const fs::path out = scratch_root() / "latents.csv";
  std::string text;
  CHECK(run("latent --checkpoint " + fx.checkpoint.string() + " --data-dir " +
                fx.data_dir.string() + " --gmm-k 2 --out " + out.string(),
            &text) == 0);
  CHECK(text.find("48 latent rows") != std::string::npos);
  CHECK(text.find("gmm: 2 components") != std::string::npos);

  std::ifstream f(out);
  std::string line;
  REQUIRE(std::getline(f, line));
  CHECK(line.rfind("label,mu_0,", 0) == 0);
  int rows = 0;
  while (std::getline(f, line)) ++rows;
  CHECK(rows == 48);
}

TEST_CASE("evaluate writes the four-row metric report") {
  const Fixture& fx = fixture();
  REQUIRE(fx.train_exit == 0);
  const fs::path out = scratch_root() / "report.csv";
  std::string text;
  CHECK(run("evaluate --checkpoint " + fx.checkpoint.string() + " --data-dir " +
                fx.data_dir.string() + " --fid-samples 48 --out " + out.string(),
            &text) == 0);

  std::ifstream f(out);
  std::string line;
  REQUIRE(std::getline(f, line));
  CHECK(line == "metric,dataset,variant,value");
  std::vector<std::string> metrics;
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string metric, dataset, variant, value;
    REQUIRE(std::getline(ss, metric, ','));
    REQUIRE(std::getline(ss, dataset, ','));
    REQUIRE(std::getline(ss, variant, ','));
    REQUIRE(std::getline(ss, value, ','));
    CHECK(dataset == "mnist");
    CHECK(variant == "q");
    CHECK(std::isfinite(std::stod(value)));
    metrics.push_back(metric);
  }
  const std::vector<std::string> expect = {"mse", "fid_reconstruction", "fid_generation",
                                           "fx_accuracy"};
  CHECK(metrics == expect);
}
