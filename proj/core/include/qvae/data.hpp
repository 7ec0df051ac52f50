#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qvae/rng.hpp"
#include "qvae/tensor.hpp"

namespace qvae {

// Decompresses when the buffer carries the gzip magic, otherwise returns as-is.
std::vector<uint8_t> maybe_gunzip(std::vector<uint8_t> bytes);
std::vector<uint8_t> read_file_bytes(const std::string& path);

enum class IdxKind { kImages, kLabels };

struct IdxArrays {
  int n = 0, h = 0, w = 0;          // h, w zero for labels
  std::vector<float> images;        // pixels scaled to [0,1]
  std::vector<uint8_t> labels;
};

// Big-endian IDX container, transparently gunzipped. Images expect magic 2051,
// labels 2049; payload length must match the header exactly.
IdxArrays read_idx(const std::string& path, IdxKind kind);

struct RawDataset {
  int n = 0, h = 0, w = 0;
  std::vector<float> images;        // n*h*w, row-major, in [0,1]
  std::vector<uint8_t> labels;      // digits 0..9
  std::string source;               // "mnist" | "usps"
  std::string split;                // "train" | "test"
};

// Classic zip.train/zip.test text layout: label then 256 reals in [-1,1] per
// line, remapped to [0,1].
RawDataset read_usps_text(const std::string& path, const std::string& split);

// Window centered with floor rounding of the offsets.
std::vector<float> center_crop(const std::vector<float>& img, int h, int w, int size);

// Half-pixel-center convention: src = (i + 0.5) * in / out - 0.5, clamped.
std::vector<float> resize_bilinear(const std::vector<float>& img, int h, int w,
                                   int out_h, int out_w);

// MNIST: crop 28 -> 20, resize 20 -> 16 -> 32. USPS: resize 16 -> 32.
std::vector<float> preprocess_mnist(const std::vector<float>& img28);
std::vector<float> preprocess_usps(const std::vector<float>& img16);

struct PreparedDataset {
  int n = 0;
  std::vector<float> images;        // n*1024 flattened 32x32 inputs in [0,1]
  std::vector<uint8_t> labels;
  std::string source;
  std::string split;
};

PreparedDataset prepare(const RawDataset& raw);

// Locates the conventional file names under dir (each also tried with ".gz"):
// MNIST train-images-idx3-ubyte / train-labels-idx1-ubyte and the t10k pair,
// USPS zip.train / zip.test.
RawDataset load_mnist(const std::string& dir, const std::string& split);
RawDataset load_usps(const std::string& dir, const std::string& split);
PreparedDataset load_prepared(const std::string& dir, const std::string& dataset,
                              const std::string& split);

// Deterministic batch iteration. Training drops a short tail batch so step
// shapes stay constant; evaluation keeps it.
class Batcher {
 public:
  Batcher(const PreparedDataset& ds, int batch, bool drop_last);

  int num_batches() const { return num_batches_; }
  void shuffle(uint64_t seed);  // Fisher-Yates over sample indices
  void sequential();

  Tensor batch_images(int b) const;  // [B,1,32,32]
  std::vector<int> batch_labels(int b) const;
  int batch_size(int b) const;

 private:
  const PreparedDataset* ds_;
  int batch_;
  bool drop_last_;
  int num_batches_;
  std::vector<int> order_;
};

}  // namespace qvae
