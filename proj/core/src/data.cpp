#include "qvae/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qvae/error.hpp"

namespace qvae {

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path);
  return bytes;
}

std::vector<uint8_t> maybe_gunzip(std::vector<uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 0x1f || bytes[1] != 0x8b) return bytes;
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK)
    throw IoError("zlib initialization failed");
  zs.next_in = bytes.data();
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::vector<uint8_t> out;
  std::vector<uint8_t> chunk(1 << 18);
  int ret = Z_OK;
  while (ret != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    ret = inflate(&zs, Z_NO_FLUSH);
    if (ret != Z_OK && ret != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError("corrupt gzip stream (zlib code " + std::to_string(ret) + ")");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

namespace {

uint32_t read_be32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

}  // namespace

IdxArrays read_idx(const std::string& path, IdxKind kind) {
  const std::vector<uint8_t> bytes = maybe_gunzip(read_file_bytes(path));
  const uint32_t want_magic = kind == IdxKind::kImages ? 2051u : 2049u;
  const size_t header = kind == IdxKind::kImages ? 16 : 8;
  if (bytes.size() < header) throw FormatError(path + ": truncated IDX header");
  const uint32_t magic = read_be32(bytes.data());
  if (magic != want_magic) {
    throw FormatError(path + ": wrong magic " + std::to_string(magic) + ", expected " +
                      std::to_string(want_magic));
  }
  IdxArrays out;
  out.n = static_cast<int>(read_be32(bytes.data() + 4));
  size_t payload = static_cast<size_t>(out.n);
  if (kind == IdxKind::kImages) {
    out.h = static_cast<int>(read_be32(bytes.data() + 8));
    out.w = static_cast<int>(read_be32(bytes.data() + 12));
    if (out.h <= 0 || out.w <= 0) throw FormatError(path + ": non-positive extents");
    payload = static_cast<size_t>(out.n) * out.h * out.w;
  }
  if (bytes.size() - header < payload) throw FormatError(path + ": truncated payload");
  if (bytes.size() - header > payload)
    throw FormatError(path + ": payload longer than header dimensions");
  const uint8_t* p = bytes.data() + header;
  if (kind == IdxKind::kImages) {
    out.images.resize(payload);
    for (size_t i = 0; i < payload; ++i) out.images[i] = p[i] / 255.0f;
  } else {
    out.labels.assign(p, p + payload);
    for (uint8_t l : out.labels)
      if (l > 9) throw FormatError(path + ": label " + std::to_string(l) + " out of 0..9");
  }
  return out;
}

RawDataset read_usps_text(const std::string& path, const std::string& split) {
  const std::vector<uint8_t> bytes = maybe_gunzip(read_file_bytes(path));
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  RawDataset out;
  out.h = out.w = 16;
  out.source = "usps";
  out.split = split;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<double> vals;
    double v;
    while (fields >> v) vals.push_back(v);
    if (vals.empty()) continue;  // blank trailing line
    if (vals.size() != 257) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected 257 fields, got " +
                        std::to_string(vals.size()));
    }
    const int label = static_cast<int>(std::lround(vals[0]));
    if (label < 0 || label > 9 || std::abs(vals[0] - label) > 1e-9) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": bad label field");
    }
    out.labels.push_back(static_cast<uint8_t>(label));
    for (size_t i = 1; i < vals.size(); ++i) {
      if (vals[i] < -1.0 - 1e-6 || vals[i] > 1.0 + 1e-6) {
        throw FormatError(path + ":" + std::to_string(line_no) + ": value " +
                          std::to_string(vals[i]) + " outside [-1,1]");
      }
      const double remapped = std::clamp((vals[i] + 1.0) / 2.0, 0.0, 1.0);
      out.images.push_back(static_cast<float>(remapped));
    }
    ++out.n;
  }
  if (out.n == 0) throw FormatError(path + ": no samples");
  return out;
}

std::vector<float> center_crop(const std::vector<float>& img, int h, int w, int size) {
  if (size > h || size > w) {
    throw ValueError("center_crop: size " + std::to_string(size) + " exceeds image " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  if (static_cast<size_t>(h) * w != img.size())
    throw ShapeError("center_crop: extents do not match buffer");
  const int oy = (h - size) / 2, ox = (w - size) / 2;
  std::vector<float> out(static_cast<size_t>(size) * size);
  for (int y = 0; y < size; ++y)
    std::memcpy(out.data() + static_cast<size_t>(y) * size,
                img.data() + static_cast<size_t>(y + oy) * w + ox, sizeof(float) * size);
  return out;
}

std::vector<float> resize_bilinear(const std::vector<float>& img, int h, int w,
                                   int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ValueError("resize_bilinear: non-positive target");
  if (static_cast<size_t>(h) * w != img.size())
    throw ShapeError("resize_bilinear: extents do not match buffer");
  std::vector<float> out(static_cast<size_t>(out_h) * out_w);
  for (int oy = 0; oy < out_h; ++oy) {
    double sy = (oy + 0.5) * static_cast<double>(h) / out_h - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      double sx = (ox + 0.5) * static_cast<double>(w) / out_w - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      const double v00 = img[static_cast<size_t>(y0) * w + x0];
      const double v01 = img[static_cast<size_t>(y0) * w + x1];
      const double v10 = img[static_cast<size_t>(y1) * w + x0];
      const double v11 = img[static_cast<size_t>(y1) * w + x1];
      const double top = v00 + (v01 - v00) * fx;
      const double bot = v10 + (v11 - v10) * fx;
      out[static_cast<size_t>(oy) * out_w + ox] = static_cast<float>(top + (bot - top) * fy);
    }
  }
  return out;
}

std::vector<float> preprocess_mnist(const std::vector<float>& img28) {
  const auto cropped = center_crop(img28, 28, 28, 20);
  const auto small = resize_bilinear(cropped, 20, 20, 16, 16);
  return resize_bilinear(small, 16, 16, 32, 32);
}

std::vector<float> preprocess_usps(const std::vector<float>& img16) {
  return resize_bilinear(img16, 16, 16, 32, 32);
}

PreparedDataset prepare(const RawDataset& raw) {
  PreparedDataset out;
  out.n = raw.n;
  out.labels = raw.labels;
  out.source = raw.source;
  out.split = raw.split;
  out.images.resize(static_cast<size_t>(raw.n) * 1024);
  const size_t in_stride = static_cast<size_t>(raw.h) * raw.w;
  std::vector<float> img(in_stride);
  for (int i = 0; i < raw.n; ++i) {
    std::copy_n(raw.images.data() + i * in_stride, in_stride, img.data());
    std::vector<float> big;
    if (raw.source == "mnist") {
      big = preprocess_mnist(img);
    } else if (raw.source == "usps") {
      big = preprocess_usps(img);
    } else {
      throw ValueError("unknown dataset source '" + raw.source + "'");
    }
    std::copy_n(big.data(), 1024, out.images.data() + static_cast<size_t>(i) * 1024);
  }
  return out;
}

namespace {

std::string find_existing(const std::string& dir, const std::string& name) {
  namespace fs = std::filesystem;
  const std::string plain = dir + "/" + name;
  if (fs::exists(plain)) return plain;
  if (fs::exists(plain + ".gz")) return plain + ".gz";
  throw IoError("missing " + name + "[.gz] under " + dir);
}

}  // namespace

RawDataset load_mnist(const std::string& dir, const std::string& split) {
  if (split != "train" && split != "test") throw ValueError("split must be train|test");
  const std::string stem = split == "train" ? "train" : "t10k";
  IdxArrays img = read_idx(find_existing(dir, stem + "-images-idx3-ubyte"), IdxKind::kImages);
  IdxArrays lab = read_idx(find_existing(dir, stem + "-labels-idx1-ubyte"), IdxKind::kLabels);
  if (img.n != lab.n) {
    throw FormatError("mnist " + split + ": " + std::to_string(img.n) + " images vs " +
                      std::to_string(lab.n) + " labels");
  }
  if (img.h != 28 || img.w != 28) {
    throw FormatError("mnist images must be 28x28, got " + std::to_string(img.h) + "x" +
                      std::to_string(img.w));
  }
  RawDataset out;
  out.n = img.n;
  out.h = img.h;
  out.w = img.w;
  out.images = std::move(img.images);
  out.labels = std::move(lab.labels);
  out.source = "mnist";
  out.split = split;
  return out;
}

RawDataset load_usps(const std::string& dir, const std::string& split) {
  if (split != "train" && split != "test") throw ValueError("split must be train|test");
  const std::string name = split == "train" ? "zip.train" : "zip.test";
  return read_usps_text(find_existing(dir, name), split);
}

PreparedDataset load_prepared(const std::string& dir, const std::string& dataset,
                              const std::string& split) {
  if (dataset == "mnist") return prepare(load_mnist(dir, split));
  if (dataset == "usps") return prepare(load_usps(dir, split));
  throw ValueError("dataset must be mnist|usps, got '" + dataset + "'");
}

Batcher::Batcher(const PreparedDataset& ds, int batch, bool drop_last)
    : ds_(&ds), batch_(batch), drop_last_(drop_last) {
  if (batch < 1) throw ValueError("batch size must be >= 1");
  num_batches_ = drop_last ? ds.n / batch : (ds.n + batch - 1) / batch;
  order_.resize(ds.n);
  sequential();
}

void Batcher::sequential() {
  for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
}

void Batcher::shuffle(uint64_t seed) {
  sequential();
  Rng rng(seed);
  for (size_t i = order_.size(); i > 1; --i) {
    const size_t j = rng.uniform_index(i);
    std::swap(order_[i - 1], order_[j]);
  }
}

int Batcher::batch_size(int b) const {
  if (b < 0 || b >= num_batches_) throw ValueError("batch index out of range");
  const int start = b * batch_;
  return std::min(batch_, ds_->n - start);
}

Tensor Batcher::batch_images(int b) const {
  const int bs = batch_size(b);
  const int start = b * batch_;
  Tensor out = Tensor::zeros({bs, 1, 32, 32});
  auto ov = out.data();
  for (int i = 0; i < bs; ++i) {
    const int src = order_[start + i];
    std::copy_n(ds_->images.data() + static_cast<size_t>(src) * 1024, 1024,
                ov.data() + static_cast<size_t>(i) * 1024);
  }
  return out;
}

std::vector<int> Batcher::batch_labels(int b) const {
  const int bs = batch_size(b);
  const int start = b * batch_;
  std::vector<int> out(bs);
  for (int i = 0; i < bs; ++i) out[i] = ds_->labels[order_[start + i]];
  return out;
}

}  // namespace qvae
