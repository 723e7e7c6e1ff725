// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0

#include "mffu/data.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "mffu/image_io.hpp"

namespace fs = std::filesystem;

namespace mffu {

RawSlice load_slice_pair(const std::string& image_path, const std::string& mask_path,
                         int num_classes) {
  GrayImage img = load_gray8(image_path);
  GrayImage msk = load_gray8(mask_path);
  if (img.w != msk.w || img.h != msk.h)
    throw std::runtime_error("image/mask dimension mismatch: " + image_path + " is " +
                             std::to_string(img.w) + "x" + std::to_string(img.h) + ", " +
                             mask_path + " is " + std::to_string(msk.w) + "x" +
                             std::to_string(msk.h));
  for (std::uint8_t v : msk.pixels) {
    if (v >= num_classes)
      throw std::runtime_error("mask label " + std::to_string(v) + " >= num_classes in " +
                               mask_path);
  }
  RawSlice s;
  s.h = img.h;
  s.w = img.w;
  s.image = std::move(img.pixels);
  s.mask = std::move(msk.pixels);
  s.id = fs::path(image_path).stem().string();
  return s;
}

std::vector<RawSlice> load_dataset_dir(const std::string& root, int num_classes) {
  const fs::path images = fs::path(root) / "images";
  const fs::path masks = fs::path(root) / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks))
    throw std::runtime_error("dataset root must contain images/ and masks/: " + root);
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(images)) {
    if (e.path().extension() == ".png") stems.push_back(e.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());
  std::vector<RawSlice> out;
  out.reserve(stems.size());
  for (const auto& stem : stems) {
    const std::string ip = (images / (stem + ".png")).string();
    const std::string mp = (masks / (stem + ".png")).string();
    if (!fs::exists(mp)) throw std::runtime_error("missing mask for " + stem);
    out.push_back(load_slice_pair(ip, mp, num_classes));
  }
  return out;
}

double foreground_fraction(const RawSlice& s) {
  std::int64_t nz = 0;
  for (std::uint8_t v : s.image)
    if (v > 0) ++nz;
  return static_cast<double>(nz) / static_cast<double>(s.image.size());
}

std::vector<RawSlice> filter_informative(const std::vector<RawSlice>& slices, double min_fg) {
  if (min_fg < 0.0 || min_fg > 1.0)
    throw std::invalid_argument("filter_informative: threshold must be in [0,1]");
  std::vector<RawSlice> out;
  for (const auto& s : slices)
    if (foreground_fraction(s) >= min_fg) out.push_back(s);
  return out;
}

std::vector<std::uint8_t> resize_nearest(const std::vector<std::uint8_t>& in, int h, int w,
                                         int oh, int ow) {
  if (h < 1 || w < 1 || oh < 1 || ow < 1)
    throw std::invalid_argument("resize_nearest: extents must be positive");
  if (in.size() != static_cast<size_t>(h) * static_cast<size_t>(w))
    throw std::invalid_argument("resize_nearest: buffer does not match extents");
  std::vector<std::uint8_t> out(static_cast<size_t>(oh) * ow);
  for (int i = 0; i < oh; ++i) {
    const int si = static_cast<int>(static_cast<std::int64_t>(i) * h / oh);
    const std::uint8_t* srow = in.data() + static_cast<size_t>(si) * w;
    std::uint8_t* drow = out.data() + static_cast<size_t>(i) * ow;
    for (int j = 0; j < ow; ++j)
      drow[j] = srow[static_cast<std::int64_t>(j) * w / ow];
  }
  return out;
}

RawSlice resize_slice(const RawSlice& s, int size) {
  RawSlice out;
  out.h = size;
  out.w = size;
  out.image = resize_nearest(s.image, s.h, s.w, size, size);
  out.mask = resize_nearest(s.mask, s.h, s.w, size, size);
  out.id = s.id;
  return out;
}

Sample to_sample(const RawSlice& s) {
  Sample out;
  Tensor<float> img({1, s.h, s.w});
  for (std::int64_t i = 0; i < img.size(); ++i)
    img[i] = static_cast<float>(s.image[static_cast<size_t>(i)]) / 255.0f;
  out.image = img;
  out.mask.shape = {s.h, s.w};
  out.mask.ids.assign(s.mask.begin(), s.mask.end());
  out.id = s.id;
  return out;
}

std::vector<Sample> to_samples(const std::vector<RawSlice>& slices) {
  std::vector<Sample> out;
  out.reserve(slices.size());
  for (const auto& s : slices) out.push_back(to_sample(s));
  return out;
}

namespace {

struct Ellipse {
  double cx, cy, a, b;
  bool contains(double x, double y) const {
    const double dx = (x - cx) / a, dy = (y - cy) / b;
    return dx * dx + dy * dy <= 1.0;
  }
};

}  // namespace

int synth_dataset(int n, int size, std::uint64_t seed, const std::string& out_dir) {
  if (n < 1) throw std::invalid_argument("synth_dataset: n must be >= 1");
  if (size < 16 || (size & (size - 1)) != 0)
    throw std::invalid_argument("synth_dataset: size must be a power of two >= 16");
  const fs::path root(out_dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");

  Rng rng(seed);
  for (int idx = 0; idx < n; ++idx) {
    Ellipse kidney{}, tumor{};
    // tumor strictly inside kidney: ((|dx|+a2)/a)^2 + ((|dy|+b2)/b)^2 <= 1
    // holds by construction of the ranges below
    kidney.cx = rng.uniform(0.35, 0.65) * size;
    kidney.cy = rng.uniform(0.35, 0.65) * size;
    kidney.a = rng.uniform(0.18, 0.27) * size;
    kidney.b = rng.uniform(0.18, 0.27) * size;
    tumor.a = rng.uniform(0.35, 0.5) * kidney.a;
    tumor.b = rng.uniform(0.35, 0.5) * kidney.b;
    tumor.cx = kidney.cx + rng.uniform(-0.15, 0.15) * kidney.a;
    tumor.cy = kidney.cy + rng.uniform(-0.15, 0.15) * kidney.b;

    GrayImage img, msk;
    img.w = img.h = msk.w = msk.h = size;
    img.pixels.resize(static_cast<size_t>(size) * size);
    msk.pixels.resize(static_cast<size_t>(size) * size);
    bool has1 = false, has2 = false;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const size_t p = static_cast<size_t>(y) * size + x;
        const std::uint32_t noise = static_cast<std::uint32_t>(rng.next_u64() >> 40);
        std::uint8_t cls = 0;
        std::uint8_t val;
        if (tumor.contains(x, y)) {
          cls = 2;
          val = static_cast<std::uint8_t>(200 + noise % 56);
          has2 = true;
        } else if (kidney.contains(x, y)) {
          cls = 1;
          val = static_cast<std::uint8_t>(110 + noise % 41);
          has1 = true;
        } else {
          val = static_cast<std::uint8_t>(8 + noise % 33);
        }
        img.pixels[p] = val;
        msk.pixels[p] = cls;
      }
    }
    if (!has1 || !has2)
      throw std::runtime_error("synth_dataset: degenerate geometry at index " +
                               std::to_string(idx));

    char stem[32];
    std::snprintf(stem, sizeof stem, "case%04d_000", idx);
    save_gray8((root / "images" / (std::string(stem) + ".png")).string(), img);
    save_gray8((root / "masks" / (std::string(stem) + ".png")).string(), msk);
  }
  return n;
}

PreprocessStats preprocess_dataset(const std::string& in_dir, const std::string& out_dir,
                                   int size, double min_fg) {
  // A mask value >= 256 cannot occur in 8-bit storage; load with the widest
  // tolerance and let training-time loading enforce the class count.
  std::vector<RawSlice> slices = load_dataset_dir(in_dir, 256);
  PreprocessStats stats;
  const fs::path root(out_dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  for (const auto& s : slices) {
    if (foreground_fraction(s) < min_fg) {
      ++stats.dropped;
      continue;
    }
    RawSlice r = resize_slice(s, size);
    // /255 normalization then re-quantization is exact on 8-bit values, so
    // the stored pixels are the resized ones verbatim.
    GrayImage img{r.w, r.h, r.image};
    GrayImage msk{r.w, r.h, r.mask};
    save_gray8((root / "images" / (r.id + ".png")).string(), img);
    save_gray8((root / "masks" / (r.id + ".png")).string(), msk);
    ++stats.retained;
  }
  return stats;
}

std::vector<std::vector<int>> batch_indices(int n, int batch_size,
                                            std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size < 1) throw std::invalid_argument("batch_indices: batch size must be >= 1");
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    rng.shuffle(order);
  }
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

std::pair<Tensor<float>, LabelMask> make_batch(const std::vector<Sample>& samples,
                                               const std::vector<int>& idx) {
  if (idx.empty()) throw std::invalid_argument("make_batch: empty index list");
  const Sample& first = samples[static_cast<size_t>(idx[0])];
  const int H = first.image.dim(1), W = first.image.dim(2);
  const int B = static_cast<int>(idx.size());
  Tensor<float> images({B, 1, H, W});
  LabelMask masks;
  masks.shape = {B, H, W};
  masks.ids.resize(static_cast<size_t>(B) * H * W);
  const std::int64_t P = static_cast<std::int64_t>(H) * W;
  for (int b = 0; b < B; ++b) {
    const Sample& s = samples[static_cast<size_t>(idx[static_cast<size_t>(b)])];
    if (s.image.dim(1) != H || s.image.dim(2) != W)
      throw std::invalid_argument("make_batch: samples have mixed sizes");
    std::copy(s.image.data(), s.image.data() + P, images.data() + b * P);
    std::copy(s.mask.ids.begin(), s.mask.ids.end(), masks.ids.begin() + b * P);
  }
  return {images, masks};
}

}  // namespace mffu
