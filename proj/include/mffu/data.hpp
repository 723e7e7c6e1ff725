// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0
//
// Slice ingestion and preprocessing: informative-slice filtering, nearest-
// neighbor resize, /255 normalization, synthetic dataset generation, batch
// assembly.
//
// Dataset layout on disk: root/images/<case>_<idx>.png and
// root/masks/<case>_<idx>.png (8-bit grayscale; mask pixel value = class id).

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mffu/loss_metrics.hpp"
#include "mffu/tensor.hpp"

namespace mffu {

// One 2-D slice as stored on disk: 8-bit image plus integer label mask.
struct RawSlice {
  int h = 0, w = 0;
  std::vector<std::uint8_t> image;
  std::vector<std::uint8_t> mask;
  std::string id;  // filename stem, e.g. "case0003_012"
};

// A network-ready slice: image in [0,1], shape 1 x H x W.
struct Sample {
  Tensor<float> image;
  LabelMask mask;  // H x W
  std::string id;
};

RawSlice load_slice_pair(const std::string& image_path, const std::string& mask_path,
                         int num_classes);

// All image/mask pairs under root, sorted by stem. Throws on missing masks.
std::vector<RawSlice> load_dataset_dir(const std::string& root, int num_classes);

// Fraction of image pixels with value > 0.
double foreground_fraction(const RawSlice& s);

// Retains slices whose foreground fraction is >= min_fg; order preserved.
std::vector<RawSlice> filter_informative(const std::vector<RawSlice>& slices,
                                         double min_fg = 1e-3);

// out[i][j] = in[floor(i*h/oh)][floor(j*w/ow)]
std::vector<std::uint8_t> resize_nearest(const std::vector<std::uint8_t>& in, int h, int w,
                                         int oh, int ow);

// Resizes image and mask with the identical index map.
RawSlice resize_slice(const RawSlice& s, int size);

// /255 normalization into a Sample.
Sample to_sample(const RawSlice& s);
std::vector<Sample> to_samples(const std::vector<RawSlice>& slices);

// Writes n synthetic image/mask pairs: noisy background, one bright ellipse
// (class 1) containing a smaller brighter ellipse (class 2). Deterministic
// per seed. Returns the number of pairs written.
int synth_dataset(int n, int size, std::uint64_t seed, const std::string& out_dir);

struct PreprocessStats {
  int retained = 0;
  int dropped = 0;
};

// filter -> resize -> normalize -> re-quantize to 8-bit storage.
PreprocessStats preprocess_dataset(const std::string& in_dir, const std::string& out_dir,
                                   int size, double min_fg);

// Index batches: optional seeded shuffle, final short batch kept.
std::vector<std::vector<int>> batch_indices(int n, int batch_size,
                                            std::optional<std::uint64_t> shuffle_seed);

// Stacks samples into an N x 1 x H x W image batch and an N x H x W mask.
std::pair<Tensor<float>, LabelMask> make_batch(const std::vector<Sample>& samples,
                                               const std::vector<int>& idx);

}  // namespace mffu
