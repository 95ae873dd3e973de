#pragma once

#include <filesystem>
#include <vector>

#include "forec/net.hpp"
#include "forec/tensor.hpp"

namespace forec {

/// The reconstruction decoder's pre-head activation viewed as d grayscale
/// images, plus the 1x1 head weights that mix them into the output channels.
struct LatentSlices {
  Tensor raw;         // [d,H,W] decoder activation
  Tensor normalized;  // [d,H,W] per-slice min-max to [0,1]; constant slices 0.5
  Tensor weights;     // [3,d] head weights
};

/// Loads the trainable network from a checkpoint, preferring the student
/// entry (the only one that carries an auxiliary decoder).
net::Network load_student_network(const std::filesystem::path& ckpt_path);

/// Runs the reconstruction decoder on one [3,H,W] image. Throws ValueError
/// when the network has no reconstruction decoder.
LatentSlices extract_latents(const net::Network& student, const Tensor& image);

struct SliceScore {
  int index = 0;
  double score = 0.0;
  bool valid = true;  // false for constant slices, which rank last
};

/// Pearson correlation between each slice's absolute activation and a binary
/// foreground mask, sorted descending. The mask must contain both foreground
/// and background pixels.
std::vector<SliceScore> rank_by_foreground(const Tensor& raw, const LabelMap& foreground);

struct LatentExport {
  std::vector<std::filesystem::path> files;  // rank order
  std::filesystem::path manifest;
};

/// Writes latent_kNN.pgm (NN = slice index) for the top `topk` ranked slices
/// (0 = all) plus manifest.json listing every slice with its rank and score.
LatentExport export_grid(const LatentSlices& slices, const std::vector<SliceScore>& ranking,
                         const std::filesystem::path& dir, int topk = 0);

}  // namespace forec
