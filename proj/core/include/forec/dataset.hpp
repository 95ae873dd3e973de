#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "forec/rng.hpp"
#include "forec/tensor.hpp"

namespace forec {

/// One image with its per-pixel class labels.
struct Sample {
  Tensor image;    // [3,H,W], values in [0,1]
  LabelMap label;  // class ids in [0, num_classes), 255 = ignore
  int id = 0;
};

/// Immutable sample collection. The last `val_count` samples are the held-out
/// validation split; everything before them is the training pool.
struct Dataset {
  std::vector<Sample> samples;
  int h = 0;
  int w = 0;
  int num_classes = 0;  // object classes + background
  int val_count = 0;
  uint64_t seed = 0;

  int count() const { return int(samples.size()); }
  int train_count() const { return int(samples.size()) - val_count; }
};

/// Disjoint id sets: labeled + unlabeled cover the training pool, validation
/// is held out beforehand.
struct Partition {
  std::vector<int> labeled;
  std::vector<int> unlabeled;
  std::vector<int> validation;
  std::string ratio;  // e.g. "1/16"
};

/// Generates `count` images of 1-3 non-overlapping solid shapes (class 1 =
/// circle, 2 = axis-aligned rectangle, 3 = triangle, higher classes rotated
/// variants) over a smooth low-frequency noise background with per-pixel
/// Gaussian noise. Content depends only on (h, w, num_object_classes, seed,
/// image id), never on generation order or thread count.
Dataset gen_shapes(int count, int h, int w, int num_object_classes, uint64_t seed);

/// Splits the training pool: deterministic shuffle by `seed`, then the first
/// ceil(labeled_fraction * train_count) ids become labeled, the rest
/// unlabeled. Throws ValueError when the fraction selects no labeled sample.
Partition make_partition(const Dataset& ds, double labeled_fraction, uint64_t seed);

/// Draws fixed-size id batches from one pool. A pool smaller than one
/// epoch's consumption (batch * steps_per_epoch) is sampled uniformly with
/// replacement; otherwise the pool is reshuffled each epoch and served
/// without replacement.
class PoolSampler {
 public:
  PoolSampler(std::vector<int> ids, int batch, int steps_per_epoch);

  std::vector<int> next(Rng& rng);

  bool with_replacement() const { return with_replacement_; }
  int pool_size() const { return int(ids_.size()); }

 private:
  std::vector<int> ids_;
  std::vector<int> order_;
  int batch_ = 0;
  int steps_per_epoch_ = 0;
  int step_in_epoch_ = 0;
  bool with_replacement_ = false;
};

/// Writes `images/NNNN.ppm`, `labels/NNNN.pgm` and `meta.json` under `dir`.
void save_dataset(const Dataset& ds, const Partition& part,
                  const std::filesystem::path& dir);

struct LoadedDataset {
  Dataset dataset;
  Partition partition;
};

/// Loads a directory written by save_dataset. Throws IoError on missing or
/// inconsistent files.
LoadedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace forec
