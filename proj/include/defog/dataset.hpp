#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "defog/fogsim.hpp"
#include "defog/metrics.hpp"
#include "defog/schema.hpp"

namespace defog {

struct FrameTriplet {
  GridState partial;      // x-bar
  GridState accumulated;  // x-tilde
  GridState truth;        // y
};

enum class Split { train, validation, test };

const char* split_name(Split s);
Split parse_split(const std::string& s);

struct EpisodeEntry {
  std::size_t episode = 0;
  std::uint64_t seed = 0;
  Split split = Split::train;
  std::size_t first_frame = 0;
  std::size_t frame_count = 0;

  bool operator==(const EpisodeEntry&) const = default;
};

struct Dataset {
  SchemaPtr schema;
  std::size_t grid = 32;
  nlohmann::json sim_config = nlohmann::json::object();
  std::vector<FrameTriplet> frames;
  std::vector<EpisodeEntry> episodes;

  std::vector<std::size_t> frame_indices(Split split) const;
  std::size_t count(Split split) const { return frame_indices(split).size(); }

  // Stacks frames into batched tensors [N,C,H,W].
  Tensor stack_inputs(const std::vector<std::size_t>& indices) const;
  Tensor stack_truth(const std::vector<std::size_t>& indices) const;
};

// 80/10/10 by whole episodes, in episode order.
std::vector<Split> assign_splits(std::size_t episodes);

// Samples ticks 0, stride, 2*stride, ... and threads the accumulation chain.
std::vector<FrameTriplet> episode_triplets(const Episode& episode, const SimConfig& cfg);

Dataset make_dataset(const std::vector<Episode>& episodes, const SimConfig& cfg);

// Simulates cfg.episodes episodes (seed xor index) and builds the dataset
// without holding raw episodes in memory. `threads` > 1 simulates episodes
// concurrently; the result does not depend on it.
Dataset generate_dataset(const SimConfig& cfg, unsigned threads = 1);

// FOGD1 file: magic, u64 header length, JSON header, per-frame float32
// tensors (x-bar, x-tilde, y), u64 FNV-1a checksum of everything before it.
void write_dataset(const Dataset& dataset, const std::string& path);
Dataset read_dataset(const std::string& path);

struct ConfusionAverages {
  double tp = 0, fp = 0, fn = 0, tn = 0;
  double total() const { return tp + fp + fn + tn; }
};

struct DatasetStats {
  std::size_t frames = 0;
  ConfusionAverages partial;      // current view as predictor of y
  ConfusionAverages accumulated;  // last-seen state as predictor of y
};

DatasetStats dataset_stats(const Dataset& dataset, const std::vector<std::size_t>& indices);
std::string format_stats(const DatasetStats& stats);

}  // namespace defog
