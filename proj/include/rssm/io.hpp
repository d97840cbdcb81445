#pragma once

// On-disk formats.
//
// Dataset directory:
//   manifest.json                 schema version, counts, dims, toy config echo, seed, checksums
//   <split>_x.bin, <split>_u.bin, <split>_vertex_attrs.bin
//                                 u64 rank, u64 extents, then float32 values; all little-endian, row-major
//   edges/<split>/<index>.txt     "<n_vertices>" line followed by "<tail> <head>" lines
//
// Checkpoint directory:
//   manifest.json                 tensor names and shapes in blob order, step, rng state, configs
//   params.bin                    float64 little-endian values of every tensor, concatenated

#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "rssm/experiments.hpp"

namespace rssm {

inline constexpr int kSchemaVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint32_t crc32_of(const std::vector<unsigned char>& bytes);

// Flat float32 arrays with a u64 shape header.
std::vector<unsigned char> encode_f32(const Array& a);
Array decode_f32(const std::vector<unsigned char>& bytes);
void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);
std::vector<unsigned char> read_bytes(const std::filesystem::path& path);

void write_dataset(const std::filesystem::path& dir, const ToyDataset& ds);
ToyDataset read_dataset(const std::filesystem::path& dir);

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t model_seed = 0;
  std::size_t step = 0;
  std::string rng_state;
  std::vector<std::string> names;
  std::vector<Array> tensors;
};

void write_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& dir);

// Model parameters (and optimizer moments, if given) as a checkpoint.
Checkpoint make_checkpoint(const RssmModel& model, std::uint64_t model_seed, const TrainConfig& train,
                           const Trainer* trainer);
// Builds the model from the stored config and copies its parameters.
std::unique_ptr<RssmModel> model_from_checkpoint(const Checkpoint& ck);
// Optimizer moments, step counter and rng state.
void restore_trainer(const Checkpoint& ck, Trainer& trainer);

// Training driver. Writes `<out>/train.log` (tab-separated step, bound, L1,
// L2, KL estimate, lr, wall seconds) and `<out>/ckpt-<step>` directories every
// checkpoint_every steps and at the end.
struct TrainRunOptions {
  std::filesystem::path out;
  bool resume = false;          // continue from the newest checkpoint in `out`
  double time_budget = 0.0;     // seconds; 0 means unlimited
  std::ostream* progress = nullptr;
  std::size_t progress_every = 50;
};

struct TrainRunResult {
  std::size_t steps_done = 0;
  bool finished = false;        // false when the time budget ran out
  std::vector<StepStats> stats; // steps run by this call
  std::filesystem::path last_checkpoint;
};

// Throws NumericError on a non-finite objective; checkpoints written so far are kept.
TrainRunResult run_training(RssmModel& model, std::uint64_t model_seed, const std::vector<Episode>& data,
                            const TrainConfig& cfg, std::uint64_t seed, const TrainRunOptions& opt);
std::filesystem::path latest_checkpoint(const std::filesystem::path& out);

}  // namespace rssm
