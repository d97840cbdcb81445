#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <string>

#include "rssm/tensor.hpp"

namespace rssm {

using Rng = std::mt19937_64;

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

// Source of the standard-normal and uniform draws consumed by samplers. Lets
// tests freeze or replay the noise of a stochastic computation.
class Noise {
 public:
  virtual ~Noise() = default;
  virtual Array normal(std::size_t rows, std::size_t cols) = 0;
  virtual double uniform() = 0;
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);
};

class RngNoise final : public Noise {
 public:
  explicit RngNoise(Rng& rng) : rng_(rng) {}
  Array normal(std::size_t rows, std::size_t cols) override;
  double uniform() override;

 private:
  Rng& rng_;
};

// Forwards to another source and keeps a copy of every normal draw.
class RecordingNoise final : public Noise {
 public:
  explicit RecordingNoise(Noise& inner) : inner_(inner) {}
  Array normal(std::size_t rows, std::size_t cols) override;
  double uniform() override { return inner_.uniform(); }
  const std::deque<Array>& normals() const { return normals_; }

 private:
  Noise& inner_;
  std::deque<Array> normals_;
};

// Replays recorded normal draws in order; uniforms come from `fallback`.
class ReplayNoise final : public Noise {
 public:
  ReplayNoise(std::deque<Array> normals, Noise& fallback) : normals_(std::move(normals)), fallback_(fallback) {}
  Array normal(std::size_t rows, std::size_t cols) override;
  double uniform() override { return fallback_.uniform(); }

 private:
  std::deque<Array> normals_;
  Noise& fallback_;
};

}  // namespace rssm
