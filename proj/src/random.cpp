#include "rssm/random.hpp"

#include <sstream>
#include <stdexcept>

namespace rssm {

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void set_rng_state(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (is.fail()) throw std::invalid_argument("set_rng_state: malformed generator state");
}

std::size_t Noise::index(std::size_t n) {
  const auto k = static_cast<std::size_t>(uniform() * static_cast<double>(n));
  return k < n ? k : n - 1;
}

Array RngNoise::normal(std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Array a({rows, cols});
  for (double& v : a.vec()) v = dist(rng_);
  return a;
}

double RngNoise::uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

Array RecordingNoise::normal(std::size_t rows, std::size_t cols) {
  Array a = inner_.normal(rows, cols);
  normals_.push_back(a);
  return a;
}

Array ReplayNoise::normal(std::size_t rows, std::size_t cols) {
  if (normals_.empty()) throw std::logic_error("ReplayNoise: recorded draws exhausted");
  Array a = std::move(normals_.front());
  normals_.pop_front();
  if (a.rows() != rows || a.cols() != cols)
    throw ShapeError("ReplayNoise: recorded draw has shape " + shape_str(a.shape()) + ", requested (" +
                     std::to_string(rows) + ", " + std::to_string(cols) + ")");
  return a;
}

}  // namespace rssm
