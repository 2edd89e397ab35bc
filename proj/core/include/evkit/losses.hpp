#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <vector>

namespace evkit {

inline constexpr double kStdEpsilon = 1e-6;
inline constexpr double kDefaultTemperature = 0.07;
inline constexpr std::size_t kDefaultQueueCapacity = 1024;

struct PatchTarget
{
  std::vector<double> pixels;
  bool standardized = false;
};

/// (x - mean) / std with the population std; divides by eps instead when the
/// patch is flat (std <= eps).
PatchTarget standardize(std::span<const double> patch, double eps = kStdEpsilon);

struct RecLoss
{
  double loss = 0.0;
  std::vector<std::vector<double>> grad; // d loss / d pred, same shape as pred
};

/// Per-patch mean squared error, averaged across patches.
RecLoss rec_loss(const std::vector<std::vector<double>>& pred, const std::vector<PatchTarget>& target);

/// L2-normalized copy; throws std::invalid_argument on a zero vector.
std::vector<double> l2_normalize(std::span<const double> v);

struct ContrastBatch
{
  std::vector<double> query;
  std::vector<double> positive;
  std::vector<std::vector<double>> negatives;
  double temperature = kDefaultTemperature;
};

struct InfoNceResult
{
  double loss = 0.0;
  std::vector<double> grad_query;
  std::vector<double> grad_positive;
  std::vector<std::vector<double>> grad_negatives;
};

/// -log softmax of the positive logit among {q.k+, q.k-...} / temperature.
InfoNceResult info_nce(const ContrastBatch& batch);

/// Fixed-capacity FIFO of negative keys. Single writer; evaluation reads a
/// snapshot via `snapshot()`.
class NegativeQueue
{
public:
  explicit NegativeQueue(std::size_t capacity = kDefaultQueueCapacity);

  void push(std::vector<double> key);
  void push(const std::vector<std::vector<double>>& keys);

  std::size_t size() const { return keys_.size(); }
  std::size_t capacity() const { return capacity_; }
  const std::vector<double>& operator[](std::size_t i) const { return keys_[i]; }
  std::vector<std::vector<double>> snapshot() const { return {keys_.begin(), keys_.end()}; }
  void clear() { keys_.clear(); }

private:
  std::size_t capacity_;
  std::deque<std::vector<double>> keys_;
};

} // namespace evkit
