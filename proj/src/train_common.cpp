#include "landcover/train_common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "landcover/errors.hpp"

namespace landcover {

EpochSampler::EpochSampler(std::size_t size, Rng rng) : size_(size), rng_(std::move(rng)) {
  if (size_ == 0) throw ValidationError("cannot sample batches from an empty set");
}

std::vector<std::size_t> EpochSampler::next(std::size_t batch_size) {
  std::vector<std::size_t> batch;
  batch.reserve(batch_size);
  while (batch.size() < batch_size) {
    if (cursor_ == order_.size()) {
      order_.resize(size_);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

MetricsLog::MetricsLog(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
  if (!out_) throw IoError("cannot open metrics log '" + path.string() + "'");
}

void MetricsLog::append(const Json& record) {
  out_ << record.dump() << '\n';
  out_.flush();
}

void check_finite(const LossValue& loss, std::int64_t iteration, const std::string& stage) {
  if (std::isfinite(loss.total)) return;
  std::ostringstream msg;
  msg << stage << " diverged at iteration " << iteration << ": total=" << loss.total;
  for (const auto& [name, value] : loss.per_term) msg << ' ' << name << '=' << value;
  throw DivergenceError(msg.str());
}

}  // namespace landcover
