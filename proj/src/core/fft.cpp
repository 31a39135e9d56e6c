#include "fft.hpp"

#include <fftw3.h>

#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <utility>

namespace nr::detail {
namespace {

struct FftwFree {
  void operator()(fftw_complex* p) const { fftw_free(p); }
};

using Buffer = std::unique_ptr<fftw_complex, FftwFree>;

Buffer make_buffer(std::size_t n) {
  return Buffer(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)));
}

// The FFTW planner is not thread-safe; execution on distinct buffers is.
class PlanCache {
public:
  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  fftw_plan get(std::size_t n, bool inverse) {
    std::lock_guard lock(mutex_);
    auto key = std::make_pair(n, inverse);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    Buffer scratch = make_buffer(n);
    fftw_plan plan = fftw_plan_dft_1d(static_cast<int>(n), scratch.get(), scratch.get(),
                                      inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
    plans_.emplace(key, plan);
    return plan;
  }

private:
  std::mutex mutex_;
  std::map<std::pair<std::size_t, bool>, fftw_plan> plans_;
};

PlanCache& cache() {
  static PlanCache instance;
  return instance;
}

} // namespace

void dft_inplace(std::vector<std::complex<double>>& data, bool inverse) {
  const std::size_t n = data.size();
  if (n == 0) return;
  fftw_plan plan = cache().get(n, inverse);
  Buffer buf = make_buffer(n);
  static_assert(sizeof(fftw_complex) == sizeof(std::complex<double>));
  std::memcpy(buf.get(), data.data(), sizeof(fftw_complex) * n);
  fftw_execute_dft(plan, buf.get(), buf.get());
  std::memcpy(data.data(), buf.get(), sizeof(fftw_complex) * n);
}

} // namespace nr::detail
