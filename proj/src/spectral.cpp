#include "cmaflow/spectral.hpp"

#include <fftw3.h>

#include <cstring>
#include <map>
#include <utility>

namespace cmaf {

namespace {

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

// FFTW's planner is not thread-safe, so plan creation and destruction are serialized.
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

std::shared_ptr<const Spectral> Spectral::get(int n, int N) {
    static std::map<std::pair<int, int>, std::shared_ptr<const Spectral>> cache;
    std::lock_guard<std::mutex> lock(registry_mutex());
    auto key = std::make_pair(n, N);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto s = std::make_shared<const Spectral>(n, N);
    cache.emplace(key, s);
    return s;
}

Spectral::Spectral(int n, int N) : n_(n), N_(N) {
    const int rank = 2 * n;
    int dims[4] = {N, N, N, N};
    real_size_ = 1;
    for (int a = 0; a < rank; ++a) real_size_ *= static_cast<std::size_t>(N);
    complex_size_ = real_size_ / static_cast<std::size_t>(N) * static_cast<std::size_t>(N / 2 + 1);

    std::lock_guard<std::mutex> lock(planner_mutex());
    rbuf_ = fftw_alloc_real(real_size_);
    auto* cbuf = fftw_alloc_complex(complex_size_);
    cbuf_ = cbuf;
    // measured plans pay off for the repeated transforms of a time-stepping run; very large
    // grids fall back to the estimate planner to keep setup short
    const unsigned flags = real_size_ <= (std::size_t{1} << 20) ? FFTW_MEASURE : FFTW_ESTIMATE;
    plan_fwd_ = fftw_plan_dft_r2c(rank, dims, rbuf_, cbuf, flags);
    plan_inv_ = fftw_plan_dft_c2r(rank, dims, cbuf, rbuf_, flags);
}

Spectral::~Spectral() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(static_cast<fftw_plan>(plan_fwd_));
    fftw_destroy_plan(static_cast<fftw_plan>(plan_inv_));
    fftw_free(rbuf_);
    fftw_free(cbuf_);
}

void Spectral::forward(const double* in, std::complex<double>* out) const {
    std::lock_guard<std::mutex> lock(mutex_);
    std::memcpy(rbuf_, in, real_size_ * sizeof(double));
    fftw_execute(static_cast<fftw_plan>(plan_fwd_));
    std::memcpy(static_cast<void*>(out), cbuf_, complex_size_ * sizeof(fftw_complex));
}

void Spectral::inverse(const std::complex<double>* in, double* out) const {
    std::lock_guard<std::mutex> lock(mutex_);
    std::memcpy(cbuf_, static_cast<const void*>(in), complex_size_ * sizeof(fftw_complex));
    fftw_execute(static_cast<fftw_plan>(plan_inv_));
    const double scale = 1.0 / static_cast<double>(real_size_);
    for (std::size_t i = 0; i < real_size_; ++i) out[i] = rbuf_[i] * scale;
}

}  // namespace cmaf
