#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <vector>

namespace cmaf {

using cvec = std::vector<std::complex<double>>;

/// Real-to-complex FFT on the grid of a torus of complex dimension n with N points
/// per axis. The last axis is halved (N/2 + 1 modes). Instances are cached and shared.
class Spectral {
public:
    static std::shared_ptr<const Spectral> get(int n, int N);

    Spectral(int n, int N);
    ~Spectral();
    Spectral(const Spectral&) = delete;
    Spectral& operator=(const Spectral&) = delete;

    int n() const { return n_; }
    int resolution() const { return N_; }
    std::size_t real_size() const { return real_size_; }
    std::size_t complex_size() const { return complex_size_; }

    void forward(const double* in, std::complex<double>* out) const;
    /// Inverse transform including the 1/size normalization.
    void inverse(const std::complex<double>* in, double* out) const;

    /// Calls f(k, mode) for every complex index k with its integer mode (x1,y1,x2,y2).
    template <class F>
    void for_each_mode(F&& f) const {
        const int N = N_;
        const int half = N / 2 + 1;
        std::size_t k = 0;
        std::array<int, 4> m{0, 0, 0, 0};
        if (n_ == 1) {
            for (int a = 0; a < N; ++a) {
                m[0] = wrap(a);
                for (int b = 0; b < half; ++b, ++k) {
                    m[1] = b;
                    f(k, m);
                }
            }
        } else {
            for (int a = 0; a < N; ++a) {
                m[0] = wrap(a);
                for (int b = 0; b < N; ++b) {
                    m[1] = wrap(b);
                    for (int c = 0; c < N; ++c) {
                        m[2] = wrap(c);
                        for (int d = 0; d < half; ++d, ++k) {
                            m[3] = d;
                            f(k, m);
                        }
                    }
                }
            }
        }
    }

    int wrap(int i) const { return i <= N_ / 2 ? i : i - N_; }
    bool is_nyquist(int m) const { return m == N_ / 2 || m == -N_ / 2; }

private:
    int n_;
    int N_;
    std::size_t real_size_;
    std::size_t complex_size_;
    void* plan_fwd_ = nullptr;
    void* plan_inv_ = nullptr;
    double* rbuf_ = nullptr;
    void* cbuf_ = nullptr;
    mutable std::mutex mutex_;
};

}  // namespace cmaf
