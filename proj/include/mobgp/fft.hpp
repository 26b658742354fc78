#pragma once

#include <complex>
#include <memory>
#include <string>
#include <vector>

namespace mobgp {

/// Fixed-size complex DFT with cached plans. Plan construction/destruction is serialized
/// internally (the FFTW planner is not thread-safe); executing transforms on distinct
/// buffers is safe concurrently.
class Fft {
public:
    explicit Fft(int n);
    ~Fft();
    Fft(Fft&&) noexcept;
    Fft& operator=(Fft&&) noexcept;
    Fft(const Fft&) = delete;
    Fft& operator=(const Fft&) = delete;

    int size() const { return n_; }

    /// In-place forward transform, no normalization.
    void forward(std::complex<double>* inout) const;
    /// In-place inverse transform, normalized by 1/n.
    void inverse(std::complex<double>* inout) const;

private:
    struct Plans;
    int n_;
    std::unique_ptr<Plans> plans_;
};

/// Version string of the FFT backend (for run manifests).
std::string fft_library_version();

/// One-shot full spectrum of a real vector.
std::vector<std::complex<double>> fft_forward(const std::vector<double>& in);

/// One-shot inverse of a full spectrum; imaginary parts are dropped.
std::vector<double> fft_inverse_real(const std::vector<std::complex<double>>& spectrum);

}  // namespace mobgp
