#include "mobgp/fft.hpp"

#include <fftw3.h>

#include <mutex>

#include "mobgp/errors.hpp"

namespace mobgp {

namespace {
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}

fftw_complex* as_fftw(std::complex<double>* p) { return reinterpret_cast<fftw_complex*>(p); }
}  // namespace

struct Fft::Plans {
    fftw_plan fwd = nullptr;
    fftw_plan bwd = nullptr;

    ~Plans() {
        std::lock_guard<std::mutex> lock(planner_mutex());
        if (fwd) fftw_destroy_plan(fwd);
        if (bwd) fftw_destroy_plan(bwd);
    }
};

Fft::Fft(int n) : n_(n), plans_(std::make_unique<Plans>()) {
    if (n < 1) throw DimensionError("FFT size must be positive");
    // FFTW_UNALIGNED lets the plans run on any buffer via the new-array execute API.
    std::vector<std::complex<double>> dummy(static_cast<std::size_t>(n));
    std::lock_guard<std::mutex> lock(planner_mutex());
    plans_->fwd = fftw_plan_dft_1d(n, as_fftw(dummy.data()), as_fftw(dummy.data()), FFTW_FORWARD,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_->bwd = fftw_plan_dft_1d(n, as_fftw(dummy.data()), as_fftw(dummy.data()), FFTW_BACKWARD,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!plans_->fwd || !plans_->bwd) throw Error("FFTW plan creation failed");
}

Fft::~Fft() = default;
Fft::Fft(Fft&&) noexcept = default;
Fft& Fft::operator=(Fft&&) noexcept = default;

void Fft::forward(std::complex<double>* inout) const {
    fftw_execute_dft(plans_->fwd, as_fftw(inout), as_fftw(inout));
}

void Fft::inverse(std::complex<double>* inout) const {
    fftw_execute_dft(plans_->bwd, as_fftw(inout), as_fftw(inout));
    const double scale = 1.0 / n_;
    for (int i = 0; i < n_; ++i) inout[i] *= scale;
}

std::string fft_library_version() { return fftw_version; }

std::vector<std::complex<double>> fft_forward(const std::vector<double>& in) {
    std::vector<std::complex<double>> buf(in.begin(), in.end());
    Fft(static_cast<int>(buf.size())).forward(buf.data());
    return buf;
}

std::vector<double> fft_inverse_real(const std::vector<std::complex<double>>& spectrum) {
    std::vector<std::complex<double>> buf = spectrum;
    Fft(static_cast<int>(buf.size())).inverse(buf.data());
    std::vector<double> out(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) out[i] = buf[i].real();
    return out;
}

}  // namespace mobgp
