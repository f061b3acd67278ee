#pragma once

#include <cmath>

#include "eitdiff/core/error.hpp"
#include "eitdiff/core/rng.hpp"
#include "eitdiff/fem/forward.hpp"

namespace eitdiff {

inline double rms(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return v.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(v.size()));
}

// Additive white Gaussian noise whose RMS is RMS(frame) * 10^(-snr/20).
// snr_db = +inf returns the frame untouched.
inline MeasurementFrame add_noise_snr(const MeasurementFrame& frame, double snr_db, Rng& rng) {
    require(!std::isnan(snr_db) && snr_db != -INFINITY, "add_noise_snr: SNR must be finite or +inf");
    if (std::isinf(snr_db)) return frame;
    const double signal = rms(frame.values);
    require(signal > 0.0, "add_noise_snr: frame is all zero, SNR is undefined");
    const double sigma = signal * std::pow(10.0, -snr_db / 20.0);
    MeasurementFrame out = frame;
    std::normal_distribution<double> normal(0.0, sigma);
    for (double& v : out.values) v += normal(rng);
    return out;
}

} // namespace eitdiff
