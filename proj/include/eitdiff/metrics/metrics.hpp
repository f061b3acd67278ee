#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eitdiff/core/error.hpp"
#include "eitdiff/fem/forward.hpp"
#include "eitdiff/phantom/noise.hpp"
#include "eitdiff/phantom/raster.hpp"

// Image metrics are computed over pixels whose centre lies in the disk.

namespace eitdiff {

inline constexpr double metric_eps = 1e-12;
inline constexpr double default_psnr_max = 0.597;

namespace detail {

struct Paired {
    std::vector<double> a, b;
};

inline Paired in_disk(const PixelImage& recon, const PixelImage& truth) {
    require(recon.size == truth.size && recon.values.size() == truth.values.size(), "metrics: images differ in size");
    Paired p;
    for (int r = 0; r < truth.size; ++r)
        for (int c = 0; c < truth.size; ++c)
            if (truth.in_disk(r, c)) {
                p.a.push_back(recon.at(r, c));
                p.b.push_back(truth.at(r, c));
            }
    require(!p.a.empty(), "metrics: no in-disk pixels");
    return p;
}

inline double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

struct Moments {
    double ma, mb, va, vb, cov;
};

// Population (1/n) moments.
inline Moments moments(const Paired& p) {
    Moments m{mean(p.a), mean(p.b), 0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < p.a.size(); ++i) {
        const double da = p.a[i] - m.ma, db = p.b[i] - m.mb;
        m.va += da * da;
        m.vb += db * db;
        m.cov += da * db;
    }
    const double n = static_cast<double>(p.a.size());
    m.va /= n;
    m.vb /= n;
    m.cov /= n;
    return m;
}

} // namespace detail

// |recon - truth|_1 / |truth|_1
inline double re(const PixelImage& recon, const PixelImage& truth) {
    const auto p = detail::in_disk(recon, truth);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < p.a.size(); ++i) {
        num += std::abs(p.a[i] - p.b[i]);
        den += std::abs(p.b[i]);
    }
    require(den > 0.0, "re: ground truth is zero everywhere in the disk");
    return num / den;
}

inline double mse(const PixelImage& recon, const PixelImage& truth) {
    const auto p = detail::in_disk(recon, truth);
    double s = 0.0;
    for (std::size_t i = 0; i < p.a.size(); ++i) s += (p.a[i] - p.b[i]) * (p.a[i] - p.b[i]);
    return s / static_cast<double>(p.a.size());
}

// Whole-image SSIM, 4 ma mb cov / ((ma^2 + mb^2)(va + vb)), i.e. the
// luminance-contrast-structure product with global statistics. Bounded by
// [-1, 1].
inline double ssim(const PixelImage& a, const PixelImage& b) {
    const auto m = detail::moments(detail::in_disk(a, b));
    return 4.0 * m.ma * m.mb * m.cov / ((m.ma * m.ma + m.mb * m.mb + metric_eps) * (m.va + m.vb + metric_eps));
}

// The same expression with the variances squared in the denominator. Not
// bounded: ssim_squared_var(x, x) = 1 / var(x).
inline double ssim_squared_var(const PixelImage& a, const PixelImage& b) {
    const auto m = detail::moments(detail::in_disk(a, b));
    return 4.0 * m.ma * m.mb * m.cov /
           ((m.ma * m.ma + m.mb * m.mb + metric_eps) * (m.va * m.va + m.vb * m.vb + metric_eps));
}

// 10 log10(max^2 / MSE); identical images give +infinity.
inline double psnr(const PixelImage& recon, const PixelImage& truth, double max_value = default_psnr_max) {
    require(max_value > 0.0, "psnr: max value must be positive");
    const double e = mse(recon, truth);
    if (e == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_value * max_value / e);
}

// Dynamic range ratio (max - min of recon) / (max - min of truth).
inline double dr(const PixelImage& recon, const PixelImage& truth) {
    const auto p = detail::in_disk(recon, truth);
    const auto [alo, ahi] = std::minmax_element(p.a.begin(), p.a.end());
    const auto [blo, bhi] = std::minmax_element(p.b.begin(), p.b.end());
    require(*bhi > *blo, "dr: ground truth is constant");
    return (*ahi - *alo) / (*bhi - *blo);
}

// Pearson correlation; 0 when either image is constant.
inline double cc(const PixelImage& recon, const PixelImage& truth) {
    const auto m = detail::moments(detail::in_disk(recon, truth));
    if (m.va == 0.0 || m.vb == 0.0) return 0.0;
    return std::clamp(m.cov / std::sqrt(m.va * m.vb), -1.0, 1.0);
}

// 20 log10(RMS(clean) / RMS(noisy - clean)); identical frames give +infinity.
inline double measure_snr(const MeasurementFrame& clean, const MeasurementFrame& noisy) {
    require(clean.size() == noisy.size(), "measure_snr: frame lengths differ");
    std::vector<double> diff(clean.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = noisy.values[i] - clean.values[i];
    const double n = rms(diff);
    if (n == 0.0) return std::numeric_limits<double>::infinity();
    return 20.0 * std::log10(rms(clean.values) / n);
}

struct MetricRow {
    std::size_t record = 0;
    std::string setting;
    std::string method;
    double noise_db = std::numeric_limits<double>::infinity(); // inf: noiseless
    double re = 0, ssim = 0, ssim_squared_var = 0, psnr = 0, dr = 0, mse = 0, cc = 0;
};

inline MetricRow evaluate_image(const PixelImage& recon, const PixelImage& truth, double psnr_max = default_psnr_max) {
    MetricRow r;
    r.re = eitdiff::re(recon, truth);
    r.ssim = eitdiff::ssim(recon, truth);
    r.ssim_squared_var = eitdiff::ssim_squared_var(recon, truth);
    r.psnr = eitdiff::psnr(recon, truth, psnr_max);
    r.dr = eitdiff::dr(recon, truth);
    r.mse = eitdiff::mse(recon, truth);
    r.cc = eitdiff::cc(recon, truth);
    return r;
}

// Arithmetic means of each column (psnr is +inf if any row is).
inline MetricRow aggregate(const std::vector<MetricRow>& rows) {
    require(!rows.empty(), "aggregate: no rows");
    MetricRow m;
    m.setting = "all";
    m.method = rows.front().method;
    m.noise_db = rows.front().noise_db;
    for (const auto& r : rows) {
        m.re += r.re;
        m.ssim += r.ssim;
        m.ssim_squared_var += r.ssim_squared_var;
        m.psnr += r.psnr;
        m.dr += r.dr;
        m.mse += r.mse;
        m.cc += r.cc;
    }
    const double n = static_cast<double>(rows.size());
    m.re /= n;
    m.ssim /= n;
    m.ssim_squared_var /= n;
    m.psnr /= n;
    m.dr /= n;
    m.mse /= n;
    m.cc /= n;
    return m;
}

inline std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

inline const char* metric_csv_header() { return "record,setting,method,noise_db,re,ssim,ssim_squared_var,psnr,dr,mse,cc"; }

inline void write_metric_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << metric_csv_header() << '\n';
    for (const auto& r : rows)
        out << r.record << ',' << r.setting << ',' << r.method << ',' << format_metric(r.noise_db) << ','
            << format_metric(r.re) << ',' << format_metric(r.ssim) << ',' << format_metric(r.ssim_squared_var) << ','
            << format_metric(r.psnr) << ',' << format_metric(r.dr) << ',' << format_metric(r.mse) << ','
            << format_metric(r.cc) << '\n';
}

// JSON cannot hold infinities; they are written as the string "inf".
inline nlohmann::json metric_json(double v) {
    if (std::isfinite(v)) return v;
    return format_metric(v);
}

inline nlohmann::json to_json(const MetricRow& r) {
    return {{"method", r.method},
            {"noise_db", metric_json(r.noise_db)},
            {"re", metric_json(r.re)},
            {"ssim", metric_json(r.ssim)},
            {"ssim_squared_var", metric_json(r.ssim_squared_var)},
            {"psnr", metric_json(r.psnr)},
            {"dr", metric_json(r.dr)},
            {"mse", metric_json(r.mse)},
            {"cc", metric_json(r.cc)}};
}

} // namespace eitdiff
