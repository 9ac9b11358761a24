#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "mvgt/errors.hpp"

namespace mvgt::eegsig {

// Second-order section, a0 normalized to 1, direct form II transposed.
struct Biquad {
    double b0, b1, b2, a1, a2;
};

// Butterworth band-pass as cascaded biquads. `order` is the band-pass order
// (number of poles); it must be even, and the analog prototype has order/2
// poles. Designed in zpk form with the bilinear transform, following the
// usual prewarped-edge recipe.
inline std::vector<Biquad> butter_bandpass(int order, double low_hz,
                                           double high_hz, double fs) {
    if (order < 2 || order % 2 != 0)
        throw ConfigError("butter_bandpass: order must be even and >= 2");
    if (!(low_hz > 0.0) || !(low_hz < high_hz) || !(high_hz < fs / 2.0))
        throw ConfigError("butter_bandpass: band (" + std::to_string(low_hz) +
                          "," + std::to_string(high_hz) +
                          ") Hz invalid for sample rate " + std::to_string(fs));
    using cplx = std::complex<double>;
    const int n = order / 2; // prototype order
    const double fs2 = 2.0 * fs;
    const double w_lo = fs2 * std::tan(std::numbers::pi * low_hz / fs);
    const double w_hi = fs2 * std::tan(std::numbers::pi * high_hz / fs);
    const double bw = w_hi - w_lo;
    const double w0_sq = w_lo * w_hi;

    // analog band-pass poles (2n of them, conjugate-symmetric)
    std::vector<cplx> poles;
    poles.reserve(2 * n);
    for (int k = 1; k <= n; ++k) {
        const double theta =
            std::numbers::pi * (2.0 * k + n - 1.0) / (2.0 * n);
        const cplx proto(std::cos(theta), std::sin(theta));
        const cplx ps = proto * (bw * 0.5);
        const cplx root = std::sqrt(ps * ps - w0_sq);
        poles.push_back(ps + root);
        poles.push_back(ps - root);
    }

    // gain: H_bp(s) = (bw s)^n / prod(s - p_i); bilinear maps the n zeros at
    // s=0 to z=1 and the implicit zeros at infinity to z=-1
    cplx denom_prod(1.0, 0.0);
    for (const cplx& p : poles) denom_prod *= (fs2 - p);
    const double k_digital =
        std::pow(bw, n) * std::pow(fs2, n) / denom_prod.real();

    // digital poles
    std::vector<cplx> zpoles;
    zpoles.reserve(poles.size());
    for (const cplx& p : poles) zpoles.push_back((fs2 + p) / (fs2 - p));

    // pair conjugates into sections; each section takes zeros {+1, -1}
    std::vector<Biquad> sos;
    std::vector<bool> used(zpoles.size(), false);
    for (std::size_t i = 0; i < zpoles.size(); ++i) {
        if (used[i]) continue;
        used[i] = true;
        // find the conjugate partner
        std::size_t j = i;
        double best = 1e300;
        for (std::size_t t = i + 1; t < zpoles.size(); ++t) {
            if (used[t]) continue;
            const double d = std::abs(zpoles[t] - std::conj(zpoles[i]));
            if (d < best) {
                best = d;
                j = t;
            }
        }
        if (j == i)
            throw NumericError("butter_bandpass: unpaired pole in design");
        used[j] = true;
        const double a1 = -(zpoles[i] + zpoles[j]).real();
        const double a2 = (zpoles[i] * zpoles[j]).real();
        sos.push_back({1.0, 0.0, -1.0, a1, a2});
    }
    // overall gain on the first section
    sos.front().b0 *= k_digital;
    sos.front().b1 *= k_digital;
    sos.front().b2 *= k_digital;
    return sos;
}

namespace detail {

// steady-state initial conditions for one section under unit step input
inline void sos_zi_unit(const Biquad& s, double& z1, double& z2) {
    const double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    z2 = s.b2 - s.a2 * g;
    z1 = s.b1 - s.a1 * g + z2;
}

inline double sos_dc_gain(const Biquad& s) {
    return (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
}

inline void sosfilt_inplace(const std::vector<Biquad>& sos,
                            std::vector<double>& x, double x0_for_zi) {
    double level = x0_for_zi;
    for (const Biquad& s : sos) {
        double z1, z2;
        sos_zi_unit(s, z1, z2);
        z1 *= level;
        z2 *= level;
        for (double& v : x) {
            const double in = v;
            const double out = s.b0 * in + z1;
            z1 = s.b1 * in - s.a1 * out + z2;
            z2 = s.b2 * in - s.a2 * out;
            v = out;
        }
        level *= sos_dc_gain(s);
    }
}

} // namespace detail

// Forward-backward application of a biquad cascade: zero phase, squared
// magnitude response. Edges are handled with odd reflection padding plus
// steady-state initial conditions.
inline std::vector<double> sosfiltfilt(const std::vector<Biquad>& sos,
                                       const std::vector<double>& x) {
    if (x.empty()) return {};
    const std::size_t ntaps = 2 * sos.size() + 1;
    const std::size_t padlen = std::min(x.size() - 1, 3 * ntaps);

    std::vector<double> ext;
    ext.reserve(x.size() + 2 * padlen);
    for (std::size_t i = 0; i < padlen; ++i)
        ext.push_back(2.0 * x.front() - x[padlen - i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 0; i < padlen; ++i)
        ext.push_back(2.0 * x.back() - x[x.size() - 2 - i]);

    detail::sosfilt_inplace(sos, ext, ext.front());
    std::reverse(ext.begin(), ext.end());
    detail::sosfilt_inplace(sos, ext, ext.front());
    std::reverse(ext.begin(), ext.end());

    return std::vector<double>(ext.begin() + static_cast<std::ptrdiff_t>(padlen),
                               ext.begin() +
                                   static_cast<std::ptrdiff_t>(padlen + x.size()));
}

} // namespace mvgt::eegsig
