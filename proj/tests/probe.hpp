#pragma once

// Standalone multinomial logistic probe with a hand-derived full-batch
// gradient. Used as an independent difficulty oracle for synthetic datasets;
// deliberately shares no code with the tensor engine.

#include <cmath>
#include <vector>

namespace oracles {

inline double linear_probe_accuracy(const std::vector<std::vector<double>>& x_train,
                                    const std::vector<int>& y_train,
                                    const std::vector<std::vector<double>>& x_test,
                                    const std::vector<int>& y_test, int n_classes,
                                    int iters = 400, double lr = 0.5) {
    const std::size_t n = x_train.size();
    const std::size_t d = x_train[0].size();
    // standardize with training statistics
    std::vector<double> mean(d, 0.0), stddev(d, 0.0);
    for (const auto& row : x_train)
        for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
    for (auto& m : mean) m /= static_cast<double>(n);
    for (const auto& row : x_train)
        for (std::size_t j = 0; j < d; ++j)
            stddev[j] += (row[j] - mean[j]) * (row[j] - mean[j]);
    for (auto& s : stddev) s = std::sqrt(s / static_cast<double>(n)) + 1e-9;
    auto norm = [&](const std::vector<double>& row) {
        std::vector<double> out(d);
        for (std::size_t j = 0; j < d; ++j) out[j] = (row[j] - mean[j]) / stddev[j];
        return out;
    };

    std::vector<std::vector<double>> xt;
    xt.reserve(n);
    for (const auto& row : x_train) xt.push_back(norm(row));

    std::vector<double> w(d * n_classes, 0.0), b(n_classes, 0.0);
    std::vector<double> logits(n_classes), probs(n_classes);
    std::vector<double> gw(d * n_classes), gb(n_classes);
    for (int it = 0; it < iters; ++it) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double mx = -1e300;
            for (int c = 0; c < n_classes; ++c) {
                logits[c] = b[c];
                for (std::size_t j = 0; j < d; ++j)
                    logits[c] += xt[i][j] * w[j * n_classes + c];
                mx = std::max(mx, logits[c]);
            }
            double z = 0.0;
            for (int c = 0; c < n_classes; ++c) {
                probs[c] = std::exp(logits[c] - mx);
                z += probs[c];
            }
            for (int c = 0; c < n_classes; ++c) {
                const double delta = probs[c] / z - (c == y_train[i] ? 1.0 : 0.0);
                gb[c] += delta;
                for (std::size_t j = 0; j < d; ++j)
                    gw[j * n_classes + c] += delta * xt[i][j];
            }
        }
        const double scale = lr / static_cast<double>(n);
        for (std::size_t k = 0; k < gw.size(); ++k) w[k] -= scale * gw[k];
        for (int c = 0; c < n_classes; ++c) b[c] -= scale * gb[c];
    }

    std::size_t correct = 0;
    for (std::size_t i = 0; i < x_test.size(); ++i) {
        const auto row = norm(x_test[i]);
        int best = 0;
        double best_v = -1e300;
        for (int c = 0; c < n_classes; ++c) {
            double v = b[c];
            for (std::size_t j = 0; j < d; ++j) v += row[j] * w[j * n_classes + c];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        correct += best == y_test[i];
    }
    return static_cast<double>(correct) / static_cast<double>(x_test.size());
}

} // namespace oracles
