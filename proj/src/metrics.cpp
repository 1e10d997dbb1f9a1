#include "evlie/metrics.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "evlie/errors.hpp"

namespace evlie {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_window() {
    std::vector<double> w(kWin * kWin);
    const int r = kWin / 2;
    double sum = 0.0;
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
            const double v =
                std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
            w[(dy + r) * kWin + (dx + r)] = v;
            sum += v;
        }
    }
    for (double& v : w) v /= sum;
    return w;
}

} // namespace

double psnr(const Image& a, const Image& b) {
    if (!a.same_geometry(b)) {
        throw ArgumentError("psnr: geometry mismatch, " +
                            std::to_string(a.height) + "x" +
                            std::to_string(a.width) + "x" +
                            std::to_string(a.channels) + " vs " +
                            std::to_string(b.height) + "x" +
                            std::to_string(b.width) + "x" +
                            std::to_string(b.channels));
    }
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse == 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
    if (!a.same_geometry(b)) {
        throw ArgumentError("ssim: geometry mismatch");
    }
    if (a.height < kWin || a.width < kWin) {
        throw ArgumentError("ssim: needs at least " + std::to_string(kWin) +
                            "x" + std::to_string(kWin) + " pixels, got " +
                            std::to_string(a.height) + "x" +
                            std::to_string(a.width));
    }
    static const std::vector<double> win = gaussian_window();
    const int r = kWin / 2;
    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        double acc = 0.0;
        int64_t count = 0;
        for (int y = r; y < a.height - r; ++y) {
            for (int x = r; x < a.width - r; ++x) {
                double mx = 0.0, my = 0.0, mxx = 0.0, myy = 0.0, mxy = 0.0;
                for (int dy = -r; dy <= r; ++dy) {
                    for (int dx = -r; dx <= r; ++dx) {
                        const double wv = win[(dy + r) * kWin + (dx + r)];
                        const double va = a.at(y + dy, x + dx, c);
                        const double vb = b.at(y + dy, x + dx, c);
                        mx += wv * va;
                        my += wv * vb;
                        mxx += wv * va * va;
                        myy += wv * vb * vb;
                        mxy += wv * va * vb;
                    }
                }
                const double vx = mxx - mx * mx;
                const double vy = myy - my * my;
                const double cov = mxy - mx * my;
                acc += ((2.0 * mx * my + kC1) * (2.0 * cov + kC2)) /
                       ((mx * mx + my * my + kC1) * (vx + vy + kC2));
                ++count;
            }
        }
        total += acc / static_cast<double>(count);
    }
    return total / a.channels;
}

} // namespace evlie
