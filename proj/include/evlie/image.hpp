#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace evlie {

/// H x W x C real image, row-major interleaved, intensities in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0);

    double& at(int y, int x, int c) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    size_t pixel_count() const {
        return static_cast<size_t>(height) * width;
    }
    bool same_geometry(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

// Binary PPM (P6, 8-bit), intensities mapped by /255 on read and
// round(v*255) after clamping on write. Only 3-channel images are
// written; 1-channel images are replicated.
Image read_ppm(const std::string& path);
void write_ppm(const Image& img, const std::string& path);

/// Per-pixel channel maximum; the Retinex illumination prior L_p.
/// Result is 1-channel, pointwise >= every input channel.
Image illumination_prior(const Image& image);

/// N = I (.) Lbar, clamped to [0, 1]. Shapes must match.
Image apply_litup(const Image& image, const Image& litup);

/// Reflectance/illumination split whose elementwise product reproduces
/// the source exactly: L = max(channel-max prior, eps) replicated,
/// R = I / L. R stays in [0, 1] because L >= I pointwise.
struct RetinexPair {
    Image reflectance;
    Image illumination;
};
RetinexPair retinex_decompose(const Image& image, double eps = 1e-4);

/// Paired-data degradation: clamp((gain * I)^gamma + N(0, sigma)).
/// Deterministic per seed.
Image synthesize_lowlight(const Image& image, double gain, double gamma,
                          double noise_sigma, uint64_t seed);

} // namespace evlie
