#include "evlie/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "evlie/errors.hpp"

namespace evlie {

Image::Image(int h, int w, int c, double fill)
    : height(h), width(w), channels(c),
      data(static_cast<size_t>(h) * w * c, fill) {
    if (h <= 0 || w <= 0 || c <= 0) {
        throw ArgumentError("image dimensions must be positive, got " +
                            std::to_string(h) + "x" + std::to_string(w) + "x" +
                            std::to_string(c));
    }
}

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArgumentError("cannot open " + path);

    auto next_token = [&in, &path]() -> std::string {
        std::string tok;
        while (in >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(in, rest);
                continue;
            }
            return tok;
        }
        throw FormatError("truncated PPM header in " + path);
    };

    if (next_token() != "P6") throw FormatError(path + " is not a P6 PPM");
    const int w = std::stoi(next_token());
    const int h = std::stoi(next_token());
    const int maxval = std::stoi(next_token());
    if (w <= 0 || h <= 0) throw FormatError("bad PPM geometry in " + path);
    if (maxval != 255) {
        throw FormatError("only 8-bit PPM supported, maxval=" +
                          std::to_string(maxval));
    }
    in.get(); // single whitespace byte after maxval

    std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(in.gcount()) != raw.size()) {
        throw FormatError("truncated PPM payload in " + path);
    }

    Image img(h, w, 3);
    for (size_t i = 0; i < raw.size(); ++i) {
        img.data[i] = raw[i] / 255.0;
    }
    return img;
}

void write_ppm(const Image& img, const std::string& path) {
    if (img.channels != 1 && img.channels != 3) {
        throw ArgumentError("PPM writer expects 1 or 3 channels, got " +
                            std::to_string(img.channels));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot open " + path + " for writing");
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.pixel_count() * 3);
    size_t k = 0;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v =
                    img.at(y, x, img.channels == 1 ? 0 : c);
                const double clamped = std::clamp(v, 0.0, 1.0);
                raw[k++] =
                    static_cast<unsigned char>(std::lround(clamped * 255.0));
            }
        }
    }
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size()));
    if (!out) throw Error("write failed: " + path);
}

Image illumination_prior(const Image& image) {
    if (image.data.empty()) throw ArgumentError("illumination_prior: empty image");
    Image prior(image.height, image.width, 1);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            double m = image.at(y, x, 0);
            for (int c = 1; c < image.channels; ++c) {
                m = std::max(m, image.at(y, x, c));
            }
            prior.at(y, x, 0) = m;
        }
    }
    return prior;
}

Image apply_litup(const Image& image, const Image& litup) {
    if (!image.same_geometry(litup)) {
        throw ArgumentError("apply_litup: geometry mismatch");
    }
    Image out(image.height, image.width, image.channels);
    for (size_t i = 0; i < image.data.size(); ++i) {
        out.data[i] = std::clamp(image.data[i] * litup.data[i], 0.0, 1.0);
    }
    return out;
}

RetinexPair retinex_decompose(const Image& image, double eps) {
    if (eps <= 0.0) throw ArgumentError("retinex_decompose: eps must be > 0");
    const Image prior = illumination_prior(image);
    RetinexPair pair;
    pair.illumination = Image(image.height, image.width, image.channels);
    pair.reflectance = Image(image.height, image.width, image.channels);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const double l = std::max(prior.at(y, x, 0), eps);
            for (int c = 0; c < image.channels; ++c) {
                pair.illumination.at(y, x, c) = l;
                pair.reflectance.at(y, x, c) = image.at(y, x, c) / l;
            }
        }
    }
    return pair;
}

Image synthesize_lowlight(const Image& image, double gain, double gamma,
                          double noise_sigma, uint64_t seed) {
    if (gain <= 0.0) throw ArgumentError("synthesize_lowlight: gain must be > 0");
    if (gamma < 1.0) throw ArgumentError("synthesize_lowlight: gamma must be >= 1");
    if (noise_sigma < 0.0) {
        throw ArgumentError("synthesize_lowlight: noise_sigma must be >= 0");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    Image out(image.height, image.width, image.channels);
    for (size_t i = 0; i < image.data.size(); ++i) {
        double v = std::pow(gain * image.data[i], gamma);
        if (noise_sigma > 0.0) v += noise_sigma * noise(rng);
        out.data[i] = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

} // namespace evlie
