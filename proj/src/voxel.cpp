#include "evlie/voxel.hpp"

#include "evlie/errors.hpp"
#include "evlie/kernels.hpp"

namespace evlie {

EventVoxel::EventVoxel(int bins_, int height_, int width_)
    : bins(bins_), height(height_), width(width_) {
    if (bins <= 0 || height <= 0 || width <= 0) {
        throw ArgumentError("voxel grid dimensions must be positive");
    }
    data.assign(static_cast<size_t>(bins) * height * width, 0.0);
}

EventVoxel voxelize_sbt(const EventStream& stream, int bins) {
    if (bins <= 0) throw ArgumentError("bin count must be >= 1");
    stream.validate();

    EventVoxel vox(bins, stream.height, stream.width);
    const size_t n = stream.records.size();
    if (n == 0) return vox;

    const uint64_t t0 = stream.records.front().t;
    const uint64_t span = stream.records.back().t - t0;
    vox.t0 = t0;
    vox.t_end = stream.records.back().t;

    std::vector<uint16_t> xs(n), ys(n);
    std::vector<int8_t> ps(n);
    std::vector<int32_t> bin_of(n);
    for (size_t i = 0; i < n; ++i) {
        const EventRecord& r = stream.records[i];
        xs[i] = r.x;
        ys[i] = r.y;
        ps[i] = r.p;
        if (span == 0) {
            bin_of[i] = 0;
        } else {
            const unsigned __int128 num =
                static_cast<unsigned __int128>(r.t - t0) *
                static_cast<uint64_t>(bins);
            auto b = static_cast<int64_t>(num / span);
            if (b >= bins) b = bins - 1;
            bin_of[i] = static_cast<int32_t>(b);
        }
    }

    std::vector<int64_t> acc(vox.data.size(), 0);
    kernels::voxel_accum(xs.data(), ys.data(), ps.data(), bin_of.data(),
                         static_cast<int64_t>(n), bins, stream.height,
                         stream.width, acc.data());
    for (size_t i = 0; i < acc.size(); ++i) {
        vox.data[i] = static_cast<double>(acc[i]);
    }
    return vox;
}

} // namespace evlie
