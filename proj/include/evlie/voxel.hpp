#pragma once

#include <cstdint>
#include <vector>

#include "evlie/events.hpp"

namespace evlie {

// Symmetric binary tensor of an event stream: signed polarity counts in
// a bins x height x width grid, bin-major row-major storage.
struct EventVoxel {
    int bins = 0;
    int height = 0;
    int width = 0;
    uint64_t t0 = 0;
    uint64_t t_end = 0;
    std::vector<double> data;

    EventVoxel() = default;
    EventVoxel(int bins_, int height_, int width_);

    double& at(int b, int y, int x) {
        return data[(static_cast<size_t>(b) * height + y) * width + x];
    }
    double at(int b, int y, int x) const {
        return data[(static_cast<size_t>(b) * height + y) * width + x];
    }
};

// Splits the stream's time span [t_first, t_last] into `bins` equal
// half-open intervals and sums event polarities per (bin, y, x) cell.
// The final event lands exactly on the span end and is kept in the last
// bin. A span of zero (or a single event) puts everything in bin 0; an
// empty stream gives an all-zero grid.
EventVoxel voxelize_sbt(const EventStream& stream, int bins);

} // namespace evlie
