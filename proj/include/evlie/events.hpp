#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evlie/image.hpp"

namespace evlie {

/// One polarity spike: pixel (x, y), timestamp in microseconds, polarity
/// +1 or -1 (never 0).
struct EventRecord {
    uint16_t x = 0;
    uint16_t y = 0;
    uint64_t t = 0;
    int8_t p = 1;

    friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

/// A time-sorted event sequence with its sensor geometry.
struct EventStream {
    uint16_t width = 0;
    uint16_t height = 0;
    std::vector<EventRecord> records;

    size_t count() const { return records.size(); }
    bool empty() const { return records.empty(); }

    /// Throws ValidationError unless geometry is positive, every record
    /// lies inside it with polarity +1/-1, and timestamps are
    /// non-decreasing. The failing record index is named in the message.
    void validate() const;

    friend bool operator==(const EventStream&, const EventStream&) = default;
};

/// Ordered frames with strictly increasing timestamps, shared geometry,
/// linear intensity in [0, 1]. Input to the event simulator.
struct FrameSequence {
    std::vector<Image> frames;
    std::vector<uint64_t> timestamps_us;

    void validate() const;
};

// --- EVT1 binary format ---------------------------------------------------
// magic "EVT1", then little-endian u16 W, u16 H, u64 count, then `count`
// records of (u16 x, u16 y, u64 t_us, i8 p). 16-byte header, 13-byte
// records. serialize(parse(bytes)) is byte-exact on valid input that is
// already time-sorted.

EventStream parse_events(std::span<const std::byte> bytes);
std::vector<std::byte> serialize_events(const EventStream& stream);

// --- CSV format -----------------------------------------------------------
// Header line "x,y,t,p", one record per line. Geometry is not part of
// the format and must be supplied by the caller.

EventStream parse_events_csv(std::string_view text, uint16_t width,
                             uint16_t height);
std::string serialize_events_csv(const EventStream& stream);

// File helpers; format chosen by extension (.evt1 binary, .csv text).
// CSV reads require width/height > 0.
EventStream load_events(const std::string& path, uint16_t csv_width = 0,
                        uint16_t csv_height = 0);
void save_events(const EventStream& stream, const std::string& path);

/// Frame-pair event synthesis with a reference-level quantizer: per
/// pixel the reference log-intensity starts at log(max(I0, eps)); each
/// consecutive frame pair emits floor(|delta|/c) events of sign(delta)
/// where delta is the current log-intensity minus the reference, and
/// advances the reference by c per emitted event. Timestamps are spaced
/// j/(k+1) through the frame interval, so they fall strictly inside it
/// for intervals longer than k+1 microseconds. Color frames are reduced
/// to the channel mean before the log. Output is sorted by (t, y, x).
EventStream simulate_events(const FrameSequence& frames, double c,
                            double eps = 1e-3);

/// Adds background-activity noise: a Poisson(rate * W * H * span)
/// number of events, each uniform in space, time [t_a, t_b) and
/// polarity. Deterministic for a fixed seed; original events are kept
/// and the result is re-sorted (stable merge, original order preserved
/// on ties).
EventStream inject_noise(const EventStream& stream, double rate,
                         uint64_t t_a, uint64_t t_b, uint64_t seed);

} // namespace evlie
