#include "evlie/events.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "evlie/errors.hpp"
#include "evlie/kernels.hpp"

namespace evlie {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'T', '1'};
constexpr size_t kHeaderSize = 16;
constexpr size_t kRecordSize = 13;

void put_u16(std::vector<std::byte>& out, uint16_t v) {
    out.push_back(static_cast<std::byte>(v & 0xff));
    out.push_back(static_cast<std::byte>((v >> 8) & 0xff));
}

void put_u64(std::vector<std::byte>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
    }
}

uint16_t get_u16(const std::byte* p) {
    return static_cast<uint16_t>(std::to_integer<unsigned>(p[0]) |
                                 (std::to_integer<unsigned>(p[1]) << 8));
}

uint64_t get_u64(const std::byte* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = (v << 8) | std::to_integer<uint64_t>(p[i]);
    }
    return v;
}

bool time_sorted(const std::vector<EventRecord>& recs) {
    for (size_t i = 1; i < recs.size(); ++i) {
        if (recs[i].t < recs[i - 1].t) return false;
    }
    return true;
}

void check_record(const EventRecord& r, uint16_t w, uint16_t h, size_t idx) {
    if (r.x >= w || r.y >= h) {
        throw ValidationError("event " + std::to_string(idx) + " at (" +
                              std::to_string(r.x) + "," + std::to_string(r.y) +
                              ") outside " + std::to_string(w) + "x" +
                              std::to_string(h) + " sensor");
    }
    if (r.p != 1 && r.p != -1) {
        throw ValidationError("event " + std::to_string(idx) +
                              " has polarity " + std::to_string(r.p) +
                              ", expected +1 or -1");
    }
}

double pixel_luma(const Image& img, int y, int x) {
    double s = 0.0;
    for (int c = 0; c < img.channels; ++c) s += img.at(y, x, c);
    return s / img.channels;
}

} // namespace

void EventStream::validate() const {
    if (width == 0 || height == 0) {
        throw ValidationError("event stream has zero sensor geometry");
    }
    for (size_t i = 0; i < records.size(); ++i) {
        check_record(records[i], width, height, i);
        if (i > 0 && records[i].t < records[i - 1].t) {
            throw ValidationError("event " + std::to_string(i) +
                                  " breaks timestamp ordering");
        }
    }
}

void FrameSequence::validate() const {
    if (frames.size() != timestamps_us.size()) {
        throw ValidationError("frame/timestamp count mismatch");
    }
    for (size_t i = 0; i < frames.size(); ++i) {
        if (!frames[i].same_geometry(frames[0])) {
            throw ValidationError("frame " + std::to_string(i) +
                                  " geometry differs from frame 0");
        }
        if (i > 0 && timestamps_us[i] <= timestamps_us[i - 1]) {
            throw ValidationError("frame timestamps not strictly increasing at " +
                                  std::to_string(i));
        }
    }
}

EventStream parse_events(std::span<const std::byte> bytes) {
    if (bytes.size() < kHeaderSize) {
        throw FormatError("EVT1 file shorter than its 16-byte header");
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("bad EVT1 magic");
    }
    EventStream s;
    s.width = get_u16(bytes.data() + 4);
    s.height = get_u16(bytes.data() + 6);
    const uint64_t count = get_u64(bytes.data() + 8);
    if (s.width == 0 || s.height == 0) {
        throw FormatError("EVT1 header declares zero sensor geometry");
    }
    if (bytes.size() != kHeaderSize + count * kRecordSize) {
        throw FormatError("EVT1 size mismatch: header declares " +
                          std::to_string(count) + " records");
    }
    s.records.resize(count);
    const std::byte* p = bytes.data() + kHeaderSize;
    for (uint64_t i = 0; i < count; ++i, p += kRecordSize) {
        EventRecord& r = s.records[i];
        r.x = get_u16(p);
        r.y = get_u16(p + 2);
        r.t = get_u64(p + 4);
        r.p = static_cast<int8_t>(std::to_integer<uint8_t>(p[12]));
        check_record(r, s.width, s.height, i);
    }
    if (!time_sorted(s.records)) {
        std::stable_sort(s.records.begin(), s.records.end(),
                         [](const EventRecord& a, const EventRecord& b) {
                             return a.t < b.t;
                         });
    }
    return s;
}

std::vector<std::byte> serialize_events(const EventStream& stream) {
    stream.validate();
    std::vector<std::byte> out;
    out.reserve(kHeaderSize + stream.records.size() * kRecordSize);
    for (char m : kMagic) out.push_back(static_cast<std::byte>(m));
    put_u16(out, stream.width);
    put_u16(out, stream.height);
    put_u64(out, stream.records.size());
    for (const EventRecord& r : stream.records) {
        put_u16(out, r.x);
        put_u16(out, r.y);
        put_u64(out, r.t);
        out.push_back(static_cast<std::byte>(static_cast<uint8_t>(r.p)));
    }
    return out;
}

EventStream parse_events_csv(std::string_view text, uint16_t width,
                             uint16_t height) {
    if (width == 0 || height == 0) {
        throw ArgumentError("CSV events need explicit sensor geometry");
    }
    EventStream s;
    s.width = width;
    s.height = height;

    std::istringstream in{std::string(text)};
    std::string line;
    size_t lineno = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (first) {
            first = false;
            // header line is canonical on output but optional on input
            if (line == "x,y,t,p") continue;
        }
        if (line.empty()) continue;
        EventRecord r;
        long long x, y, p;
        unsigned long long t;
        char c1, c2, c3;
        std::istringstream ls(line);
        if (!(ls >> x >> c1 >> y >> c2 >> t >> c3 >> p) || c1 != ',' ||
            c2 != ',' || c3 != ',' || !(ls >> std::ws).eof()) {
            throw FormatError("CSV line " + std::to_string(lineno) +
                              " is not \"x,y,t,p\": \"" + line + "\"");
        }
        if (x < 0 || y < 0 || x > 0xffff || y > 0xffff) {
            throw ValidationError("event " + std::to_string(s.records.size()) +
                                  " coordinates out of range");
        }
        r.x = static_cast<uint16_t>(x);
        r.y = static_cast<uint16_t>(y);
        r.t = t;
        if (p != 1 && p != -1) {
            throw ValidationError("event " + std::to_string(s.records.size()) +
                                  " has polarity " + std::to_string(p));
        }
        r.p = static_cast<int8_t>(p);
        check_record(r, width, height, s.records.size());
        s.records.push_back(r);
    }
    if (!time_sorted(s.records)) {
        std::stable_sort(s.records.begin(), s.records.end(),
                         [](const EventRecord& a, const EventRecord& b) {
                             return a.t < b.t;
                         });
    }
    return s;
}

std::string serialize_events_csv(const EventStream& stream) {
    stream.validate();
    std::string out = "x,y,t,p\n";
    for (const EventRecord& r : stream.records) {
        out += std::to_string(r.x) + "," + std::to_string(r.y) + "," +
               std::to_string(r.t) + "," + std::to_string(int(r.p)) + "\n";
    }
    return out;
}

EventStream load_events(const std::string& path, uint16_t csv_width,
                        uint16_t csv_height) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArgumentError("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") {
        return parse_events_csv(buf, csv_width, csv_height);
    }
    return parse_events(std::as_bytes(std::span(buf.data(), buf.size())));
}

void save_events(const EventStream& stream, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot open " + path + " for writing");
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") {
        const std::string text = serialize_events_csv(stream);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
    } else {
        const std::vector<std::byte> bytes = serialize_events(stream);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
    if (!out) throw Error("write failed: " + path);
}

namespace {

// Per-pixel reference-level quantizer shared by the serial and parallel
// simulation paths. Calls emit(frame_pair_index, j_of_k, k, sign) for
// every event; the caller turns that into records or just counts.
template <typename Emit>
void quantize_pixel(const double* lum, int64_t n_frames, int64_t stride,
                    double c, double eps, Emit&& emit) {
    double l_ref = std::log(std::max(lum[0], eps));
    for (int64_t f = 1; f < n_frames; ++f) {
        const double l_cur = std::log(std::max(lum[f * stride], eps));
        const double delta = l_cur - l_ref;
        const auto k = static_cast<int64_t>(std::floor(std::fabs(delta) / c));
        if (k > 0) {
            const int8_t sign = delta > 0 ? int8_t{1} : int8_t{-1};
            for (int64_t j = 1; j <= k; ++j) emit(f, j, k, sign);
            l_ref += static_cast<double>(k) * c * (delta > 0 ? 1.0 : -1.0);
        }
    }
}

uint64_t interp_time(uint64_t t_a, uint64_t t_b, int64_t j, int64_t k) {
    const unsigned __int128 span = t_b - t_a;
    return t_a + static_cast<uint64_t>(span * static_cast<uint64_t>(j) /
                                       static_cast<uint64_t>(k + 1));
}

void canonical_sort(std::vector<EventRecord>& recs) {
    std::sort(recs.begin(), recs.end(),
              [](const EventRecord& a, const EventRecord& b) {
                  if (a.t != b.t) return a.t < b.t;
                  if (a.y != b.y) return a.y < b.y;
                  if (a.x != b.x) return a.x < b.x;
                  return a.p > b.p;
              });
}

} // namespace

EventStream simulate_events(const FrameSequence& frames, double c, double eps) {
    if (frames.frames.size() < 2) {
        throw ArgumentError("simulate_events needs at least 2 frames");
    }
    if (c <= 0.0) throw ArgumentError("contrast threshold must be > 0");
    if (eps <= 0.0) throw ArgumentError("log floor eps must be > 0");
    frames.validate();

    const int h = frames.frames[0].height;
    const int w = frames.frames[0].width;
    if (h > 0xffff || w > 0xffff) {
        throw ValidationError("sensor geometry exceeds 16-bit coordinates");
    }
    const auto n_frames = static_cast<int64_t>(frames.frames.size());
    const int64_t hw = static_cast<int64_t>(h) * w;

    // channel-mean luminance, frame-major
    std::vector<double> lum(static_cast<size_t>(n_frames) * hw);
    for (int64_t f = 0; f < n_frames; ++f) {
        const Image& img = frames.frames[f];
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                lum[f * hw + static_cast<int64_t>(y) * w + x] =
                    pixel_luma(img, y, x);
            }
        }
    }
    const uint64_t* ts = frames.timestamps_us.data();

    EventStream out;
    out.width = static_cast<uint16_t>(w);
    out.height = static_cast<uint16_t>(h);

    if (kernels::parallel_enabled()) {
        // two passes: per-pixel counts, prefix offsets, parallel fill
        std::vector<int64_t> counts(hw, 0);
#pragma omp parallel for schedule(static)
        for (int64_t p = 0; p < hw; ++p) {
            int64_t n = 0;
            quantize_pixel(lum.data() + p, n_frames, hw, c, eps,
                           [&n](int64_t, int64_t, int64_t, int8_t) { ++n; });
            counts[p] = n;
        }
        std::vector<int64_t> offsets(hw + 1, 0);
        for (int64_t p = 0; p < hw; ++p) offsets[p + 1] = offsets[p] + counts[p];
        out.records.resize(static_cast<size_t>(offsets[hw]));
#pragma omp parallel for schedule(static)
        for (int64_t p = 0; p < hw; ++p) {
            const auto x = static_cast<uint16_t>(p % w);
            const auto y = static_cast<uint16_t>(p / w);
            EventRecord* dst = out.records.data() + offsets[p];
            quantize_pixel(lum.data() + p, n_frames, hw, c, eps,
                           [&](int64_t f, int64_t j, int64_t k, int8_t sign) {
                               *dst++ = EventRecord{
                                   x, y, interp_time(ts[f - 1], ts[f], j, k),
                                   sign};
                           });
        }
    } else {
        for (int64_t p = 0; p < hw; ++p) {
            const auto x = static_cast<uint16_t>(p % w);
            const auto y = static_cast<uint16_t>(p / w);
            quantize_pixel(lum.data() + p, n_frames, hw, c, eps,
                           [&](int64_t f, int64_t j, int64_t k, int8_t sign) {
                               out.records.push_back(EventRecord{
                                   x, y, interp_time(ts[f - 1], ts[f], j, k),
                                   sign});
                           });
        }
    }
    canonical_sort(out.records);
    return out;
}

EventStream inject_noise(const EventStream& stream, double rate, uint64_t t_a,
                         uint64_t t_b, uint64_t seed) {
    if (rate < 0.0) throw ArgumentError("noise rate must be >= 0");
    if (t_a >= t_b) throw ArgumentError("noise window needs t_a < t_b");
    if (rate == 0.0) return stream;
    if (stream.width == 0 || stream.height == 0) {
        throw ValidationError("inject_noise on a stream with no geometry");
    }

    const double span_s = static_cast<double>(t_b - t_a) * 1e-6;
    const double lambda =
        rate * stream.width * stream.height * span_s;

    std::mt19937_64 rng(seed);
    std::poisson_distribution<int64_t> n_noise(lambda);
    std::uniform_int_distribution<uint32_t> ux(0, stream.width - 1);
    std::uniform_int_distribution<uint32_t> uy(0, stream.height - 1);
    std::uniform_int_distribution<uint64_t> ut(t_a, t_b - 1);
    std::uniform_int_distribution<int> up(0, 1);

    const int64_t n = n_noise(rng);
    std::vector<EventRecord> noise(static_cast<size_t>(n));
    for (auto& r : noise) {
        r.x = static_cast<uint16_t>(ux(rng));
        r.y = static_cast<uint16_t>(uy(rng));
        r.t = ut(rng);
        r.p = up(rng) ? int8_t{1} : int8_t{-1};
    }
    std::stable_sort(noise.begin(), noise.end(),
                     [](const EventRecord& a, const EventRecord& b) {
                         return a.t < b.t;
                     });

    EventStream out;
    out.width = stream.width;
    out.height = stream.height;
    out.records.resize(stream.records.size() + noise.size());
    // original events come first on timestamp ties
    std::merge(stream.records.begin(), stream.records.end(), noise.begin(),
               noise.end(), out.records.begin(),
               [](const EventRecord& a, const EventRecord& b) {
                   return a.t < b.t;
               });
    return out;
}

} // namespace evlie
