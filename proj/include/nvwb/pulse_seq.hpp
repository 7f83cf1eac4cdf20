#pragma once

// Three-channel timing tables (laser, microwave, camera) for the ODMR,
// Rabi, Ramsey, Hahn echo and relaxometry protocols. All times are
// integer nanoseconds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "nvwb/config.hpp"
#include "nvwb/errors.hpp"

namespace nvwb {

enum class Channel { laser, microwave, camera };

inline std::string_view to_string(Channel c) {
    switch (c) {
        case Channel::laser: return "laser";
        case Channel::microwave: return "microwave";
        case Channel::camera: return "camera";
    }
    return "?";
}

inline Channel parse_channel(std::string_view name) {
    if (name == "laser") return Channel::laser;
    if (name == "microwave") return Channel::microwave;
    if (name == "camera") return Channel::camera;
    throw ValidationError("unknown channel '" + std::string(name) + "'");
}

struct Segment {
    Channel channel = Channel::laser;
    std::int64_t start_ns = 0;
    std::int64_t end_ns = 0;

    std::int64_t duration() const { return end_ns - start_ns; }
    friend bool operator==(const Segment&, const Segment&) = default;
};

/// Export order: by start time, then channel.
inline bool segment_before(const Segment& a, const Segment& b) {
    return std::tie(a.start_ns, a.channel, a.end_ns) < std::tie(b.start_ns, b.channel, b.end_ns);
}

enum class ProtocolKind { odmr, rabi, ramsey, hahn, t1 };

inline std::string_view to_string(ProtocolKind k) {
    switch (k) {
        case ProtocolKind::odmr: return "odmr";
        case ProtocolKind::rabi: return "rabi";
        case ProtocolKind::ramsey: return "ramsey";
        case ProtocolKind::hahn: return "hahn";
        case ProtocolKind::t1: return "t1";
    }
    return "?";
}

inline ProtocolKind parse_protocol_kind(std::string_view name) {
    if (name == "odmr") return ProtocolKind::odmr;
    if (name == "rabi") return ProtocolKind::rabi;
    if (name == "ramsey") return ProtocolKind::ramsey;
    if (name == "hahn") return ProtocolKind::hahn;
    if (name == "t1") return ProtocolKind::t1;
    throw ValidationError("unknown protocol '" + std::string(name) + "'");
}

struct PulseSequence {
    std::vector<Segment> segments;
    std::int64_t total_ns = 0;
    // Required camera exposure; 0 disables the exposure check.
    std::int64_t exposure_ns = 0;
    std::string protocol;
    double value = 0.0;
    int repeats = 1;

    std::vector<Segment> on(Channel c) const {
        std::vector<Segment> out;
        for (const auto& s : segments) {
            if (s.channel == c) out.push_back(s);
        }
        return out;
    }
};

struct ProtocolSpec {
    ProtocolKind kind = ProtocolKind::rabi;
    std::int64_t init_laser_ns = 5'000'000;
    std::int64_t exposure_ns = 500'000;
    std::int64_t pi_half_ns = 0;
    std::int64_t pi_ns = 0;
    std::int64_t guard_ns = 1000;
    // Hz for odmr, ns otherwise.
    std::vector<double> sweep;
    bool include_reference = true;
    int repeats = 1;

    /// pi_half, taking pi/2 from pi when only pi is set.
    std::int64_t effective_pi_half() const { return pi_half_ns > 0 ? pi_half_ns : (pi_ns + 1) / 2; }
    std::int64_t effective_pi() const { return pi_ns > 0 ? pi_ns : 2 * pi_half_ns; }

    void validate() const {
        if (init_laser_ns <= 0) throw ValidationError("init_laser_ns must be > 0");
        if (exposure_ns <= 0) throw ValidationError("exposure_ns must be > 0");
        if (guard_ns < 0) throw ValidationError("guard_ns must be >= 0");
        if (pi_half_ns < 0 || pi_ns < 0) throw ValidationError("pulse lengths must be >= 0");
        if (pi_half_ns > 0 && pi_ns > 0 && std::llabs(pi_ns - 2 * pi_half_ns) > 1) {
            throw ValidationError("pi must equal 2 * pi_half within 1 ns");
        }
        if (repeats < 1) throw ValidationError("repeats must be >= 1");
        if (sweep.empty()) throw ValidationError("sweep must not be empty");
        for (double v : sweep) {
            if (!std::isfinite(v) || v < 0.0) throw ValidationError("sweep values must be finite and >= 0");
        }
        if ((kind == ProtocolKind::ramsey || kind == ProtocolKind::hahn) && effective_pi_half() <= 0) {
            throw ValidationError(std::string(to_string(kind)) + " needs pi_half_ns > 0");
        }
    }

    static ProtocolSpec from_config(const KeyValueConfig& cfg) {
        ProtocolSpec s;
        s.kind = parse_protocol_kind(cfg.text_or("kind", cfg.text_or("protocol", "rabi")));
        s.init_laser_ns = cfg.integer_or("init_laser_ns", s.init_laser_ns);
        s.exposure_ns = cfg.integer_or("exposure_ns", s.exposure_ns);
        s.pi_half_ns = cfg.integer_or("pi_half_ns", s.pi_half_ns);
        s.pi_ns = cfg.integer_or("pi_ns", s.pi_ns);
        s.guard_ns = cfg.integer_or("guard_ns", s.guard_ns);
        if (cfg.has("sweep")) s.sweep = cfg.list("sweep");
        s.include_reference = cfg.boolean_or("include_reference", s.include_reference);
        s.repeats = static_cast<int>(cfg.integer_or("repeats", s.repeats));
        s.validate();
        return s;
    }

    static const std::set<std::string>& config_keys() {
        static const std::set<std::string> keys{"kind",     "protocol", "init_laser_ns",     "exposure_ns", "pi_half_ns",
                                                "pi_ns",    "guard_ns", "include_reference", "sweep",       "repeats"};
        return keys;
    }
};

namespace detail {

inline std::int64_t to_ns(double v, std::string_view what) {
    if (!std::isfinite(v) || v < 0.0 || v > 9e15) throw ValidationError(std::string(what) + " out of range");
    return static_cast<std::int64_t>(std::llround(v));
}

}  // namespace detail

/// One protocol instance. The signal half is: init laser, guard, microwave
/// pulses, guard, readout laser enclosing one camera exposure with a guard
/// on each side. The reference half repeats it without microwave.
inline PulseSequence build(const ProtocolSpec& spec, double value) {
    spec.validate();
    const bool listed = std::any_of(spec.sweep.begin(), spec.sweep.end(), [&](double v) {
        return v == value || std::abs(v - value) <= 1e-9 * std::max(1.0, std::abs(v));
    });
    if (!listed) throw ValidationError("value " + format_double(value) + " is not in the sweep");

    const std::int64_t g = spec.guard_ns;
    const std::int64_t exposure = spec.exposure_ns;
    std::vector<Segment> half;
    std::int64_t half_end = 0;

    if (spec.kind == ProtocolKind::odmr) {
        // CW: laser on throughout, microwave gates the signal half.
        half_end = exposure + 2 * g;
        half.push_back({Channel::laser, 0, half_end});
        half.push_back({Channel::microwave, 0, half_end});
        half.push_back({Channel::camera, g, g + exposure});
    } else {
        const std::int64_t init = spec.init_laser_ns;
        half.push_back({Channel::laser, 0, init});
        std::int64_t t = init + g;
        std::int64_t camera_start = 0;
        const std::int64_t tau = detail::to_ns(value, "sweep value");
        const std::int64_t h = spec.effective_pi_half();
        const std::int64_t pi = spec.effective_pi();
        auto pulse = [&](std::int64_t length) {
            half.push_back({Channel::microwave, t, t + length});
            t += length;
        };
        switch (spec.kind) {
            case ProtocolKind::rabi:
                if (tau > 0) pulse(tau);
                break;
            case ProtocolKind::ramsey:
                pulse(h);
                t += tau;
                pulse(h);
                break;
            case ProtocolKind::hahn:
                pulse(h);
                t += tau / 2;
                pulse(pi);
                t += tau - tau / 2;
                pulse(h);
                break;
            default: break;
        }
        std::int64_t laser_start = 0;
        if (spec.kind == ProtocolKind::t1) {
            camera_start = init + tau;
            laser_start = std::max(init, camera_start - g);
        } else {
            laser_start = t + g;
            camera_start = laser_start + g;
        }
        half_end = camera_start + exposure + g;
        if (spec.kind == ProtocolKind::t1 && laser_start == init) {
            // Readout laser directly continues the init pulse.
            half.front().end_ns = half_end;
        } else {
            half.push_back({Channel::laser, laser_start, half_end});
        }
        half.push_back({Channel::camera, camera_start, camera_start + exposure});
    }

    PulseSequence seq;
    seq.protocol = std::string(to_string(spec.kind));
    seq.value = value;
    seq.exposure_ns = exposure;
    seq.repeats = spec.repeats;
    seq.segments = half;
    seq.total_ns = half_end;
    if (spec.include_reference) {
        for (const auto& s : half) {
            if (s.channel == Channel::microwave) continue;
            seq.segments.push_back({s.channel, s.start_ns + half_end, s.end_ns + half_end});
        }
        seq.total_ns = 2 * half_end;
    }
    std::sort(seq.segments.begin(), seq.segments.end(), segment_before);
    return seq;
}

struct Violation {
    enum class Kind { bounds, overlap, exposure, containment };
    Kind kind;
    std::string message;
};

/// Checks the sequence invariants; an empty list means valid.
inline std::vector<Violation> validate(const PulseSequence& seq) {
    std::vector<Violation> out;
    auto describe = [](const Segment& s) {
        return std::string(to_string(s.channel)) + " [" + std::to_string(s.start_ns) + ", " +
               std::to_string(s.end_ns) + ")";
    };
    for (const auto& s : seq.segments) {
        if (s.start_ns < 0 || s.start_ns >= s.end_ns || s.end_ns > seq.total_ns) {
            out.push_back({Violation::Kind::bounds, describe(s) + " outside [0, " + std::to_string(seq.total_ns) + "]"});
        }
    }
    for (Channel c : {Channel::laser, Channel::microwave, Channel::camera}) {
        auto segs = seq.on(c);
        std::sort(segs.begin(), segs.end(), segment_before);
        for (std::size_t k = 1; k < segs.size(); ++k) {
            if (segs[k].start_ns < segs[k - 1].end_ns) {
                out.push_back({Violation::Kind::overlap, describe(segs[k - 1]) + " overlaps " + describe(segs[k])});
            }
        }
    }
    // Abutting laser segments form one continuous illumination interval.
    auto lasers = seq.on(Channel::laser);
    std::sort(lasers.begin(), lasers.end(), segment_before);
    std::vector<Segment> lit;
    for (const auto& s : lasers) {
        if (!lit.empty() && s.start_ns <= lit.back().end_ns) {
            lit.back().end_ns = std::max(lit.back().end_ns, s.end_ns);
        } else {
            lit.push_back(s);
        }
    }
    for (const auto& cam : seq.on(Channel::camera)) {
        if (seq.exposure_ns > 0 && cam.duration() != seq.exposure_ns) {
            out.push_back({Violation::Kind::exposure, describe(cam) + " differs from exposure " +
                                                          std::to_string(seq.exposure_ns) + " ns"});
        }
        const bool covered = std::any_of(lit.begin(), lit.end(), [&](const Segment& l) {
            return l.start_ns <= cam.start_ns && cam.end_ns <= l.end_ns;
        });
        if (!covered) out.push_back({Violation::Kind::containment, describe(cam) + " is not inside a laser segment"});
    }
    return out;
}

/// CSV `channel,start_ns,end_ns`, rows sorted by (start, channel).
inline std::string export_timing_table(const PulseSequence& seq) {
    auto rows = seq.segments;
    std::sort(rows.begin(), rows.end(), segment_before);
    std::string out = "channel,start_ns,end_ns\n";
    for (const auto& s : rows) {
        out += std::string(to_string(s.channel)) + "," + std::to_string(s.start_ns) + "," + std::to_string(s.end_ns) +
               "\n";
    }
    return out;
}

/// Inverse of export_timing_table. Total duration is the latest segment
/// end; exposure is taken from the camera segments when they agree.
inline PulseSequence parse_timing_table(std::string_view text) {
    PulseSequence seq;
    bool header = false;
    std::size_t line_no = 0;
    for (auto line : detail::split(text, '\n')) {
        ++line_no;
        const auto t = detail::trim(line);
        if (t.empty()) continue;
        if (!header) {
            if (t != "channel,start_ns,end_ns") throw ValidationError("timing table header must be channel,start_ns,end_ns");
            header = true;
            continue;
        }
        const auto cells = detail::split(t, ',');
        if (cells.size() != 3) throw ValidationError("timing table line " + std::to_string(line_no) + ": expected 3 fields");
        Segment s;
        s.channel = parse_channel(detail::trim(cells[0]));
        for (int k = 1; k <= 2; ++k) {
            const auto cell = detail::trim(cells[static_cast<std::size_t>(k)]);
            std::int64_t v = 0;
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
                throw ValidationError("timing table line " + std::to_string(line_no) + ": bad integer");
            }
            (k == 1 ? s.start_ns : s.end_ns) = v;
        }
        seq.segments.push_back(s);
        seq.total_ns = std::max(seq.total_ns, s.end_ns);
    }
    if (!header) throw ValidationError("timing table is empty");
    const auto cams = seq.on(Channel::camera);
    if (!cams.empty() && std::all_of(cams.begin(), cams.end(), [&](const Segment& c) {
            return c.duration() == cams.front().duration();
        })) {
        seq.exposure_ns = cams.front().duration();
    }
    return seq;
}

}  // namespace nvwb
