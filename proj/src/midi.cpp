#include "bachi/midi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

namespace bachi {

namespace {

struct Reader {
    const std::vector<std::uint8_t>& data;
    size_t pos = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw std::runtime_error("midi parse error at byte " + std::to_string(pos) +
                                 ": " + msg);
    }

    std::uint8_t u8() {
        if (pos >= data.size()) fail("unexpected end of file");
        return data[pos++];
    }

    std::uint16_t u16() { return (std::uint16_t)(u8() << 8 | u8()); }

    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = v << 8 | u8();
        return v;
    }

    // variable-length quantity, at most 4 bytes
    std::uint32_t vlq() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            std::uint8_t b = u8();
            v = v << 7 | (b & 0x7f);
            if (!(b & 0x80)) return v;
        }
        fail("variable-length quantity longer than 4 bytes");
    }

    void skip(size_t n) {
        if (pos + n > data.size()) fail("skip past end of file");
        pos += n;
    }

    std::string tag() {
        std::string s;
        for (int i = 0; i < 4; ++i) s.push_back((char)u8());
        return s;
    }
};

struct RawEvent {
    long tick;
    std::uint8_t status;
    std::uint8_t d1, d2;
};

}  // namespace

MidiScore parse_midi(const std::vector<std::uint8_t>& bytes) {
    if (bytes.empty()) throw std::runtime_error("midi parse error: empty file");
    Reader r{bytes};
    if (r.tag() != "MThd") r.fail("missing MThd header chunk");
    std::uint32_t hdr_len = r.u32();
    if (hdr_len < 6) r.fail("header chunk too short");
    std::uint16_t format = r.u16();
    std::uint16_t ntrks = r.u16();
    std::uint16_t division = r.u16();
    r.skip(hdr_len - 6);
    if (format > 1)
        r.fail("unsupported format " + std::to_string(format) + " (only 0 and 1)");
    if (division & 0x8000) r.fail("SMPTE time division not supported");
    if (division == 0) r.fail("zero ticks-per-quarter-note");

    MidiScore score;
    score.ticks_per_quarter = division;
    const double tpq = (double)division;

    std::vector<RawEvent> note_events;
    for (int trk = 0; trk < ntrks; ++trk) {
        size_t chunk_start = r.pos;
        std::string tag = r.tag();
        std::uint32_t len = r.u32();
        if (r.pos + len > bytes.size()) {
            r.pos = chunk_start;
            r.fail("chunk '" + tag + "' length " + std::to_string(len) +
                   " exceeds remaining bytes");
        }
        if (tag != "MTrk") {  // unknown chunk types are skipped per the SMF spec
            r.skip(len);
            --trk;
            continue;
        }
        size_t end = r.pos + len;
        long tick = 0;
        std::uint8_t running = 0;
        while (r.pos < end) {
            tick += (long)r.vlq();
            std::uint8_t b = r.u8();
            std::uint8_t status;
            std::uint8_t d1;
            if (b & 0x80) {
                status = b;
                if (status < 0xf0) running = status;
                d1 = 0;
            } else {
                if (running == 0) r.fail("data byte with no running status");
                status = running;
                d1 = b;
            }
            if (status == 0xff) {  // meta
                std::uint8_t type = r.u8();
                std::uint32_t mlen = r.vlq();
                if (r.pos + mlen > end) r.fail("meta event overruns track");
                if (type == 0x51 && mlen == 3) {
                    std::uint32_t usec = (std::uint32_t)r.u8() << 16 |
                                         (std::uint32_t)r.u8() << 8 | r.u8();
                    if (usec == 0) r.fail("zero tempo");
                    score.tempos.push_back({tick / tpq, 60e6 / usec});
                } else if (type == 0x58 && mlen >= 2) {
                    std::uint8_t num = r.u8();
                    std::uint8_t den_pow = r.u8();
                    r.skip(mlen - 2);
                    score.time_signatures.push_back({tick / tpq, num, 1 << den_pow});
                } else {
                    r.skip(mlen);
                }
            } else if (status == 0xf0 || status == 0xf7) {  // sysex
                std::uint32_t slen = r.vlq();
                if (r.pos + slen > end) r.fail("sysex event overruns track");
                r.skip(slen);
            } else {
                std::uint8_t hi = status & 0xf0;
                int nbytes = (hi == 0xc0 || hi == 0xd0) ? 1 : 2;
                if (!(b & 0x80)) {  // d1 already consumed via running status
                    std::uint8_t d2 = nbytes == 2 ? r.u8() : 0;
                    if (hi == 0x80 || hi == 0x90)
                        note_events.push_back({tick, status, d1, d2});
                } else {
                    d1 = r.u8();
                    std::uint8_t d2 = nbytes == 2 ? r.u8() : 0;
                    if (hi == 0x80 || hi == 0x90)
                        note_events.push_back({tick, status, d1, d2});
                }
            }
        }
        if (r.pos != end) r.fail("track events overran chunk boundary");

        // close this track's open notes at track end
        std::map<std::pair<int, int>, std::vector<std::pair<long, int>>> open;
        for (const auto& ev : note_events) {
            int channel = ev.status & 0x0f;
            int pitch = ev.d1;
            bool is_on = (ev.status & 0xf0) == 0x90 && ev.d2 > 0;
            auto key = std::make_pair(channel, pitch);
            if (is_on) {
                open[key].push_back({ev.tick, ev.d2});
            } else {
                auto it = open.find(key);
                if (it == open.end() || it->second.empty()) continue;  // stray off
                auto [on_tick, vel] = it->second.back();
                it->second.pop_back();
                if (ev.tick > on_tick)
                    score.notes.push_back(
                        {pitch, on_tick / tpq, (ev.tick - on_tick) / tpq, vel});
            }
        }
        for (auto& [key, stack] : open)
            for (auto [on_tick, vel] : stack)
                if (tick > on_tick)
                    score.notes.push_back(
                        {key.second, on_tick / tpq, (tick - on_tick) / tpq, vel});
        note_events.clear();
    }

    std::sort(score.notes.begin(), score.notes.end(),
              [](const NoteEvent& a, const NoteEvent& b) {
                  if (a.onset_beats != b.onset_beats) return a.onset_beats < b.onset_beats;
                  return a.pitch < b.pitch;
              });
    std::sort(score.tempos.begin(), score.tempos.end(),
              [](const TempoChange& a, const TempoChange& b) { return a.beat < b.beat; });
    for (const auto& n : score.notes)
        score.total_beats = std::max(score.total_beats, n.onset_beats + n.duration_beats);
    return score;
}

MidiScore parse_midi_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open midi file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return parse_midi(bytes);
}

namespace {

void put_u16(std::vector<std::uint8_t>& v, std::uint16_t x) {
    v.push_back(x >> 8);
    v.push_back(x & 0xff);
}

void put_u32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    for (int i = 3; i >= 0; --i) v.push_back((x >> (8 * i)) & 0xff);
}

void put_vlq(std::vector<std::uint8_t>& v, std::uint32_t x) {
    std::uint8_t buf[4];
    int n = 0;
    do {
        buf[n++] = x & 0x7f;
        x >>= 7;
    } while (x);
    for (int i = n - 1; i >= 0; --i)
        v.push_back(i == 0 ? buf[i] : (buf[i] | 0x80));
}

}  // namespace

std::vector<std::uint8_t> write_midi(const std::vector<NoteEvent>& notes,
                                     int ticks_per_quarter, double bpm) {
    struct TimedMsg {
        long tick;
        int order;  // offs before ons at the same tick
        std::uint8_t status, d1, d2;
    };
    std::vector<TimedMsg> msgs;
    for (const auto& n : notes) {
        long on = (long)std::llround(n.onset_beats * ticks_per_quarter);
        long off = (long)std::llround((n.onset_beats + n.duration_beats) *
                                      ticks_per_quarter);
        std::uint8_t vel = (std::uint8_t)std::clamp(n.velocity, 1, 127);
        msgs.push_back({on, 1, 0x90, (std::uint8_t)n.pitch, vel});
        msgs.push_back({off, 0, 0x80, (std::uint8_t)n.pitch, 0});
    }
    std::sort(msgs.begin(), msgs.end(), [](const TimedMsg& a, const TimedMsg& b) {
        if (a.tick != b.tick) return a.tick < b.tick;
        if (a.order != b.order) return a.order < b.order;
        return a.d1 < b.d1;
    });

    std::vector<std::uint8_t> track;
    // tempo
    put_vlq(track, 0);
    track.push_back(0xff);
    track.push_back(0x51);
    track.push_back(3);
    std::uint32_t usec = (std::uint32_t)std::llround(60e6 / bpm);
    track.push_back((usec >> 16) & 0xff);
    track.push_back((usec >> 8) & 0xff);
    track.push_back(usec & 0xff);
    // time signature 4/4
    put_vlq(track, 0);
    track.push_back(0xff);
    track.push_back(0x58);
    track.push_back(4);
    track.push_back(4);
    track.push_back(2);
    track.push_back(24);
    track.push_back(8);

    long tick = 0;
    for (const auto& m : msgs) {
        put_vlq(track, (std::uint32_t)(m.tick - tick));
        tick = m.tick;
        track.push_back(m.status);
        track.push_back(m.d1);
        track.push_back(m.d2);
    }
    // end of track
    put_vlq(track, 0);
    track.push_back(0xff);
    track.push_back(0x2f);
    track.push_back(0);

    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'M', 'T', 'h', 'd'});
    put_u32(out, 6);
    put_u16(out, 0);  // format 0
    put_u16(out, 1);
    put_u16(out, (std::uint16_t)ticks_per_quarter);
    out.insert(out.end(), {'M', 'T', 'r', 'k'});
    put_u32(out, (std::uint32_t)track.size());
    out.insert(out.end(), track.begin(), track.end());
    return out;
}

void write_midi_file(const std::string& path, const std::vector<NoteEvent>& notes,
                     int ticks_per_quarter, double bpm) {
    auto bytes = write_midi(notes, ticks_per_quarter, bpm);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write midi file: " + path);
    out.write((const char*)bytes.data(), (std::streamsize)bytes.size());
}

}  // namespace bachi
