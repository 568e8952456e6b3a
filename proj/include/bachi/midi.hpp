// Standard MIDI File reading (format 0/1) and minimal writing.
// Only note events and tempo/time-signature meta events are interpreted;
// onsets and durations are expressed in beats from the file's tick
// resolution, independent of tempo.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bachi {

struct NoteEvent {
    int pitch = 0;              // MIDI note number; range-filtered to 21..108 downstream
    double onset_beats = 0.0;   // >= 0
    double duration_beats = 0.0;  // > 0
    int velocity = 64;          // 1..127, parsed but unused downstream
};

struct TempoChange {
    double beat = 0.0;
    double bpm = 120.0;
};

struct TimeSignature {
    double beat = 0.0;
    int numerator = 4;
    int denominator = 4;
};

struct MidiScore {
    std::vector<NoteEvent> notes;       // sorted by onset, then pitch
    std::vector<TempoChange> tempos;
    std::vector<TimeSignature> time_signatures;
    int ticks_per_quarter = 480;
    double total_beats = 0.0;           // end of the last note
};

// throws std::runtime_error with a byte offset on malformed input
MidiScore parse_midi(const std::vector<std::uint8_t>& bytes);
MidiScore parse_midi_file(const std::string& path);

// single-track format 0 file with one tempo event
std::vector<std::uint8_t> write_midi(const std::vector<NoteEvent>& notes,
                                     int ticks_per_quarter = 480,
                                     double bpm = 120.0);
void write_midi_file(const std::string& path, const std::vector<NoteEvent>& notes,
                     int ticks_per_quarter = 480, double bpm = 120.0);

}  // namespace bachi
