// Binary T x 88 piano roll at 12 frames per beat, padded so T is a
// multiple of the patch size (6 frames).
#pragma once

#include <string>
#include <vector>

#include "bachi/common.hpp"
#include "bachi/midi.hpp"

namespace bachi {

inline constexpr int kFramesPerBeat = 12;
inline constexpr int kPatchSize = 6;
inline constexpr int kNumPitches = 88;
inline constexpr int kLowestPitch = 21;   // A0
inline constexpr int kHighestPitch = 108;  // C8

struct PianoRoll {
    Mat frames;  // T x 88, cells in {0,1}
    std::string piece_id;

    long num_frames() const { return frames.rows(); }
    long num_tokens() const { return frames.rows() / kPatchSize; }
    double total_beats() const { return (double)frames.rows() / kFramesPerBeat; }
};

struct BuildStats {
    int dropped_out_of_range = 0;  // pitches outside 21..108
};

// cell (t, p-21) = 1 iff a note with pitch p sounds during frame t, where
// frame t covers beats [t/12, (t+1)/12); T = ceil(total_beats*12) rounded up
// to a multiple of 6. Out-of-range pitches are dropped, not errors.
PianoRoll build_piano_roll(const std::vector<NoteEvent>& events, double total_beats,
                           const std::string& piece_id = "", BuildStats* stats = nullptr);

// pitch columns shifted by `semitones`; cells shifted outside 0..87 are dropped
PianoRoll transpose_roll(const PianoRoll& roll, int semitones);

}  // namespace bachi
