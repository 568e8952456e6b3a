#include "bachi/piano_roll.hpp"

#include <cmath>

namespace bachi {

PianoRoll build_piano_roll(const std::vector<NoteEvent>& events, double total_beats,
                           const std::string& piece_id, BuildStats* stats) {
    require(total_beats >= 0, "build_piano_roll: negative total_beats");
    long T = (long)std::ceil(total_beats * kFramesPerBeat - 1e-9);
    if (T % kPatchSize != 0) T += kPatchSize - T % kPatchSize;

    PianoRoll roll;
    roll.piece_id = piece_id;
    roll.frames = Mat::Zero(T, kNumPitches);
    for (const auto& ev : events) {
        require(ev.duration_beats > 0, "build_piano_roll: non-positive duration");
        require(ev.onset_beats >= 0, "build_piano_roll: negative onset");
        if (ev.pitch < kLowestPitch || ev.pitch > kHighestPitch) {
            if (stats) stats->dropped_out_of_range++;
            continue;
        }
        // frames whose [t/12,(t+1)/12) interval intersects the note interval
        long first = (long)std::floor(ev.onset_beats * kFramesPerBeat + 1e-9);
        long last = (long)std::ceil((ev.onset_beats + ev.duration_beats) * kFramesPerBeat -
                                    1e-9) - 1;
        for (long t = std::max(first, 0l); t <= std::min(last, T - 1); ++t)
            roll.frames(t, ev.pitch - kLowestPitch) = 1.0;
    }
    return roll;
}

PianoRoll transpose_roll(const PianoRoll& roll, int semitones) {
    require(semitones >= -11 && semitones <= 11, "transpose_roll: semitones out of range");
    PianoRoll out;
    out.piece_id = roll.piece_id;
    out.frames = Mat::Zero(roll.frames.rows(), roll.frames.cols());
    for (long c = 0; c < roll.frames.cols(); ++c) {
        long dst = c + semitones;
        if (dst < 0 || dst >= roll.frames.cols()) continue;
        out.frames.col(dst) = roll.frames.col(c);
    }
    return out;
}

}  // namespace bachi
