// Chord annotation files, frame-level training targets, and the mapping
// between segment lists and the token grid.
//
// Label file format (UTF-8, one segment per line):
//   <start_beat> <end_beat> <ROOT>:<QUALITY>[/<BASS>]
// with `#` comments and `N` for no-chord spans.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bachi/chord.hpp"
#include "bachi/piano_roll.hpp"

namespace bachi {

struct Segment {
    double start_beat = 0.0;
    double end_beat = 0.0;
    ChordLabel label;

    bool operator==(const Segment&) const = default;
};

struct KeySignature {
    int tonic_pc = 0;
    bool minor = false;
};

struct LabeledPiece {
    PianoRoll roll;
    std::vector<Segment> segments;  // sorted, non-overlapping, gap-free
    std::optional<KeySignature> key;  // carried, unused by the model
};

// per-token (T/6 resolution) class targets; all sequences share one length
struct FrameTargets {
    std::vector<int> roots;
    std::vector<int> qualities;
    std::vector<int> basses;
    std::vector<int> boundaries;  // binary; [0] is always 1

    size_t size() const { return roots.size(); }
    ChordLabel label_at(size_t t) const {
        return {roots[t], qualities[t], basses[t]};
    }
};

// parse, sort, and gap-fill with no-chord; overlaps and end<=start are errors
std::vector<Segment> load_labels(const std::string& text, bool strict = false);
std::vector<Segment> load_label_file(const std::string& path, bool strict = false);

std::string write_labels(const std::vector<Segment>& segments,
                         const std::string& header_comment = "");
void write_label_file(const std::string& path, const std::vector<Segment>& segments,
                      const std::string& header_comment = "");

// one target per patch token; each token takes the chord active at the
// token's center time; boundary flags via binarize_boundaries
FrameTargets labels_to_frame_targets(const LabeledPiece& piece);

// maximal runs of identical triples become segments; inverse of
// labels_to_frame_targets for token-aligned annotations
std::vector<Segment> frames_to_segments(const FrameTargets& targets,
                                        int frames_per_token = kPatchSize);

// manifest: newline-separated `<midi_path>\t<label_path>` pairs, `#` comments
std::vector<std::pair<std::string, std::string>> load_manifest(const std::string& path);

LabeledPiece load_piece(const std::string& midi_path, const std::string& label_path);

}  // namespace bachi
