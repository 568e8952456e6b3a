// Chord label space: (root, quality, bass) triples, the textual symbol
// grammar, transposition, and boundary binarization.
#pragma once

#include <array>
#include <string>
#include <vector>

namespace bachi {

// class indices: roots/basses 0..11 = pitch classes C..B, 12 = N (no chord)
inline constexpr int kNumRoots = 13;
inline constexpr int kNumBasses = 13;
inline constexpr int kNoPitchClass = 12;

// quality vocabulary; N is last by construction
inline constexpr int kNumQualities = 15;
inline constexpr int kQualityN = kNumQualities - 1;

const std::vector<std::string>& quality_names();
int quality_index(const std::string& name);  // -1 if unknown

// chord-tone pitch classes relative to the root, per non-N quality
const std::array<std::vector<int>, kNumQualities - 1>& quality_templates();

struct ChordLabel {
    int root = kNoPitchClass;
    int quality = kQualityN;
    int bass = kNoPitchClass;

    bool operator==(const ChordLabel&) const = default;
    bool is_no_chord() const { return quality == kQualityN; }

    static ChordLabel no_chord() { return {}; }
};

// Grammar: `ROOT ':' QUALITY ('/' BASS)?` or `N`; roots/basses are note
// letters A-G with optional # or b; enharmonics collapse to pitch class.
// In lenient mode unknown quality names are reduced via the alias table
// (e.g. 9 -> 7, maj9 -> maj7); strict mode rejects them.
ChordLabel parse_chord_symbol(const std::string& text, bool strict = false);

// canonical form with sharps; bass suffix omitted when bass == root
std::string format_chord_symbol(const ChordLabel& label);

// note name -> pitch class 0..11; throws on malformed names
int parse_note_name(const std::string& name);
std::string pitch_class_name(int pc);

// root and bass shifted mod 12; quality unchanged; N is a fixed point
ChordLabel transpose(const ChordLabel& label, int semitones);

// out[0] = 1; out[t] = 1 iff labels[t] != labels[t-1]
std::vector<int> binarize_boundaries(const std::vector<ChordLabel>& labels);

// the documented reduction table used by lenient parsing
const std::vector<std::pair<std::string, std::string>>& quality_alias_table();

}  // namespace bachi
