#include "bachi/chord.hpp"

#include <stdexcept>

namespace bachi {

const std::vector<std::string>& quality_names() {
    static const std::vector<std::string> names = {
        "maj", "min", "dim", "aug", "sus2", "sus4", "maj7", "min7",
        "7",   "dim7", "hdim7", "maj6", "min6", "minmaj7", "N"};
    return names;
}

int quality_index(const std::string& name) {
    const auto& names = quality_names();
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return (int)i;
    return -1;
}

const std::array<std::vector<int>, kNumQualities - 1>& quality_templates() {
    static const std::array<std::vector<int>, kNumQualities - 1> tpl = {{
        {0, 4, 7},      // maj
        {0, 3, 7},      // min
        {0, 3, 6},      // dim
        {0, 4, 8},      // aug
        {0, 2, 7},      // sus2
        {0, 5, 7},      // sus4
        {0, 4, 7, 11},  // maj7
        {0, 3, 7, 10},  // min7
        {0, 4, 7, 10},  // 7
        {0, 3, 6, 9},   // dim7
        {0, 3, 6, 10},  // hdim7
        {0, 4, 7, 9},   // maj6
        {0, 3, 7, 9},   // min6
        {0, 3, 7, 11},  // minmaj7
    }};
    return tpl;
}

const std::vector<std::pair<std::string, std::string>>& quality_alias_table() {
    // mirrors assets/quality_aliases.txt; unknown symbols reduce to the
    // nearest superset class in the 15-class vocabulary
    static const std::vector<std::pair<std::string, std::string>> table = {
        {"major", "maj"},   {"minor", "min"},    {"M", "maj"},
        {"m", "min"},       {"dom7", "7"},       {"9", "7"},
        {"11", "7"},        {"13", "7"},         {"maj9", "maj7"},
        {"maj13", "maj7"},  {"min9", "min7"},    {"min11", "min7"},
        {"min13", "min7"},  {"sus", "sus4"},     {"7sus4", "sus4"},
        {"6", "maj6"},      {"m6", "min6"},      {"m7", "min7"},
        {"m7b5", "hdim7"},  {"min7b5", "hdim7"}, {"aug7", "aug"},
        {"mmaj7", "minmaj7"},
    };
    return table;
}

int parse_note_name(const std::string& name) {
    if (name.empty() || name.size() > 2)
        throw std::runtime_error("malformed note name: '" + name + "'");
    static const int base[7] = {9, 11, 0, 2, 4, 5, 7};  // A..G
    char c = name[0];
    if (c < 'A' || c > 'G')
        throw std::runtime_error("malformed note name: '" + name + "'");
    int pc = base[c - 'A'];
    if (name.size() == 2) {
        if (name[1] == '#')
            pc = (pc + 1) % 12;
        else if (name[1] == 'b')
            pc = (pc + 11) % 12;
        else
            throw std::runtime_error("malformed note name: '" + name + "'");
    }
    return pc;
}

std::string pitch_class_name(int pc) {
    static const char* names[12] = {"C",  "C#", "D",  "D#", "E",  "F",
                                    "F#", "G",  "G#", "A",  "A#", "B"};
    if (pc < 0 || pc > 11) throw std::runtime_error("pitch class out of range");
    return names[pc];
}

ChordLabel parse_chord_symbol(const std::string& text, bool strict) {
    if (text == "N") return ChordLabel::no_chord();
    auto colon = text.find(':');
    if (colon == std::string::npos)
        throw std::runtime_error("chord symbol '" + text +
                                 "' missing ':' (expected ROOT:QUALITY[/BASS] or N)");
    ChordLabel out;
    out.root = parse_note_name(text.substr(0, colon));
    std::string rest = text.substr(colon + 1);
    auto slash = rest.find('/');
    std::string qual = slash == std::string::npos ? rest : rest.substr(0, slash);
    int qi = quality_index(qual);
    if (qi < 0 && !strict) {
        for (const auto& [from, to] : quality_alias_table())
            if (from == qual) {
                qi = quality_index(to);
                break;
            }
    }
    if (qi < 0 || qi == kQualityN) {
        std::string vocab;
        for (const auto& n : quality_names()) vocab += n + " ";
        throw std::runtime_error("unknown chord quality '" + qual +
                                 "'; vocabulary: " + vocab);
    }
    out.quality = qi;
    out.bass = slash == std::string::npos ? out.root
                                          : parse_note_name(rest.substr(slash + 1));
    return out;
}

std::string format_chord_symbol(const ChordLabel& label) {
    if (label.is_no_chord()) return "N";
    std::string s = pitch_class_name(label.root) + ":" + quality_names()[label.quality];
    if (label.bass != label.root) s += "/" + pitch_class_name(label.bass);
    return s;
}

ChordLabel transpose(const ChordLabel& label, int semitones) {
    if (label.is_no_chord()) return label;
    if (semitones < -11 || semitones > 11)
        throw std::runtime_error("transpose: semitones out of range");
    ChordLabel out = label;
    out.root = ((label.root + semitones) % 12 + 12) % 12;
    out.bass = ((label.bass + semitones) % 12 + 12) % 12;
    return out;
}

std::vector<int> binarize_boundaries(const std::vector<ChordLabel>& labels) {
    if (labels.empty())
        throw std::runtime_error("binarize_boundaries: empty label sequence");
    std::vector<int> out(labels.size());
    out[0] = 1;
    for (size_t t = 1; t < labels.size(); ++t)
        out[t] = labels[t] == labels[t - 1] ? 0 : 1;
    return out;
}

}  // namespace bachi
