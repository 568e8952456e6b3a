#include "bachi/labels.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace bachi {

std::vector<Segment> load_labels(const std::string& text, bool strict) {
    std::vector<Segment> segs;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // `#` starts a comment only at line start or after whitespace, so
        // sharp note names (F#:min7) survive
        for (size_t i = 0; i < line.size(); ++i)
            if (line[i] == '#' && (i == 0 || std::isspace((unsigned char)line[i - 1]))) {
                line = line.substr(0, i);
                break;
            }
        std::istringstream ls(line);
        double start, end;
        std::string symbol;
        if (!(ls >> start)) continue;  // blank line
        if (!(ls >> end >> symbol))
            throw std::runtime_error("label line " + std::to_string(lineno) +
                                     ": expected '<start> <end> <chord>'");
        if (end <= start)
            throw std::runtime_error("label line " + std::to_string(lineno) +
                                     ": end <= start");
        Segment s;
        s.start_beat = start;
        s.end_beat = end;
        try {
            s.label = parse_chord_symbol(symbol, strict);
        } catch (const std::exception& e) {
            throw std::runtime_error("label line " + std::to_string(lineno) + ": " +
                                     e.what());
        }
        segs.push_back(s);
    }
    std::stable_sort(segs.begin(), segs.end(), [](const Segment& a, const Segment& b) {
        return a.start_beat < b.start_beat;
    });
    for (size_t i = 1; i < segs.size(); ++i)
        if (segs[i].start_beat < segs[i - 1].end_beat - 1e-9)
            throw std::runtime_error(
                "overlapping label segments at beat " +
                std::to_string(segs[i].start_beat) + " (segment " +
                std::to_string(i + 1) + ")");

    // fill gaps (including a leading gap) with no-chord
    std::vector<Segment> out;
    double cursor = 0.0;
    for (const auto& s : segs) {
        if (s.start_beat > cursor + 1e-9)
            out.push_back({cursor, s.start_beat, ChordLabel::no_chord()});
        out.push_back(s);
        cursor = s.end_beat;
    }
    return out;
}

std::vector<Segment> load_label_file(const std::string& path, bool strict) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open label file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return load_labels(ss.str(), strict);
}

std::string write_labels(const std::vector<Segment>& segments,
                         const std::string& header_comment) {
    std::ostringstream out;
    if (!header_comment.empty()) out << "# " << header_comment << "\n";
    for (const auto& s : segments) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6g %.6g ", s.start_beat, s.end_beat);
        out << buf << format_chord_symbol(s.label) << "\n";
    }
    return out.str();
}

void write_label_file(const std::string& path, const std::vector<Segment>& segments,
                      const std::string& header_comment) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write label file: " + path);
    out << write_labels(segments, header_comment);
}

FrameTargets labels_to_frame_targets(const LabeledPiece& piece) {
    const long T = piece.roll.num_frames();
    require(T % kPatchSize == 0, "labels_to_frame_targets: T not divisible by patch size");
    const long n_tokens = T / kPatchSize;

    std::vector<ChordLabel> token_labels((size_t)n_tokens, ChordLabel::no_chord());
    for (long t = 0; t < n_tokens; ++t) {
        // token center in beats
        double center = ((double)t + 0.5) * kPatchSize / kFramesPerBeat;
        for (const auto& s : piece.segments)
            if (center >= s.start_beat && center < s.end_beat) {
                token_labels[(size_t)t] = s.label;
                break;
            }
    }

    FrameTargets out;
    for (const auto& l : token_labels) {
        out.roots.push_back(l.root);
        out.qualities.push_back(l.quality);
        out.basses.push_back(l.bass);
    }
    out.boundaries = binarize_boundaries(token_labels);
    return out;
}

std::vector<Segment> frames_to_segments(const FrameTargets& targets,
                                        int frames_per_token) {
    std::vector<Segment> out;
    const double beats_per_token = (double)frames_per_token / kFramesPerBeat;
    size_t run_start = 0;
    for (size_t t = 1; t <= targets.size(); ++t) {
        if (t == targets.size() || !(targets.label_at(t) == targets.label_at(run_start))) {
            out.push_back({run_start * beats_per_token, t * beats_per_token,
                           targets.label_at(run_start)});
            run_start = t;
        }
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest: " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                     ": expected '<midi_path>\\t<label_path>'");
        out.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    return out;
}

LabeledPiece load_piece(const std::string& midi_path, const std::string& label_path) {
    MidiScore score = parse_midi_file(midi_path);
    LabeledPiece piece;
    piece.segments = load_label_file(label_path);
    double total = score.total_beats;
    for (const auto& s : piece.segments) total = std::max(total, s.end_beat);
    piece.roll = build_piano_roll(score.notes, total, midi_path);
    // extend the final segment over roll padding so coverage stays total
    if (!piece.segments.empty() &&
        piece.segments.back().end_beat < piece.roll.total_beats())
        piece.segments.back().end_beat = piece.roll.total_beats();
    return piece;
}

}  // namespace bachi
