#include "red/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace red {

namespace {

std::string loc(const std::filesystem::path& path, std::size_t line) {
    return path.string() + ":" + std::to_string(line);
}

[[noreturn]] void parse_fail(const std::filesystem::path& path, std::size_t line,
                             const std::string& what) {
    throw DataError(loc(path, line) + ": " + what);
}

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

bool parse_double(const std::string& token, double& out) {
    char* end = nullptr;
    out = std::strtod(token.c_str(), &end);
    return end == token.c_str() + token.size() && !token.empty();
}

bool parse_size(const std::string& token, std::size_t& out) {
    if (token.empty()) {
        return false;
    }
    char* end = nullptr;
    const unsigned long long v = std::strtoull(token.c_str(), &end, 10);
    if (end != token.c_str() + token.size()) {
        return false;
    }
    out = static_cast<std::size_t>(v);
    return true;
}

// Key=value field out of a header line.
std::string header_field(const std::string& header, const char* key,
                         const std::filesystem::path& path) {
    const std::string needle = std::string(key) + "=";
    const auto pos = header.find(needle);
    if (pos == std::string::npos) {
        parse_fail(path, 1, std::string("missing header field '") + key + "'");
    }
    const auto start = pos + needle.size();
    auto end = header.find(' ', start);
    if (end == std::string::npos) {
        end = header.size();
    }
    return header.substr(start, end - start);
}

} // namespace

std::vector<ActionInterval> intervals_from_labels(std::span<const int> labels) {
    std::vector<ActionInterval> intervals;
    std::size_t t = 0;
    while (t < labels.size()) {
        if (labels[t] == 0) {
            ++t;
            continue;
        }
        ActionInterval iv;
        iv.t_start = t;
        iv.cls = labels[t];
        while (t + 1 < labels.size() && labels[t + 1] == iv.cls) {
            ++t;
        }
        iv.t_end = t;
        intervals.push_back(iv);
        ++t;
    }
    return intervals;
}

std::vector<int> paint_intervals(std::size_t length, std::span<const ActionInterval> intervals) {
    std::vector<int> labels(length, 0);
    for (const ActionInterval& iv : intervals) {
        if (iv.t_end >= length || iv.t_start > iv.t_end || iv.cls == 0) {
            throw DataError("paint_intervals: interval out of bounds or invalid class");
        }
        for (std::size_t t = iv.t_start; t <= iv.t_end; ++t) {
            labels[t] = iv.cls;
        }
    }
    return labels;
}

LabelTrack make_label_track(int classes, std::vector<int> labels) {
    if (classes < 1) {
        throw DataError("make_label_track: need at least one action class");
    }
    for (std::size_t t = 0; t < labels.size(); ++t) {
        if (labels[t] < 0 || labels[t] > classes) {
            throw DataError("make_label_track: label " + std::to_string(labels[t]) +
                            " at chunk " + std::to_string(t) + " outside {0.." +
                            std::to_string(classes) + "}");
        }
    }
    LabelTrack track;
    track.classes = classes;
    track.labels = std::move(labels);
    track.intervals = intervals_from_labels(track.labels);
    return track;
}

FeatureSequence load_features(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open feature file " + path.string());
    }
    std::string header;
    if (!std::getline(in, header)) {
        parse_fail(path, 1, "empty file");
    }
    if (header.rfind("REDFEAT v1 ", 0) != 0) {
        parse_fail(path, 1, "bad magic, expected 'REDFEAT v1'");
    }
    FeatureSequence seq;
    seq.id = path.stem().string();
    std::size_t chunks = 0;
    if (!parse_size(header_field(header, "dim", path), seq.dim) || seq.dim == 0) {
        parse_fail(path, 1, "bad dim field");
    }
    if (!parse_size(header_field(header, "chunks", path), chunks) || chunks == 0) {
        parse_fail(path, 1, "bad chunks field");
    }
    if (!parse_double(header_field(header, "chunk_seconds", path), seq.chunk_seconds) ||
        seq.chunk_seconds <= 0.0) {
        parse_fail(path, 1, "bad chunk_seconds field");
    }

    seq.chunks.reserve(chunks);
    std::string line;
    for (std::size_t k = 0; k < chunks; ++k) {
        if (!std::getline(in, line)) {
            parse_fail(path, k + 2, "unexpected end of file, expected " +
                                        std::to_string(chunks) + " chunk lines");
        }
        std::istringstream fields(line);
        Vector v;
        v.reserve(seq.dim);
        std::string token;
        while (fields >> token) {
            double x = 0.0;
            if (!parse_double(token, x)) {
                parse_fail(path, k + 2, "bad number '" + token + "'");
            }
            if (!std::isfinite(x)) {
                parse_fail(path, k + 2, "non-finite value");
            }
            v.push_back(x);
        }
        if (v.size() != seq.dim) {
            parse_fail(path, k + 2,
                       "expected " + std::to_string(seq.dim) + " values, got " +
                           std::to_string(v.size()));
        }
        seq.chunks.push_back(std::move(v));
    }
    return seq;
}

void save_features(const std::filesystem::path& path, const FeatureSequence& seq) {
    if (seq.chunks.empty() || seq.dim == 0) {
        throw DataError("save_features: empty sequence");
    }
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write feature file " + path.string());
    }
    out << "REDFEAT v1 dim=" << seq.dim << " chunks=" << seq.chunks.size()
        << " chunk_seconds=" << format_double(seq.chunk_seconds) << "\n";
    for (const Vector& v : seq.chunks) {
        if (v.size() != seq.dim) {
            throw DataError("save_features: chunk dimension mismatch in " + seq.id);
        }
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i != 0) {
                out << ' ';
            }
            out << format_double(v[i]);
        }
        out << '\n';
    }
}

LabelTrack load_labels(const std::filesystem::path& path, int classes) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open label file " + path.string());
    }
    std::string header;
    if (!std::getline(in, header)) {
        parse_fail(path, 1, "empty file");
    }
    if (header.rfind("REDLAB v1 ", 0) != 0) {
        parse_fail(path, 1, "bad magic, expected 'REDLAB v1'");
    }
    std::size_t file_classes = 0;
    std::size_t chunks = 0;
    if (!parse_size(header_field(header, "classes", path), file_classes) || file_classes == 0) {
        parse_fail(path, 1, "bad classes field");
    }
    if (!parse_size(header_field(header, "chunks", path), chunks)) {
        parse_fail(path, 1, "bad chunks field");
    }
    if (classes > 0 && static_cast<std::size_t>(classes) != file_classes) {
        parse_fail(path, 1,
                   "file declares " + std::to_string(file_classes) + " classes, expected " +
                       std::to_string(classes));
    }

    std::vector<int> labels;
    labels.reserve(chunks);
    std::string line;
    for (std::size_t k = 0; k < chunks; ++k) {
        if (!std::getline(in, line)) {
            parse_fail(path, k + 2, "unexpected end of file");
        }
        std::size_t value = 0;
        if (!parse_size(line, value)) {
            parse_fail(path, k + 2, "bad label '" + line + "'");
        }
        if (value > file_classes) {
            parse_fail(path, k + 2,
                       "label " + std::to_string(value) + " outside {0.." +
                           std::to_string(file_classes) + "}");
        }
        labels.push_back(static_cast<int>(value));
    }
    return make_label_track(static_cast<int>(file_classes), std::move(labels));
}

void save_labels(const std::filesystem::path& path, const LabelTrack& track) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot write label file " + path.string());
    }
    out << "REDLAB v1 classes=" << track.classes << " chunks=" << track.labels.size() << "\n";
    for (int label : track.labels) {
        out << label << '\n';
    }
}

Dataset load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open manifest " + path.string());
    }
    const std::filesystem::path base = path.parent_path();
    Dataset dataset;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::istringstream fields(line);
        std::string feat_path, label_path;
        fields >> feat_path;
        fields >> label_path;
        if (feat_path.empty()) {
            parse_fail(path, line_no, "missing feature path");
        }
        LabeledVideo video;
        video.features = load_features(base / feat_path);
        if (!label_path.empty()) {
            LabelTrack track = load_labels(base / label_path, 0);
            if (track.length() != video.features.length()) {
                parse_fail(path, line_no,
                           "label count " + std::to_string(track.length()) +
                               " does not match chunk count " +
                               std::to_string(video.features.length()));
            }
            video.labels = std::move(track);
        }
        dataset.push_back(std::move(video));
    }
    if (dataset.empty()) {
        throw DataError("manifest " + path.string() + " lists no videos");
    }
    return dataset;
}

void SyntheticSpec::validate() const {
    if (dim == 0 || classes == 0 || videos == 0 || chunks_per_video == 0) {
        throw DataError("SyntheticSpec: dim, classes, videos, chunks must be positive");
    }
    if (separation <= 0.0) {
        throw DataError("SyntheticSpec: separation must be positive");
    }
    if (noise < 0.0) {
        throw DataError("SyntheticSpec: noise must be nonnegative");
    }
    if (smoothing < 0.0 || smoothing >= 1.0) {
        throw DataError("SyntheticSpec: smoothing must be in [0, 1)");
    }
    if (action_rate < 0.0 || action_rate >= 1.0) {
        throw DataError("SyntheticSpec: action_rate must be in [0, 1)");
    }
    if (chunk_seconds <= 0.0) {
        throw DataError("SyntheticSpec: chunk_seconds must be positive");
    }
}

Dataset SyntheticDataset::as_dataset() const {
    Dataset out;
    out.reserve(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        out.push_back(LabeledVideo{features[i], labels[i]});
    }
    return out;
}

namespace {

// Unit-norm class means, orthogonalized when the dimension allows.
std::vector<Vector> make_class_means(const SyntheticSpec& spec, RandomSource& rng) {
    std::vector<Vector> means;
    for (std::size_t c = 0; c < spec.classes; ++c) {
        Vector m(spec.dim);
        for (double& x : m) {
            x = rng.normal();
        }
        if (spec.classes <= spec.dim) {
            for (const Vector& prev : means) {
                const double proj = dot(m, prev) / squared_norm(prev);
                add_scaled(m, prev, -proj);
            }
        }
        const double norm = std::sqrt(squared_norm(m));
        if (norm < 1e-9) {
            throw DataError("gen_synthetic: degenerate class mean draw");
        }
        for (double& x : m) {
            x *= spec.separation / norm;
        }
        means.push_back(std::move(m));
    }
    return means;
}

// Action intervals are 8..24 chunks long with at least one background chunk
// between them; the start probability is tuned to hit the target rate.
std::vector<int> make_labels(const SyntheticSpec& spec, RandomSource& rng) {
    const std::size_t min_len = 8;
    const std::size_t max_len = 24;
    const double mean_len = 0.5 * static_cast<double>(min_len + max_len);
    double p_start = 0.0;
    if (spec.action_rate > 0.0) {
        p_start = spec.action_rate / ((1.0 - spec.action_rate) * mean_len);
    }
    std::vector<int> labels(spec.chunks_per_video, 0);
    std::size_t t = 0;
    while (t < spec.chunks_per_video) {
        if (spec.action_rate > 0.0 && rng.uniform01() < p_start) {
            const int cls = static_cast<int>(rng.uniform_index(spec.classes)) + 1;
            std::size_t len = min_len + rng.uniform_index(max_len - min_len + 1);
            len = std::min(len, spec.chunks_per_video - t);
            for (std::size_t k = 0; k < len; ++k) {
                labels[t + k] = cls;
            }
            t += len + 1; // leave a background gap so intervals stay separable
        } else {
            ++t;
        }
    }
    return labels;
}

} // namespace

SyntheticDataset gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticDataset dataset;
    RandomSource means_rng = RandomSource::derive(spec.seed, 0x6d65616e);
    dataset.class_means = make_class_means(spec, means_rng);

    for (std::size_t v = 0; v < spec.videos; ++v) {
        RandomSource rng = RandomSource::derive(spec.seed, 0x76696465, v);
        std::vector<int> labels = make_labels(spec, rng);

        // Raw class-conditional Gaussians.
        std::vector<Vector> raw(spec.chunks_per_video);
        for (std::size_t t = 0; t < spec.chunks_per_video; ++t) {
            Vector x(spec.dim, 0.0);
            if (labels[t] != 0) {
                x = dataset.class_means[static_cast<std::size_t>(labels[t]) - 1];
            }
            for (double& xi : x) {
                xi += spec.noise * rng.normal();
            }
            raw[t] = std::move(x);
        }

        // Backward AR(1): chunks blend with what follows them, so upcoming
        // actions are visible (attenuated) before they start.
        FeatureSequence seq;
        char name[32];
        std::snprintf(name, sizeof(name), "synth_%03zu", v);
        seq.id = name;
        seq.dim = spec.dim;
        seq.chunk_seconds = spec.chunk_seconds;
        seq.chunks.resize(spec.chunks_per_video);
        seq.chunks.back() = raw.back();
        for (std::size_t t = spec.chunks_per_video - 1; t-- > 0;) {
            Vector y(spec.dim);
            for (std::size_t i = 0; i < spec.dim; ++i) {
                y[i] = (1.0 - spec.smoothing) * raw[t][i] +
                       spec.smoothing * seq.chunks[t + 1][i];
            }
            seq.chunks[t] = std::move(y);
        }

        dataset.features.push_back(std::move(seq));
        dataset.labels.push_back(make_label_track(static_cast<int>(spec.classes), std::move(labels)));
    }
    return dataset;
}

} // namespace red
