#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "red/numerics.hpp"
#include "red/random.hpp"

namespace red {

// Problem with an input file or dataset (bad header, bad value, missing
// label, ...). Messages carry the file path and line number when available.
struct DataError : Error {
    using Error::Error;
};

/// Ordered per-chunk feature vectors for one video.
struct FeatureSequence {
    std::string id;
    std::size_t dim = 0;
    double chunk_seconds = 0.25;
    std::vector<Vector> chunks;

    std::size_t length() const { return chunks.size(); }
};

/// Maximal run of one nonzero label. Both endpoints are inclusive.
struct ActionInterval {
    std::size_t t_start = 0;
    std::size_t t_end = 0;
    int cls = 0;
};

struct LabelTrack {
    int classes = 0; // number of action classes C; labels are in {0..C}
    std::vector<int> labels;
    std::vector<ActionInterval> intervals; // derived from labels

    std::size_t length() const { return labels.size(); }
};

/// Builds a track and derives its intervals; validates the label range.
LabelTrack make_label_track(int classes, std::vector<int> labels);

std::vector<ActionInterval> intervals_from_labels(std::span<const int> labels);
std::vector<int> paint_intervals(std::size_t length, std::span<const ActionInterval> intervals);

// Text interchange formats. Feature files round-trip doubles exactly
// (17 significant digits); rewriting a loaded file reproduces it byte for
// byte.
FeatureSequence load_features(const std::filesystem::path& path);
void save_features(const std::filesystem::path& path, const FeatureSequence& seq);
LabelTrack load_labels(const std::filesystem::path& path, int classes);
void save_labels(const std::filesystem::path& path, const LabelTrack& track);

struct LabeledVideo {
    FeatureSequence features;
    std::optional<LabelTrack> labels;
};

using Dataset = std::vector<LabeledVideo>;

/// Manifest: one `<features path> [<labels path>]` line per video, paths
/// relative to the manifest's directory.
Dataset load_manifest(const std::filesystem::path& path);

struct SyntheticSpec {
    std::size_t dim = 16;
    std::size_t classes = 3;
    std::size_t videos = 8;
    std::size_t chunks_per_video = 400;
    double action_rate = 0.3;  // target fraction of chunks inside actions
    double separation = 3.0;   // norm of each class mean
    double noise = 1.0;        // per-coordinate Gaussian sigma
    double smoothing = 0.8;    // AR(1) coefficient, applied backward in time
    std::uint64_t seed = 0;
    double chunk_seconds = 0.25;

    void validate() const;
};

struct SyntheticDataset {
    std::vector<FeatureSequence> features;
    std::vector<LabelTrack> labels;
    std::vector<Vector> class_means; // class c at index c-1

    Dataset as_dataset() const;
};

/// Class-conditional Gaussian streams. Backward AR(1) smoothing leaks each
/// action's signature into the chunks that precede it, so anticipation
/// carries information beyond the background prior.
SyntheticDataset gen_synthetic(const SyntheticSpec& spec);

} // namespace red
