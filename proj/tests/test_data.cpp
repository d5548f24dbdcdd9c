#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "red/data.hpp"
#include "red/training.hpp"

using namespace red;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "red_data_tests";
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void spit(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

} // namespace

TEST_CASE("intervals are maximal single-class runs") {
    const std::vector<int> labels{0, 0, 1, 1, 2, 2, 0};
    const std::vector<ActionInterval> intervals = intervals_from_labels(labels);
    REQUIRE(intervals.size() == 2);
    CHECK(intervals[0].t_start == 2);
    CHECK(intervals[0].t_end == 3);
    CHECK(intervals[0].cls == 1);
    CHECK(intervals[1].t_start == 4);
    CHECK(intervals[1].t_end == 5);
    CHECK(intervals[1].cls == 2);

    CHECK(intervals_from_labels(std::vector<int>{0, 0, 0}).empty());

    // Adjacent runs of different classes split.
    const auto split = intervals_from_labels(std::vector<int>{1, 1, 2, 2});
    REQUIRE(split.size() == 2);
    CHECK(split[0].t_end == 1);
    CHECK(split[1].t_start == 2);
}

TEST_CASE("painting intervals inverts extraction") {
    RandomSource rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t len = 1 + rng.uniform_index(40);
        std::vector<int> labels(len);
        for (int& l : labels) {
            l = static_cast<int>(rng.uniform_index(4));
        }
        const auto intervals = intervals_from_labels(labels);
        CHECK(paint_intervals(len, intervals) == labels);
    }
    CHECK_THROWS_AS(paint_intervals(3, std::vector<ActionInterval>{{1, 5, 1}}), DataError);
}

TEST_CASE("label tracks validate their range") {
    CHECK_THROWS_AS(make_label_track(2, {0, 1, 3}), DataError);
    CHECK_THROWS_AS(make_label_track(2, {0, -1}), DataError);
    const LabelTrack track = make_label_track(2, {0, 1, 1, 2});
    CHECK(track.intervals.size() == 2);
}

TEST_CASE("feature files round-trip byte for byte") {
    const fs::path dir = temp_dir();
    FeatureSequence seq;
    seq.id = "roundtrip";
    seq.dim = 3;
    seq.chunks = {{0.1, -2.5e-7, 3.0}, {1.0 / 3.0, 5.55555, -0.0}, {1e-300, 2e290, 7.25}};

    const fs::path first = dir / "roundtrip.feat";
    save_features(first, seq);
    const FeatureSequence loaded = load_features(first);
    CHECK(loaded.dim == seq.dim);
    CHECK(loaded.chunk_seconds == seq.chunk_seconds);
    REQUIRE(loaded.chunks.size() == seq.chunks.size());
    for (std::size_t k = 0; k < seq.chunks.size(); ++k) {
        CHECK(loaded.chunks[k] == seq.chunks[k]); // exact doubles
    }

    const fs::path second = dir / "roundtrip2.feat";
    save_features(second, loaded);
    CHECK(slurp(first) == slurp(second));
}

TEST_CASE("feature files with one dimension and one chunk") {
    const fs::path dir = temp_dir();
    FeatureSequence seq;
    seq.id = "tiny";
    seq.dim = 1;
    seq.chunks = {{-0.12345678901234567}};
    const fs::path path = dir / "tiny.feat";
    save_features(path, seq);
    const FeatureSequence loaded = load_features(path);
    CHECK(loaded.chunks == seq.chunks);
    const fs::path again = dir / "tiny2.feat";
    save_features(again, loaded);
    CHECK(slurp(path) == slurp(again));
}

TEST_CASE("handwritten feature fixture parses exactly") {
    const fs::path path = temp_dir() / "fixture.feat";
    spit(path,
         "REDFEAT v1 dim=2 chunks=3 chunk_seconds=0.25\n"
         "1 -2\n"
         "0.5 0.125\n"
         "-1e3 4\n");
    const FeatureSequence seq = load_features(path);
    CHECK(seq.dim == 2);
    CHECK(seq.chunks[0] == Vector{1.0, -2.0});
    CHECK(seq.chunks[1] == Vector{0.5, 0.125});
    CHECK(seq.chunks[2] == Vector{-1000.0, 4.0});
}

TEST_CASE("feature loader errors name the file and line") {
    const fs::path dir = temp_dir();

    const fs::path bad_magic = dir / "bad_magic.feat";
    spit(bad_magic, "NOTFEAT v1 dim=2 chunks=1 chunk_seconds=0.25\n0 0\n");
    CHECK_THROWS_WITH_AS(load_features(bad_magic), doctest::Contains("bad_magic.feat:1"),
                         DataError);

    const fs::path bad_dim = dir / "bad_dim.feat";
    spit(bad_dim, "REDFEAT v1 dim=3 chunks=2 chunk_seconds=0.25\n0 0 0\n1 2\n");
    CHECK_THROWS_WITH_AS(load_features(bad_dim), doctest::Contains("bad_dim.feat:3"), DataError);

    const fs::path bad_value = dir / "bad_value.feat";
    spit(bad_value, "REDFEAT v1 dim=1 chunks=1 chunk_seconds=0.25\nxyz\n");
    CHECK_THROWS_WITH_AS(load_features(bad_value), doctest::Contains("bad_value.feat:2"),
                         DataError);

    const fs::path truncated = dir / "truncated.feat";
    spit(truncated, "REDFEAT v1 dim=1 chunks=3 chunk_seconds=0.25\n0\n");
    CHECK_THROWS_WITH_AS(load_features(truncated), doctest::Contains("truncated.feat:3"),
                         DataError);
}

TEST_CASE("label files round-trip and reject out-of-range labels") {
    const fs::path dir = temp_dir();
    const LabelTrack track = make_label_track(3, {0, 1, 3, 0, 2});
    const fs::path path = dir / "track.lab";
    save_labels(path, track);
    const LabelTrack loaded = load_labels(path, 3);
    CHECK(loaded.labels == track.labels);
    CHECK(loaded.intervals.size() == track.intervals.size());

    const fs::path again = dir / "track2.lab";
    save_labels(again, loaded);
    CHECK(slurp(path) == slurp(again));

    // A label equal to classes+1 is rejected, naming the line.
    const fs::path bad = dir / "bad.lab";
    spit(bad, "REDLAB v1 classes=3 chunks=2\n1\n4\n");
    CHECK_THROWS_WITH_AS(load_labels(bad, 3), doctest::Contains("bad.lab:3"), DataError);

    const fs::path mismatch = dir / "mismatch.lab";
    spit(mismatch, "REDLAB v1 classes=2 chunks=1\n0\n");
    CHECK_THROWS_AS(load_labels(mismatch, 3), DataError);
}

TEST_CASE("manifests resolve paths relative to their directory") {
    const fs::path dir = temp_dir() / "manifest_case";
    fs::create_directories(dir);
    FeatureSequence seq;
    seq.id = "v0";
    seq.dim = 2;
    seq.chunks = {{1.0, 2.0}, {3.0, 4.0}, {0.0, 0.0}};
    save_features(dir / "v0.feat", seq);
    save_labels(dir / "v0.lab", make_label_track(2, {0, 1, 0}));
    spit(dir / "manifest.txt", "v0.feat v0.lab\n");

    const Dataset with_labels = load_manifest(dir / "manifest.txt");
    REQUIRE(with_labels.size() == 1);
    CHECK(with_labels[0].labels.has_value());
    CHECK(with_labels[0].features.chunks[1] == Vector{3.0, 4.0});

    spit(dir / "manifest_nolabels.txt", "v0.feat\n");
    const Dataset without = load_manifest(dir / "manifest_nolabels.txt");
    CHECK_FALSE(without[0].labels.has_value());

    // Label/chunk count mismatch is a manifest-level error.
    save_labels(dir / "short.lab", make_label_track(2, {0, 1}));
    spit(dir / "manifest_bad.txt", "v0.feat short.lab\n");
    CHECK_THROWS_WITH_AS(load_manifest(dir / "manifest_bad.txt"),
                         doctest::Contains("manifest_bad.txt:1"), DataError);
}

TEST_CASE("synthetic generator respects exact means in the noiseless case") {
    SyntheticSpec spec;
    spec.dim = 4;
    spec.classes = 2;
    spec.videos = 1;
    spec.chunks_per_video = 200;
    spec.noise = 0.0;
    spec.smoothing = 0.0;
    spec.action_rate = 0.4;
    spec.seed = 3;
    const SyntheticDataset ds = gen_synthetic(spec);
    REQUIRE(ds.class_means.size() == 2);
    for (const Vector& mean : ds.class_means) {
        CHECK(std::sqrt(squared_norm(mean)) == doctest::Approx(spec.separation).epsilon(1e-12));
    }
    const LabelTrack& track = ds.labels[0];
    bool saw_action = false;
    for (std::size_t t = 0; t < track.length(); ++t) {
        if (track.labels[t] == 0) {
            CHECK(ds.features[0].chunks[t] == Vector(spec.dim, 0.0));
        } else {
            saw_action = true;
            CHECK(ds.features[0].chunks[t] ==
                  ds.class_means[static_cast<std::size_t>(track.labels[t]) - 1]);
        }
    }
    CHECK(saw_action);
}

TEST_CASE("synthetic class-conditional means match sample statistics") {
    SyntheticSpec spec;
    spec.dim = 6;
    spec.classes = 2;
    spec.videos = 4;
    spec.chunks_per_video = 3000;
    spec.noise = 1.0;
    spec.smoothing = 0.0;
    spec.action_rate = 0.5;
    spec.separation = 3.0;
    spec.seed = 11;
    const SyntheticDataset ds = gen_synthetic(spec);

    for (std::size_t cls = 1; cls <= spec.classes; ++cls) {
        Vector sum(spec.dim, 0.0);
        std::size_t n = 0;
        for (std::size_t v = 0; v < spec.videos; ++v) {
            for (std::size_t t = 0; t < spec.chunks_per_video; ++t) {
                if (ds.labels[v].labels[t] == static_cast<int>(cls)) {
                    add_scaled(sum, ds.features[v].chunks[t], 1.0);
                    ++n;
                }
            }
        }
        REQUIRE(n > 1000);
        const double bound = 3.0 * spec.noise / std::sqrt(static_cast<double>(n));
        for (std::size_t i = 0; i < spec.dim; ++i) {
            const double mean = sum[i] / static_cast<double>(n);
            CHECK(std::fabs(mean - ds.class_means[cls - 1][i]) <= bound);
        }
    }
}

TEST_CASE("synthetic generation is deterministic and leaks signal backward") {
    SyntheticSpec spec;
    spec.dim = 4;
    spec.classes = 1;
    spec.videos = 2;
    spec.chunks_per_video = 300;
    spec.noise = 0.1;
    spec.smoothing = 0.8;
    spec.action_rate = 0.3;
    spec.seed = 7;
    const SyntheticDataset a = gen_synthetic(spec);
    const SyntheticDataset b = gen_synthetic(spec);
    for (std::size_t v = 0; v < spec.videos; ++v) {
        CHECK(a.labels[v].labels == b.labels[v].labels);
        for (std::size_t t = 0; t < spec.chunks_per_video; ++t) {
            CHECK(a.features[v].chunks[t] == b.features[v].chunks[t]);
        }
    }

    // The chunk right before an action start already points toward the class
    // mean; that leakage is what makes anticipation learnable.
    const Vector& mean = a.class_means[0];
    double correlation_before = 0.0;
    std::size_t count = 0;
    for (std::size_t v = 0; v < spec.videos; ++v) {
        for (const ActionInterval& iv : a.labels[v].intervals) {
            if (iv.t_start < 5) {
                continue;
            }
            correlation_before += dot(a.features[v].chunks[iv.t_start - 1], mean);
            ++count;
        }
    }
    REQUIRE(count > 0);
    correlation_before /= static_cast<double>(count);
    CHECK(correlation_before > 0.25 * spec.smoothing * squared_norm(mean));
}

TEST_CASE("zero action rate fails loudly at stage-2 sampling") {
    SyntheticSpec spec;
    spec.dim = 3;
    spec.classes = 2;
    spec.videos = 1;
    spec.chunks_per_video = 120;
    spec.action_rate = 0.0;
    spec.seed = 1;
    const SyntheticDataset ds = gen_synthetic(spec);
    CHECK(ds.labels[0].intervals.empty());

    Hyper hp;
    hp.t_enc = 8;
    hp.t_dec = 4;
    hp.d = 3;
    hp.h = 4;
    hp.c = 2;
    RandomSource rng(0);
    CHECK_THROWS_AS(sample_stage2(ds.features[0], ds.labels[0], hp, rng), Error);
}

TEST_CASE("synthetic spec validation") {
    SyntheticSpec spec;
    spec.separation = 0.0;
    CHECK_THROWS_AS(spec.validate(), DataError);
    spec = SyntheticSpec{};
    spec.smoothing = 1.0;
    CHECK_THROWS_AS(spec.validate(), DataError);
    spec = SyntheticSpec{};
    spec.action_rate = 1.0;
    CHECK_THROWS_AS(spec.validate(), DataError);
}

TEST_CASE("chunk timing ties horizons to seconds") {
    // Four 0.25 s chunks make the 1 s anticipation horizon.
    const FeatureSequence seq;
    CHECK(seq.chunk_seconds == 0.25);
    Hyper hp;
    CHECK(hp.chunk_seconds() == doctest::Approx(0.25));
    CHECK(4.0 * hp.chunk_seconds() == doctest::Approx(1.0));
}
