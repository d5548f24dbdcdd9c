#include "red/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>
#include <tuple>

namespace red {

namespace {

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::vector<ScoredFrame> ranked(std::span<const ScoredFrame> items) {
    std::vector<ScoredFrame> sorted(items.begin(), items.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const ScoredFrame& a, const ScoredFrame& b) { return a.score > b.score; });
    return sorted;
}

std::size_t count_positives(std::span<const ScoredFrame> items) {
    std::size_t p = 0;
    for (const ScoredFrame& item : items) {
        if (item.positive) {
            ++p;
        }
    }
    return p;
}

} // namespace

double average_precision(std::span<const ScoredFrame> items) {
    const std::size_t positives = count_positives(items);
    if (positives == 0) {
        throw MetricError("average_precision: no positive items");
    }
    const std::vector<ScoredFrame> sorted = ranked(items);
    double sum = 0.0;
    std::size_t tp = 0;
    for (std::size_t rank = 1; rank <= sorted.size(); ++rank) {
        if (!sorted[rank - 1].positive) {
            continue;
        }
        ++tp;
        const double fp = static_cast<double>(rank - tp);
        sum += static_cast<double>(tp) / (static_cast<double>(tp) + fp);
    }
    return sum / static_cast<double>(positives);
}

double calibrated_average_precision(std::span<const ScoredFrame> items, double w) {
    if (w <= 0.0) {
        throw MetricError("calibrated_average_precision: w must be positive");
    }
    const std::size_t positives = count_positives(items);
    if (positives == 0) {
        throw MetricError("calibrated_average_precision: no positive items");
    }
    const std::vector<ScoredFrame> sorted = ranked(items);
    double sum = 0.0;
    std::size_t tp = 0;
    for (std::size_t rank = 1; rank <= sorted.size(); ++rank) {
        if (!sorted[rank - 1].positive) {
            continue;
        }
        ++tp;
        const double fp = static_cast<double>(rank - tp);
        sum += static_cast<double>(tp) / (static_cast<double>(tp) + fp / w);
    }
    return sum / static_cast<double>(positives);
}

double negative_positive_ratio(std::span<const ScoredFrame> items) {
    const std::size_t positives = count_positives(items);
    if (positives == 0) {
        throw MetricError("negative_positive_ratio: no positive items");
    }
    const std::size_t negatives = items.size() - positives;
    if (negatives == 0) {
        return 1.0;
    }
    return static_cast<double>(negatives) / static_cast<double>(positives);
}

// ---------------------------------------------------------------------------
// Anticipators

RedAnticipator::RedAnticipator(RedParams params, Hyper hyper)
    : params_(std::move(params)), hyper_(hyper) {
    hyper_.validate();
}

void RedAnticipator::distributions(const FeatureSequence& video, std::size_t anchor,
                                   std::span<const std::size_t> horizons,
                                   std::vector<Vector>& out) const {
    if (video.dim != hyper_.d) {
        throw DimensionError("anticipate: video dimension does not match the model");
    }
    if (anchor < hyper_.t_enc || anchor > video.length()) {
        throw Error("anticipate: anchor leaves no full history window");
    }
    const std::span<const Vector> history(video.chunks.data() + (anchor - hyper_.t_enc),
                                          hyper_.t_enc);
    auto [h, c] = encode(history, params_);
    const std::vector<Vector> outputs = decode(h, c, params_, hyper_.t_dec);
    out.resize(horizons.size());
    for (std::size_t i = 0; i < horizons.size(); ++i) {
        if (!supports_horizon(horizons[i])) {
            throw Error("anticipate: unsupported horizon " + std::to_string(horizons[i]));
        }
        out[i] = classify(outputs[horizons[i] - 1], params_);
    }
}

FcAnticipator::FcAnticipator(FcParams params, Hyper hyper)
    : params_(std::move(params)), hyper_(hyper) {
    hyper_.validate();
}

void FcAnticipator::distributions(const FeatureSequence& video, std::size_t anchor,
                                  std::span<const std::size_t> horizons,
                                  std::vector<Vector>& out) const {
    if (video.dim != hyper_.d) {
        throw DimensionError("anticipate: video dimension does not match the model");
    }
    if (anchor < 1 || anchor > video.length()) {
        throw Error("anticipate: anchor leaves no observed chunk");
    }
    const Vector future = fc_anticipate(video.chunks[anchor - 1], params_);
    out.resize(horizons.size());
    for (std::size_t i = 0; i < horizons.size(); ++i) {
        if (!supports_horizon(horizons[i])) {
            throw Error("anticipate: unsupported horizon " + std::to_string(horizons[i]));
        }
        out[i] = classify_with(params_.cls1, params_.cls2, future);
    }
}

EfcAnticipator::EfcAnticipator(EfcParams params, Hyper hyper)
    : params_(std::move(params)), hyper_(hyper) {
    hyper_.validate();
}

void EfcAnticipator::distributions(const FeatureSequence& video, std::size_t anchor,
                                   std::span<const std::size_t> horizons,
                                   std::vector<Vector>& out) const {
    if (video.dim != hyper_.d) {
        throw DimensionError("anticipate: video dimension does not match the model");
    }
    if (anchor < hyper_.t_enc || anchor > video.length()) {
        throw Error("anticipate: anchor leaves no full history window");
    }
    const std::span<const Vector> history(video.chunks.data() + (anchor - hyper_.t_enc),
                                          hyper_.t_enc);
    const Vector future = efc_anticipate(history, params_);
    out.resize(horizons.size());
    for (std::size_t i = 0; i < horizons.size(); ++i) {
        if (!supports_horizon(horizons[i])) {
            throw Error("anticipate: unsupported horizon " + std::to_string(horizons[i]));
        }
        out[i] = classify_with(params_.cls1, params_.cls2, future);
    }
}

// ---------------------------------------------------------------------------
// Sweeps

namespace {

void check_horizons(const Anticipator& model, std::span<const std::size_t> horizons) {
    if (horizons.empty()) {
        throw Error("evaluate: no horizons requested");
    }
    for (std::size_t h : horizons) {
        if (!model.supports_horizon(h)) {
            throw Error("evaluate: horizon " + std::to_string(h) +
                        " is outside the model's anticipation range");
        }
    }
}

const LabelTrack& require_labels(const LabeledVideo& video) {
    if (!video.labels.has_value()) {
        throw Error("evaluate: video '" + video.features.id + "' has no labels");
    }
    return *video.labels;
}

// Per-video scores, later merged in dataset order.
std::vector<PredictionRow> score_video(const Anticipator& model, const LabeledVideo& video,
                                       std::span<const std::size_t> horizons) {
    const std::size_t len = video.features.length();
    std::vector<PredictionRow> rows;
    std::vector<std::size_t> valid;
    std::vector<Vector> dists;
    const std::size_t labels_n = model.action_classes() + 1;
    for (std::size_t anchor = model.history_len(); anchor + 1 <= len; ++anchor) {
        valid.clear();
        for (std::size_t h : horizons) {
            if (anchor + h - 1 < len) {
                valid.push_back(h);
            }
        }
        if (valid.empty()) {
            continue;
        }
        model.distributions(video.features, anchor, valid, dists);
        for (std::size_t i = 0; i < valid.size(); ++i) {
            if (dists[i].size() != labels_n) {
                throw DimensionError("evaluate: distribution size mismatch");
            }
            const std::size_t chunk = anchor + valid[i] - 1;
            for (std::size_t c = 1; c <= model.action_classes(); ++c) {
                rows.push_back(PredictionRow{video.features.id, chunk, valid[i],
                                             static_cast<int>(c), dists[i][c]});
            }
        }
    }
    return rows;
}

template <typename Fn> void for_each_video(std::size_t count, std::size_t jobs, Fn&& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, count));
    if (jobs == 1) {
        for (std::size_t i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (std::size_t worker = 0; worker < jobs; ++worker) {
        pool.emplace_back([&, worker]() {
            for (std::size_t i = worker; i < count; i += jobs) {
                fn(i);
            }
        });
    }
    for (std::thread& t : pool) {
        t.join();
    }
}

} // namespace

std::vector<PredictionRow> collect_predictions(const Anticipator& model, const Dataset& dataset,
                                               std::span<const std::size_t> horizons,
                                               std::size_t jobs) {
    check_horizons(model, horizons);
    if (dataset.empty()) {
        throw Error("evaluate: empty dataset");
    }
    std::vector<std::vector<PredictionRow>> per_video(dataset.size());
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for_each_video(dataset.size(), jobs, [&](std::size_t i) {
        try {
            per_video[i] = score_video(model, dataset[i], horizons);
        } catch (...) {
            const std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) {
                failure = std::current_exception();
            }
        }
    });
    if (failure) {
        std::rethrow_exception(failure);
    }
    std::vector<PredictionRow> rows;
    for (std::vector<PredictionRow>& part : per_video) {
        rows.insert(rows.end(), part.begin(), part.end());
    }
    return rows;
}

MetricsReport evaluate_horizons(const Anticipator& model, const Dataset& dataset,
                                std::span<const std::size_t> horizons,
                                const EvalOptions& options) {
    std::vector<PredictionRow> rows = collect_predictions(model, dataset, horizons, options.jobs);

    // Ground-truth lookup per video id.
    std::vector<std::pair<std::string, const LabelTrack*>> tracks;
    for (const LabeledVideo& video : dataset) {
        tracks.emplace_back(video.features.id, &require_labels(video));
    }
    const auto track_of = [&](const std::string& id) -> const LabelTrack& {
        for (const auto& [vid, track] : tracks) {
            if (vid == id) {
                return *track;
            }
        }
        throw Error("evaluate: unknown video id " + id);
    };

    MetricsReport report;
    report.classes = model.action_classes();
    report.chunk_seconds = dataset.front().features.chunk_seconds;

    for (std::size_t h : horizons) {
        HorizonMetrics hm;
        hm.horizon = h;
        std::vector<std::vector<ScoredFrame>> pools(report.classes);
        std::vector<ScoredFrame> all;
        for (const PredictionRow& row : rows) {
            if (row.horizon != h) {
                continue;
            }
            const LabelTrack& track = track_of(row.video);
            ScoredFrame frame{row.video, row.chunk, row.cls, row.score,
                              track.labels[row.chunk] == row.cls};
            pools[static_cast<std::size_t>(row.cls) - 1].push_back(frame);
            all.push_back(frame);
        }
        // Platform-independent tie-breaking: rank from a (video, chunk) presort.
        const auto presort = [](std::vector<ScoredFrame>& pool) {
            std::stable_sort(pool.begin(), pool.end(),
                             [](const ScoredFrame& a, const ScoredFrame& b) {
                                 return std::tie(a.video, a.chunk) < std::tie(b.video, b.chunk);
                             });
        };
        hm.global_w = negative_positive_ratio(all);
        double map_sum = 0.0;
        double mcap_sum = 0.0;
        for (std::size_t c = 0; c < report.classes; ++c) {
            presort(pools[c]);
            const double w = options.global_w ? hm.global_w : negative_positive_ratio(pools[c]);
            const double ap = average_precision(pools[c]);
            const double cap = calibrated_average_precision(pools[c], w);
            hm.ap.push_back(ap);
            hm.cap.push_back(cap);
            hm.w.push_back(w);
            map_sum += ap;
            mcap_sum += cap;
        }
        hm.map = map_sum / static_cast<double>(report.classes);
        hm.mcap = mcap_sum / static_cast<double>(report.classes);
        report.horizons.push_back(std::move(hm));
    }

    try {
        report.mean_anticipation_delay = anticipation_delay(model, dataset);
    } catch (const MetricError&) {
        report.mean_anticipation_delay = std::numeric_limits<double>::quiet_NaN();
    }
    return report;
}

double horizon_accuracy(const Anticipator& model, const Dataset& dataset, std::size_t horizon) {
    const std::size_t hs[1] = {horizon};
    check_horizons(model, hs);
    std::size_t correct = 0;
    std::size_t total = 0;
    std::vector<Vector> dists;
    for (const LabeledVideo& video : dataset) {
        const LabelTrack& track = require_labels(video);
        const std::size_t len = video.features.length();
        if (len < model.history_len() + horizon) {
            continue;
        }
        for (std::size_t anchor = model.history_len(); anchor + horizon - 1 < len; ++anchor) {
            model.distributions(video.features, anchor, hs, dists);
            const Vector& dist = dists[0];
            const std::size_t pred = static_cast<std::size_t>(
                std::max_element(dist.begin(), dist.end()) - dist.begin());
            if (static_cast<int>(pred) == track.labels[anchor + horizon - 1]) {
                ++correct;
            }
            ++total;
        }
    }
    if (total == 0) {
        throw MetricError("horizon_accuracy: no valid anchor in the dataset");
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

double clip_accuracy(const Anticipator& model, const Dataset& clips, std::size_t horizon) {
    if (clips.empty()) {
        throw MetricError("clip_accuracy: empty clip set");
    }
    const std::size_t hs[1] = {horizon};
    check_horizons(model, hs);
    std::size_t correct = 0;
    std::vector<Vector> dists;
    for (const LabeledVideo& clip : clips) {
        const LabelTrack& track = require_labels(clip);
        int label = 0;
        for (const ActionInterval& iv : track.intervals) {
            if (label != 0 && iv.cls != label) {
                throw Error("clip_accuracy: clip '" + clip.features.id +
                            "' has more than one action class");
            }
            label = iv.cls;
        }
        if (label == 0) {
            throw Error("clip_accuracy: clip '" + clip.features.id + "' has no action label");
        }
        const std::size_t len = clip.features.length();
        Vector mean(model.action_classes() + 1, 0.0);
        std::size_t anchors = 0;
        for (std::size_t anchor = model.history_len(); anchor + horizon - 1 < len; ++anchor) {
            model.distributions(clip.features, anchor, hs, dists);
            add_scaled(mean, dists[0], 1.0);
            ++anchors;
        }
        if (anchors == 0) {
            throw Error("clip_accuracy: clip '" + clip.features.id +
                        "' is too short for the history window");
        }
        // Argmax over action classes only; background is not a clip category.
        std::size_t best = 1;
        for (std::size_t c = 2; c < mean.size(); ++c) {
            if (mean[c] > mean[best]) {
                best = c;
            }
        }
        if (static_cast<int>(best) == label) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(clips.size());
}

double anticipation_delay(const Anticipator& model, const Dataset& dataset) {
    double total_delay = 0.0;
    std::size_t transfers = 0;
    std::vector<Vector> dists;
    for (const LabeledVideo& video : dataset) {
        const LabelTrack& track = require_labels(video);
        const std::size_t len = video.features.length();
        for (const ActionInterval& iv : track.intervals) {
            const std::size_t anchor = iv.t_start;
            if (anchor < model.history_len() || anchor >= len) {
                continue;
            }
            std::vector<std::size_t> hs;
            for (std::size_t h = 1; h <= model.max_horizon() && anchor + h - 1 < len; ++h) {
                if (model.supports_horizon(h)) {
                    hs.push_back(h);
                }
            }
            if (hs.empty()) {
                continue;
            }
            model.distributions(video.features, anchor, hs, dists);
            double delay = static_cast<double>(model.max_horizon());
            for (std::size_t i = 0; i < hs.size(); ++i) {
                const Vector& dist = dists[i];
                const std::size_t pred = static_cast<std::size_t>(
                    std::max_element(dist.begin(), dist.end()) - dist.begin());
                if (static_cast<int>(pred) == iv.cls) {
                    delay = static_cast<double>(hs[i] - 1);
                    break;
                }
            }
            total_delay += delay;
            ++transfers;
        }
    }
    if (transfers == 0) {
        throw MetricError("anticipation_delay: no evaluable transfer in the dataset");
    }
    return total_delay / static_cast<double>(transfers);
}

void write_report_csv(std::ostream& out, const MetricsReport& report) {
    if (!report.config_echo.empty()) {
        out << "# " << report.config_echo << "\n";
    }
    out << "class,horizon_chunks,horizon_seconds,ap,cap,w\n";
    for (const HorizonMetrics& hm : report.horizons) {
        const double seconds = static_cast<double>(hm.horizon) * report.chunk_seconds;
        for (std::size_t c = 0; c < report.classes; ++c) {
            out << (c + 1) << ',' << hm.horizon << ',' << format_double(seconds) << ','
                << format_double(hm.ap[c]) << ',' << format_double(hm.cap[c]) << ','
                << format_double(hm.w[c]) << "\n";
        }
        out << "__mean__," << hm.horizon << ',' << format_double(seconds) << ','
            << format_double(hm.map) << ',' << format_double(hm.mcap) << ','
            << format_double(hm.global_w) << "\n";
    }
    out << "# mean_anticipation_delay=" << format_double(report.mean_anticipation_delay) << "\n";
}

void write_prediction_dump(std::ostream& out, std::span<const PredictionRow> rows) {
    out << "video,chunk,horizon,class,score\n";
    for (const PredictionRow& row : rows) {
        out << row.video << ',' << row.chunk << ',' << row.horizon << ',' << row.cls << ','
            << format_double(row.score) << "\n";
    }
}

} // namespace red
