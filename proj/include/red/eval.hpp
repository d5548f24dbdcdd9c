#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "red/data.hpp"
#include "red/model.hpp"
#include "red/numerics.hpp"

namespace red {

// A metric was requested on data that cannot define it (no positives, no
// transfers, empty clip set).
struct MetricError : Error {
    using Error::Error;
};

/// One scored chunk for ranking metrics.
struct ScoredFrame {
    std::string video;
    std::size_t chunk = 0;
    int cls = 0;
    double score = 0.0;
    bool positive = false;
};

/// Ranking average precision. Items are ranked by descending score with ties
/// broken by stable input order.
double average_precision(std::span<const ScoredFrame> items);

/// Average precision with calibrated precision TP / (TP + FP / w) at each
/// positive rank; w is the negative/positive frame ratio.
double calibrated_average_precision(std::span<const ScoredFrame> items, double w);

/// Negative/positive count ratio of a pool; 1 when there are no negatives.
double negative_positive_ratio(std::span<const ScoredFrame> items);

// ---------------------------------------------------------------------------
// Model-facing interface

/// Anything that can anticipate a class distribution `horizon` chunks past
/// the observed history ending just before `anchor`.
class Anticipator {
  public:
    virtual ~Anticipator() = default;
    virtual std::size_t history_len() const = 0;
    virtual std::size_t max_horizon() const = 0;
    virtual bool supports_horizon(std::size_t horizon) const = 0;
    virtual std::size_t action_classes() const = 0;
    /// Fills one distribution over the c+1 categories per requested horizon.
    /// The anchor's history window [anchor - history_len, anchor) must lie
    /// inside the video, and anchor + horizon - 1 must be a valid chunk.
    virtual void distributions(const FeatureSequence& video, std::size_t anchor,
                               std::span<const std::size_t> horizons,
                               std::vector<Vector>& out) const = 0;
};

class RedAnticipator : public Anticipator {
  public:
    RedAnticipator(RedParams params, Hyper hyper);
    std::size_t history_len() const override { return hyper_.t_enc; }
    std::size_t max_horizon() const override { return hyper_.t_dec; }
    bool supports_horizon(std::size_t horizon) const override {
        return horizon >= 1 && horizon <= hyper_.t_dec;
    }
    std::size_t action_classes() const override { return hyper_.c; }
    void distributions(const FeatureSequence& video, std::size_t anchor,
                       std::span<const std::size_t> horizons,
                       std::vector<Vector>& out) const override;

  private:
    RedParams params_;
    Hyper hyper_;
};

class FcAnticipator : public Anticipator {
  public:
    FcAnticipator(FcParams params, Hyper hyper);
    std::size_t history_len() const override { return 1; }
    std::size_t max_horizon() const override { return hyper_.t_ant; }
    bool supports_horizon(std::size_t horizon) const override { return horizon == hyper_.t_ant; }
    std::size_t action_classes() const override { return hyper_.c; }
    void distributions(const FeatureSequence& video, std::size_t anchor,
                       std::span<const std::size_t> horizons,
                       std::vector<Vector>& out) const override;

  private:
    FcParams params_;
    Hyper hyper_;
};

class EfcAnticipator : public Anticipator {
  public:
    EfcAnticipator(EfcParams params, Hyper hyper);
    std::size_t history_len() const override { return hyper_.t_enc; }
    std::size_t max_horizon() const override { return hyper_.t_ant; }
    bool supports_horizon(std::size_t horizon) const override { return horizon == hyper_.t_ant; }
    std::size_t action_classes() const override { return hyper_.c; }
    void distributions(const FeatureSequence& video, std::size_t anchor,
                       std::span<const std::size_t> horizons,
                       std::vector<Vector>& out) const override;

  private:
    EfcParams params_;
    Hyper hyper_;
};

// ---------------------------------------------------------------------------
// Sweeps and reports

struct HorizonMetrics {
    std::size_t horizon = 0;
    std::vector<double> ap;  // per action class, index c-1
    std::vector<double> cap; // per action class
    std::vector<double> w;   // per action class
    double map = 0.0;
    double mcap = 0.0;
    double global_w = 0.0;
};

struct MetricsReport {
    std::size_t classes = 0;
    double chunk_seconds = 0.25;
    std::vector<HorizonMetrics> horizons;
    double mean_anticipation_delay = 0.0; // NaN when no transfer is evaluable
    std::string config_echo;
};

struct PredictionRow {
    std::string video;
    std::size_t chunk = 0;
    std::size_t horizon = 0;
    int cls = 0;
    double score = 0.0;
};

struct EvalOptions {
    bool global_w = false; // calibrate with one dataset-wide w instead of per class
    std::size_t jobs = 1;
};

/// Slides the model over every valid anchor of every video and scores chunk
/// t + h - 1 with the step-h distribution. Pools are assembled per class and
/// horizon; the last h - 1 chunks of each video are never scored.
MetricsReport evaluate_horizons(const Anticipator& model, const Dataset& dataset,
                                std::span<const std::size_t> horizons,
                                const EvalOptions& options = {});

/// Raw scores backing the report, one row per (anchor, horizon, class).
std::vector<PredictionRow> collect_predictions(const Anticipator& model, const Dataset& dataset,
                                               std::span<const std::size_t> horizons,
                                               std::size_t jobs = 1);

/// Fraction of (anchor, horizon) positions whose argmax category matches the
/// ground-truth label of the scored chunk.
double horizon_accuracy(const Anticipator& model, const Dataset& dataset, std::size_t horizon);

/// Whole-clip accuracy: distributions at `horizon` are averaged over all
/// anchors, and the argmax over action classes is compared with the clip's
/// single action class.
double clip_accuracy(const Anticipator& model, const Dataset& clips, std::size_t horizon);

/// Mean number of chunks after each ground-truth transfer until the model's
/// argmax first equals the action class, anchored at the transfer itself.
/// Transfers never matched count as max_horizon.
double anticipation_delay(const Anticipator& model, const Dataset& dataset);

void write_report_csv(std::ostream& out, const MetricsReport& report);
void write_prediction_dump(std::ostream& out, std::span<const PredictionRow> rows);

} // namespace red
