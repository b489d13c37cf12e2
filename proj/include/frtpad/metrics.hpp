#pragma once

// PAD error rates. Decision rule everywhere: score >= threshold => bona fide.

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "frtpad/sample.hpp"

namespace frtpad {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ScoreSet {
  std::vector<double> scores;
  std::vector<Label> labels;

  [[nodiscard]] std::size_t size() const { return scores.size(); }
  [[nodiscard]] std::size_t bonafide_count() const;
  [[nodiscard]] std::size_t attack_count() const;
  // Throws MetricsError on length mismatch, non-finite scores or a missing
  // class.
  void validate() const;
};

struct ErrorRates {
  double apcer = 0.0;
  double bpcer = 0.0;
};

struct RocPoint {
  double threshold = 0.0;
  double apcer = 0.0;
  double tpr = 0.0;  // 1 - BPCER
};

using RocCurve = std::vector<RocPoint>;

// +inf, then midpoints of adjacent distinct scores in descending order,
// then -inf.
std::vector<double> candidate_thresholds(const ScoreSet& s);

// One point per candidate threshold, from (0, 0) at +inf to (1, 1) at -inf.
RocCurve roc(const ScoreSet& s);

// P(bona > attack) + P(bona == attack) / 2 over all pairs.
double auc(const ScoreSet& s);

ErrorRates apcer_bpcer(const ScoreSet& s, double threshold);
double hter(const ScoreSet& s, double threshold);

// Candidate threshold minimizing |APCER - BPCER|; ties go to the smaller
// APCER, then the smaller threshold.
double eer_threshold(const ScoreSet& s);

// Minimum BPCER over candidate thresholds with APCER <= target.
double bpcer_at_apcer(const ScoreSet& s, double target = 0.01);

struct MetricReport {
  std::size_t bonafide = 0;
  std::size_t attack = 0;
  double threshold = 0.0;  // EER threshold of this score set
  double apcer = 0.0;
  double bpcer = 0.0;
  double hter = 0.0;
  double auc = 0.0;
  double bpcer_at_apcer1 = 0.0;

  [[nodiscard]] nlohmann::json to_json() const;
};

// HTER at the set's own EER threshold, AUC, BPCER at APCER = 1%.
MetricReport evaluate(const ScoreSet& s);

struct ScoreRow {
  std::string sample_id;
  double score = 0.0;
  Label label = Label::kAttack;
  std::string dataset_id;
};

// CSV with header `sample_id,score,label,dataset_id`; label is 0 or 1.
std::string scores_to_csv(const std::vector<ScoreRow>& rows);
std::vector<ScoreRow> scores_from_csv(const std::string& text);
ScoreSet to_score_set(const std::vector<ScoreRow>& rows);

// CSV with header `threshold,apcer,tpr`.
std::string roc_to_csv(const RocCurve& curve);

}  // namespace frtpad
