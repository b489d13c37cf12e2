#include "frtpad/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <sstream>

namespace frtpad {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Scores of each class sorted ascending; counting "score >= t" is then a
// binary search.
struct Sorted {
  std::vector<double> bona;
  std::vector<double> attack;

  explicit Sorted(const ScoreSet& s) {
    s.validate();
    for (std::size_t i = 0; i < s.size(); ++i) {
      (s.labels[i] == Label::kBonafide ? bona : attack).push_back(s.scores[i]);
    }
    std::sort(bona.begin(), bona.end());
    std::sort(attack.begin(), attack.end());
  }

  static std::size_t at_least(const std::vector<double>& v, double t) {
    return static_cast<std::size_t>(v.end() - std::lower_bound(v.begin(), v.end(), t));
  }

  // False accepts and false rejects at threshold t.
  [[nodiscard]] std::pair<std::size_t, std::size_t> errors(double t) const {
    return {at_least(attack, t), bona.size() - at_least(bona, t)};
  }

  [[nodiscard]] ErrorRates rates(double t) const {
    const auto [fa, fr] = errors(t);
    return {static_cast<double>(fa) / static_cast<double>(attack.size()),
            static_cast<double>(fr) / static_cast<double>(bona.size())};
  }
};

}  // namespace

std::size_t ScoreSet::bonafide_count() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Label::kBonafide));
}

std::size_t ScoreSet::attack_count() const { return labels.size() - bonafide_count(); }

void ScoreSet::validate() const {
  if (scores.size() != labels.size()) {
    throw MetricsError("score set has " + std::to_string(scores.size()) + " scores and " +
                       std::to_string(labels.size()) + " labels");
  }
  for (double v : scores) {
    if (!std::isfinite(v)) throw MetricsError("score set contains a non-finite score");
  }
  if (bonafide_count() == 0 || attack_count() == 0) {
    throw MetricsError("score set needs at least one bona fide and one attack sample");
  }
}

std::vector<double> candidate_thresholds(const ScoreSet& s) {
  s.validate();
  std::vector<double> v = s.scores;
  std::sort(v.begin(), v.end(), std::greater<>());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  std::vector<double> out{kInf};
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    const double hi = v[i], lo = v[i + 1];
    double mid = lo + (hi - lo) / 2.0;
    // Adjacent doubles: the midpoint rounds onto an endpoint. Use hi, which
    // still accepts hi and rejects lo.
    if (mid <= lo) mid = hi;
    out.push_back(mid);
  }
  out.push_back(-kInf);
  return out;
}

RocCurve roc(const ScoreSet& s) {
  const Sorted sorted(s);
  RocCurve curve;
  for (double t : candidate_thresholds(s)) {
    const ErrorRates r = sorted.rates(t);
    curve.push_back({t, r.apcer, 1.0 - r.bpcer});
  }
  return curve;
}

double auc(const ScoreSet& s) {
  const Sorted sorted(s);
  // 2 * (#bona > attack) + #ties, exact in integers.
  std::uint64_t twice = 0;
  for (double b : sorted.bona) {
    const auto lo = std::lower_bound(sorted.attack.begin(), sorted.attack.end(), b);
    const auto hi = std::upper_bound(lo, sorted.attack.end(), b);
    twice += 2 * static_cast<std::uint64_t>(lo - sorted.attack.begin()) +
             static_cast<std::uint64_t>(hi - lo);
  }
  const double pairs = static_cast<double>(sorted.bona.size()) * static_cast<double>(sorted.attack.size());
  return static_cast<double>(twice) / (2.0 * pairs);
}

ErrorRates apcer_bpcer(const ScoreSet& s, double threshold) {
  return Sorted(s).rates(threshold);
}

double hter(const ScoreSet& s, double threshold) {
  const ErrorRates r = apcer_bpcer(s, threshold);
  return (r.apcer + r.bpcer) / 2.0;
}

double eer_threshold(const ScoreSet& s) {
  const Sorted sorted(s);
  const auto na = static_cast<std::int64_t>(sorted.attack.size());
  const auto nb = static_cast<std::int64_t>(sorted.bona.size());
  double best_t = 0.0;
  std::int64_t best_gap = -1, best_fa = 0;
  for (double t : candidate_thresholds(s)) {
    const auto [fa_u, fr_u] = sorted.errors(t);
    const auto fa = static_cast<std::int64_t>(fa_u), fr = static_cast<std::int64_t>(fr_u);
    // |fa/na - fr/nb| scaled by na*nb; APCER order equals fa order.
    const std::int64_t gap = std::llabs(fa * nb - fr * na);
    const bool better = best_gap < 0 || gap < best_gap ||
                        (gap == best_gap && (fa < best_fa || (fa == best_fa && t < best_t)));
    if (better) {
      best_gap = gap;
      best_fa = fa;
      best_t = t;
    }
  }
  return best_t;
}

double bpcer_at_apcer(const ScoreSet& s, double target) {
  const Sorted sorted(s);
  double best = 1.0;
  for (double t : candidate_thresholds(s)) {
    const ErrorRates r = sorted.rates(t);
    if (r.apcer <= target) best = std::min(best, r.bpcer);
  }
  return best;
}

nlohmann::json MetricReport::to_json() const {
  return {{"bonafide", bonafide},
          {"attack", attack},
          {"threshold", threshold},
          {"apcer", apcer},
          {"bpcer", bpcer},
          {"hter", hter},
          {"auc", auc},
          {"bpcer_at_apcer_1pct", bpcer_at_apcer1}};
}

MetricReport evaluate(const ScoreSet& s) {
  MetricReport m;
  m.bonafide = s.bonafide_count();
  m.attack = s.attack_count();
  m.threshold = eer_threshold(s);
  const ErrorRates r = apcer_bpcer(s, m.threshold);
  m.apcer = r.apcer;
  m.bpcer = r.bpcer;
  m.hter = (r.apcer + r.bpcer) / 2.0;
  m.auc = auc(s);
  m.bpcer_at_apcer1 = bpcer_at_apcer(s, 0.01);
  return m;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw MetricsError("scores csv line " + std::to_string(line) + ": bad score '" + s + "'");
  }
  return v;
}

// Shortest representation that parses back to the same double.
std::string num(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

std::string scores_to_csv(const std::vector<ScoreRow>& rows) {
  std::string out = "sample_id,score,label,dataset_id\n";
  for (const auto& r : rows) {
    out += r.sample_id + ',' + num(r.score) + ',' + std::to_string(label_index(r.label)) + ',' +
           r.dataset_id + '\n';
  }
  return out;
}

std::vector<ScoreRow> scores_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("sample_id,score,label,dataset_id", 0) != 0) {
    throw MetricsError("scores csv must start with header sample_id,score,label,dataset_id");
  }
  std::vector<ScoreRow> rows;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) {
      throw MetricsError("scores csv line " + std::to_string(n) + ": expected 4 fields, got " +
                         std::to_string(f.size()));
    }
    if (f[2] != "0" && f[2] != "1") {
      throw MetricsError("scores csv line " + std::to_string(n) + ": label must be 0 or 1");
    }
    rows.push_back({f[0], parse_double(f[1], n), f[2] == "1" ? Label::kBonafide : Label::kAttack, f[3]});
  }
  return rows;
}

ScoreSet to_score_set(const std::vector<ScoreRow>& rows) {
  ScoreSet s;
  for (const auto& r : rows) {
    s.scores.push_back(r.score);
    s.labels.push_back(r.label);
  }
  return s;
}

std::string roc_to_csv(const RocCurve& curve) {
  std::string out = "threshold,apcer,tpr\n";
  for (const auto& p : curve) out += num(p.threshold) + ',' + num(p.apcer) + ',' + num(p.tpr) + '\n';
  return out;
}

}  // namespace frtpad
