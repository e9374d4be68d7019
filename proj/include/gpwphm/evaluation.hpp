#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gpwphm/prediction.hpp"

namespace gpwphm {

// ---------------------------------------------------------------------------
// Kaplan-Meier.
// ---------------------------------------------------------------------------

struct KmRow {
  double time = 0.0;
  double survival = 1.0;  // after the events at this time
  std::size_t at_risk = 0;
  std::size_t events = 0;
  std::size_t censored = 0;
};

/// Product-limit estimate; one row per distinct observed time. Rows with no
/// events carry the previous survival value.
struct KmCurve {
  std::vector<KmRow> rows;

  /// S(t) as a right-continuous step function.
  double at(double t) const {
    double s = 1.0;
    for (const auto& r : rows) {
      if (r.time > t) break;
      s = r.survival;
    }
    return s;
  }
  /// S(t-), the value just before t.
  double before(double t) const {
    double s = 1.0;
    for (const auto& r : rows) {
      if (r.time >= t) break;
      s = r.survival;
    }
    return s;
  }
};

inline KmCurve kaplan_meier(const std::vector<SurvivalRecord>& records) {
  require(!records.empty(), "kaplan_meier: no records");
  validate_records(records);
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].time < records[b].time; });
  KmCurve km;
  std::size_t at_risk = records.size();
  double s = 1.0;
  for (std::size_t k = 0; k < order.size();) {
    const double t = records[order[k]].time;
    KmRow row;
    row.time = t;
    row.at_risk = at_risk;
    for (; k < order.size() && records[order[k]].time == t; ++k)
      (records[order[k]].event ? row.events : row.censored) += 1;
    if (row.events > 0) s *= 1.0 - static_cast<double>(row.events) / static_cast<double>(at_risk);
    row.survival = s;
    at_risk -= row.events + row.censored;
    km.rows.push_back(row);
  }
  return km;
}

// ---------------------------------------------------------------------------
// Log-rank test.
// ---------------------------------------------------------------------------

struct LogRankResult {
  double chi_square = 0.0;
  double p_value = 1.0;
  double observed_a = 0.0, expected_a = 0.0, variance = 0.0;
};

/// Two-group log-rank test with the hypergeometric variance; tied events are
/// treated as simultaneous.
inline LogRankResult log_rank(const std::vector<SurvivalRecord>& a, const std::vector<SurvivalRecord>& b) {
  require(!a.empty() && !b.empty(), "log_rank: both groups must be nonempty");
  validate_records(a);
  validate_records(b);
  std::vector<double> times;
  for (const auto* g : {&a, &b})
    for (const auto& r : *g)
      if (r.event) times.push_back(r.time);
  if (times.empty()) throw InputError("log_rank: no events in either group");
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());

  // Sweep both groups in time order.
  auto sorted_times = [](const std::vector<SurvivalRecord>& g) {
    std::vector<std::pair<double, bool>> v;
    for (const auto& r : g) v.emplace_back(r.time, r.event);
    std::sort(v.begin(), v.end());
    return v;
  };
  const auto va = sorted_times(a), vb = sorted_times(b);
  std::size_t ia = 0, ib = 0;
  LogRankResult res;
  for (double t : times) {
    while (ia < va.size() && va[ia].first < t) ++ia;
    while (ib < vb.size() && vb[ib].first < t) ++ib;
    const double na = static_cast<double>(va.size() - ia), nb = static_cast<double>(vb.size() - ib);
    double da = 0.0, db = 0.0;
    for (std::size_t k = ia; k < va.size() && va[k].first == t; ++k) da += va[k].second ? 1.0 : 0.0;
    for (std::size_t k = ib; k < vb.size() && vb[k].first == t; ++k) db += vb[k].second ? 1.0 : 0.0;
    const double n = na + nb, d = da + db;
    res.observed_a += da;
    res.expected_a += d * na / n;
    if (n > 1.0) res.variance += d * (na / n) * (nb / n) * (n - d) / (n - 1.0);
  }
  if (!(res.variance > 0.0)) {
    res.chi_square = 0.0;
    res.p_value = 1.0;
    return res;
  }
  const double diff = res.observed_a - res.expected_a;
  res.chi_square = diff * diff / res.variance;
  res.p_value = std::erfc(std::sqrt(res.chi_square / 2.0));
  return res;
}

// ---------------------------------------------------------------------------
// Concordance.
// ---------------------------------------------------------------------------

enum class ConcordanceVariant { Harrell, Uno };

inline std::string to_string(ConcordanceVariant v) { return v == ConcordanceVariant::Harrell ? "harrell" : "uno"; }

inline ConcordanceVariant concordance_variant_from_string(const std::string& s) {
  if (s == "harrell") return ConcordanceVariant::Harrell;
  if (s == "uno") return ConcordanceVariant::Uno;
  throw InputError("unknown concordance metric '" + s + "' (expected harrell or uno)");
}

/// C-statistic. A pair (i, j) is comparable when i had the event, t_i < t_j
/// and t_i <= tau (default: the largest event time); it is concordant when
/// score_i > score_j, and score ties count 1/2. The Uno variant weights each
/// pair by 1/G(t_i-)^2, G being the Kaplan-Meier estimate of the censoring
/// distribution.
inline double concordance(const std::vector<double>& scores, const std::vector<SurvivalRecord>& records,
                          ConcordanceVariant variant = ConcordanceVariant::Harrell,
                          std::optional<double> tau = std::nullopt) {
  require(scores.size() == records.size(), "concordance: scores and records differ in length");
  validate_records(records);
  for (double s : scores) require(std::isfinite(s), "concordance: non-finite risk score");
  const std::size_t n = records.size();
  std::vector<double> weight(n, 1.0);
  if (variant == ConcordanceVariant::Uno) {
    std::vector<SurvivalRecord> cens(records);
    for (auto& r : cens) r.event = !r.event;
    const KmCurve G = kaplan_meier(cens);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = G.before(records[i].time);
      weight[i] = g > 0.0 ? 1.0 / (g * g) : 0.0;
    }
  }
  const double cutoff = tau.value_or(std::numeric_limits<double>::infinity());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!records[i].event || records[i].time > cutoff) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (!(records[i].time < records[j].time)) continue;
      den += weight[i];
      if (scores[i] > scores[j]) num += weight[i];
      else if (scores[i] == scores[j]) num += 0.5 * weight[i];
    }
  }
  if (!(den > 0.0)) throw InputError("concordance: no comparable pairs");
  return num / den;
}

// ---------------------------------------------------------------------------
// Event-time error and risk groups.
// ---------------------------------------------------------------------------

/// Mean squared error over the uncensored records only.
inline double mse_event_times(const std::vector<double>& predicted, const std::vector<SurvivalRecord>& records) {
  require(predicted.size() == records.size(), "mse: predictions and records differ in length");
  double s = 0.0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].event) continue;
    require(std::isfinite(predicted[i]), "mse: non-finite prediction");
    const double e = predicted[i] - records[i].time;
    s += e * e;
    ++m;
  }
  if (m == 0) throw InputError("mse: no uncensored records");
  return s / static_cast<double>(m);
}

struct RiskGroups {
  std::vector<std::size_t> high, low;  // indices, ascending
};

/// Median split by score. The lower half (rounded up) is the low-risk group;
/// equal scores are ordered by index, so earlier indices go low first.
inline RiskGroups split_risk_groups(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  const std::size_t n_low = (scores.size() + 1) / 2;
  RiskGroups g;
  g.low.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_low));
  g.high.assign(order.begin() + static_cast<std::ptrdiff_t>(n_low), order.end());
  std::sort(g.low.begin(), g.low.end());
  std::sort(g.high.begin(), g.high.end());
  return g;
}

template <class T>
std::vector<T> select(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v.at(i));
  return out;
}

inline Matrix select_rows(const Matrix& M, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), M.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = M.row(static_cast<Eigen::Index>(idx[k]));
  return out;
}

inline ModelData select_data(const ModelData& d, const std::vector<std::size_t>& idx) {
  ModelData out;
  for (const auto& Y : d.Ys) out.Ys.push_back(select_rows(Y, idx));
  out.records = select(d.records, idx);
  out.survival = d.survival;
  return out;
}

/// Log-rank comparison of the groups produced by split_risk_groups.
inline LogRankResult risk_split_log_rank(const std::vector<double>& scores, const std::vector<SurvivalRecord>& records) {
  require(scores.size() == records.size(), "risk split: scores and records differ in length");
  const RiskGroups g = split_risk_groups(scores);
  return log_rank(select(records, g.high), select(records, g.low));
}

/// Plot-ready KM output: group,time,survival,at_risk,events,censored. Each
/// group starts with a row at time 0 and survival 1.
inline void write_km_csv(std::ostream& os, const std::vector<std::pair<std::string, KmCurve>>& curves) {
  os << "group,time,survival,at_risk,events,censored\n";
  os.precision(17);
  for (const auto& [name, km] : curves) {
    const std::size_t n0 = km.rows.empty() ? 0 : km.rows.front().at_risk;
    os << name << ",0,1," << n0 << ",0,0\n";
    for (const auto& r : km.rows)
      os << name << ',' << r.time << ',' << r.survival << ',' << r.at_risk << ',' << r.events << ',' << r.censored
         << '\n';
  }
}

// ---------------------------------------------------------------------------
// Cross-validation.
// ---------------------------------------------------------------------------

enum class CvMetric { Harrell, Uno, Mse };

inline std::string to_string(CvMetric m) {
  switch (m) {
    case CvMetric::Harrell: return "harrell";
    case CvMetric::Uno: return "uno";
    case CvMetric::Mse: return "mse";
  }
  return "?";
}

inline CvMetric cv_metric_from_string(const std::string& s) {
  if (s == "harrell") return CvMetric::Harrell;
  if (s == "uno") return CvMetric::Uno;
  if (s == "mse") return CvMetric::Mse;
  throw InputError("unknown metric '" + s + "' (expected harrell, uno or mse)");
}

enum class CvModel { Latent, Observed };

struct CvOptions {
  Eigen::Index q = 2;
  std::vector<KernelFamily> families;  // one per source
  PriorConfig priors;
  HyperOptions hyper;
  bool optimize_hyper = true;
  ProjectionOptions projection;
  CvModel model = CvModel::Latent;
};

struct CvFold {
  std::vector<std::size_t> test;
  double value = std::numeric_limits<double>::quiet_NaN();
  bool valid = false;
  std::string note;
};

struct CvReport {
  std::vector<CvFold> folds;
  std::vector<int> assignment;  // fold index per row
  double mean = std::numeric_limits<double>::quiet_NaN();
  std::size_t valid_folds = 0;
  CvMetric metric = CvMetric::Harrell;
  std::vector<std::string> warnings;
};

/// Seeded shuffle, then row order position p goes to fold p mod k.
inline std::vector<int> fold_assignment(std::size_t n, int k, std::uint64_t seed) {
  require(k >= 2, "cross-validation needs k >= 2");
  require(n >= static_cast<std::size_t>(k), "cross-validation needs at least k rows");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> a(n);
  for (std::size_t p = 0; p < n; ++p) a[perm[p]] = static_cast<int>(p % static_cast<std::size_t>(k));
  return a;
}

/// Test-set scores and predicted mean times from a model trained on `train`.
struct HeldOutPrediction {
  std::vector<double> risk;
  std::vector<double> mean_time;
};

inline HeldOutPrediction train_and_predict(const ModelData& train, const std::vector<Matrix>& test_Ys,
                                           const CvOptions& opts) {
  HeldOutPrediction out;
  const Eigen::Index M = test_Ys.front().rows();
  if (opts.model == CvModel::Observed) {
    const ObservedWphm m = fit_observed_wphm(train.records, concat_sources(train.Ys), opts.priors);
    const Matrix Zt = concat_sources(test_Ys);
    for (Eigen::Index i = 0; i < M; ++i) {
      const auto e = m.predict(Zt.row(i).transpose());
      out.risk.push_back(e.risk);
      out.mean_time.push_back(e.mean);
    }
    return out;
  }
  std::vector<KernelSpec> specs = initial_specs(train, opts.families, opts.q);
  ModelFit fit;
  if (opts.optimize_hyper) {
    fit = optimize_hyperparameters(train, opts.q, specs, opts.priors, opts.hyper).fit;
  } else {
    fit = fit_map(train, opts.q, specs, opts.priors, opts.hyper.fit);
  }
  const Predictor pred(fit);
  const Matrix Xs = pred.project_rows(test_Ys, opts.projection);
  for (Eigen::Index i = 0; i < M; ++i) {
    const auto e = predict_event_time(Xs.row(i).transpose(), fit);
    out.risk.push_back(e.risk);
    out.mean_time.push_back(e.mean);
  }
  return out;
}

inline CvReport kfold_cv(const ModelData& data, int k, const CvOptions& opts, CvMetric metric, std::uint64_t seed) {
  data.validate();
  require(data.survival, "cross-validation needs survival data");
  if (opts.model == CvModel::Latent)
    require(opts.families.size() == data.Ys.size(), "cross-validation: one kernel family per source is required");
  CvReport rep;
  rep.metric = metric;
  rep.assignment = fold_assignment(static_cast<std::size_t>(data.N()), k, seed);
  double sum = 0.0;
  for (int f = 0; f < k; ++f) {
    CvFold fold;
    std::vector<std::size_t> train_idx;
    for (std::size_t i = 0; i < rep.assignment.size(); ++i)
      (rep.assignment[i] == f ? fold.test : train_idx).push_back(i);
    const ModelData train = select_data(data, train_idx);
    std::vector<Matrix> test_Ys;
    for (const auto& Y : data.Ys) test_Ys.push_back(select_rows(Y, fold.test));
    const auto test_records = select(data.records, fold.test);
    CvOptions o = opts;
    o.hyper.fit.seed = opts.hyper.fit.seed + static_cast<std::uint64_t>(f);
    o.projection.seed = opts.projection.seed + 1000u * static_cast<std::uint64_t>(f);
    const HeldOutPrediction p = train_and_predict(train, test_Ys, o);
    try {
      switch (metric) {
        case CvMetric::Harrell: fold.value = concordance(p.risk, test_records, ConcordanceVariant::Harrell); break;
        case CvMetric::Uno: fold.value = concordance(p.risk, test_records, ConcordanceVariant::Uno); break;
        case CvMetric::Mse: fold.value = mse_event_times(p.mean_time, test_records); break;
      }
      fold.valid = true;
      sum += fold.value;
      ++rep.valid_folds;
    } catch (const InputError& e) {
      fold.note = e.what();
      rep.warnings.push_back("fold " + std::to_string(f + 1) + " excluded: " + e.what());
    }
    rep.folds.push_back(std::move(fold));
  }
  if (rep.valid_folds > 0) rep.mean = sum / static_cast<double>(rep.valid_folds);
  return rep;
}

}  // namespace gpwphm
