#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "gpwphm/model.hpp"
#include "gpwphm/synth.hpp"

namespace gpwphm::io {

// ---------------------------------------------------------------------------
// Text helpers.
// ---------------------------------------------------------------------------

/// 17 significant digits: enough to round-trip every double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (s.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
    throw InputError(where + ": '" + s + "' is not a finite number");
  return v;
}

inline long long parse_int(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw InputError(where + ": '" + s + "' is not an integer");
  return v;
}

inline bool parse_bool(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw InputError(where + ": '" + s + "' is not a boolean");
}

/// Writes to a temporary sibling and renames it over the target.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw InputError("cannot open '" + tmp.string() + "' for writing");
    os << content;
    os.flush();
    if (!os) throw InputError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw InputError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// First line of every file we write.
inline std::string provenance_comment(std::uint64_t seed, const std::string& command) {
  return "# gpwphm " + std::string(kVersion) + " seed=" + std::to_string(seed) + " command=" + command + "\n";
}

class Fnv1a {
 public:
  void add(const std::string& s) {
    for (unsigned char c : s) {
      h_ ^= c;
      h_ *= 1099511628211ull;
    }
    h_ ^= 0xff;  // field separator
    h_ *= 1099511628211ull;
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
    return buf;
  }

 private:
  std::uint64_t h_ = 14695981039346656037ull;
};

inline std::string data_fingerprint(const std::vector<Matrix>& Ys, const std::vector<SurvivalRecord>& records) {
  Fnv1a f;
  for (const auto& Y : Ys) {
    f.add(std::to_string(Y.rows()) + "x" + std::to_string(Y.cols()));
    for (Eigen::Index i = 0; i < Y.rows(); ++i)
      for (Eigen::Index j = 0; j < Y.cols(); ++j) f.add(format_double(Y(i, j)));
  }
  for (const auto& r : records) f.add(format_double(r.time) + (r.event ? "e" : "c"));
  return f.hex();
}

// ---------------------------------------------------------------------------
// Dataset CSV: id, s1_*, s2_*, ..., [time, event].
// ---------------------------------------------------------------------------

struct Dataset {
  std::vector<std::string> ids;
  std::vector<std::vector<std::string>> columns;  // per source, full header names
  std::vector<Matrix> Ys;
  std::vector<std::vector<bool>> present;         // [source][row]
  std::vector<SurvivalRecord> records;            // empty without survival columns
  std::optional<std::uint64_t> seed;              // from the provenance comment, if any

  std::size_t rows() const { return ids.size(); }
  bool has_survival() const { return !records.empty(); }
  bool complete() const {
    for (const auto& p : present)
      for (bool b : p)
        if (!b) return false;
    return true;
  }

  /// Model input; every source must be present in every row.
  ModelData model_data(bool survival = true) const {
    require(complete(), "dataset has missing sources; they are only allowed for prediction");
    if (survival) require(has_survival(), "dataset has no time/event columns");
    ModelData d;
    d.Ys = Ys;
    d.records = records;
    d.survival = survival;
    d.validate();
    return d;
  }

  /// One row as projection input, with nullopt for missing sources.
  std::vector<std::optional<Vector>> row_observations(std::size_t i) const {
    std::vector<std::optional<Vector>> out;
    for (std::size_t s = 0; s < Ys.size(); ++s) {
      if (present[s][i]) out.emplace_back(Vector(Ys[s].row(static_cast<Eigen::Index>(i)).transpose()));
      else out.emplace_back(std::nullopt);
    }
    return out;
  }
};

struct ReadOptions {
  bool allow_missing_sources = false;
  bool require_survival = true;
};

inline Dataset parse_dataset(const std::string& text, const std::string& name, const ReadOptions& opts = {}) {
  Dataset ds;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  std::vector<std::string> header;
  std::vector<int> col_source;  // -1 id, -2 time, -3 event, else source index
  int time_col = -1, event_col = -1;
  std::vector<std::vector<std::vector<double>>> values;  // [source][row][col]
  auto where = [&](const std::string& what = "") {
    return name + ":" + std::to_string(line_no) + (what.empty() ? "" : " (" + what + ")");
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("seed=");
      if (header.empty() && pos != std::string::npos && !ds.seed)
        ds.seed = static_cast<std::uint64_t>(parse_int(split(line.substr(pos + 5), ' ').front(), where("seed")));
      continue;
    }
    auto cells = split(line, ',');
    for (auto& c : cells) c = trim(c);
    if (header.empty()) {
      header = cells;
      require(!header.empty() && header[0] == "id", where() + ": first header column must be 'id'");
      std::map<int, int> seen;
      for (std::size_t c = 1; c < header.size(); ++c) {
        const std::string& h = header[c];
        if (h == "time") {
          require(time_col < 0, where() + ": duplicate 'time' column");
          time_col = static_cast<int>(c);
          col_source.push_back(-2);
          continue;
        }
        if (h == "event") {
          require(event_col < 0, where() + ": duplicate 'event' column");
          event_col = static_cast<int>(c);
          col_source.push_back(-3);
          continue;
        }
        const auto us = h.find('_');
        require(h.size() > 3 && h[0] == 's' && us != std::string::npos && us > 1 && us + 1 < h.size(),
                where() + ": column '" + h + "' is not of the form s<k>_<name>, time or event");
        const long long k = parse_int(h.substr(1, us - 1), where("column '" + h + "'"));
        require(k >= 1 && k <= 1000, where() + ": source number out of range in '" + h + "'");
        col_source.push_back(static_cast<int>(k - 1));
        seen[static_cast<int>(k - 1)] += 1;
      }
      col_source.insert(col_source.begin(), -1);
      require((time_col < 0) == (event_col < 0), where() + ": 'time' and 'event' columns must appear together");
      if (opts.require_survival) require(time_col >= 0, where() + ": 'time' and 'event' columns are required");
      require(!seen.empty(), where() + ": no source columns (s1_*)");
      require(seen.rbegin()->first + 1 == static_cast<int>(seen.size()),
              where() + ": source numbers must run s1, s2, ... without gaps");
      ds.columns.resize(seen.size());
      for (std::size_t c = 1; c < header.size(); ++c)
        if (col_source[c] >= 0) ds.columns[static_cast<std::size_t>(col_source[c])].push_back(header[c]);
      values.resize(seen.size());
      ds.present.resize(seen.size());
      continue;
    }
    require(cells.size() == header.size(), where() + ": expected " + std::to_string(header.size()) + " cells, got " +
                                               std::to_string(cells.size()));
    ds.ids.push_back(cells[0]);
    std::vector<std::vector<double>> row(values.size());
    std::vector<int> filled(values.size(), 0), empty(values.size(), 0);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const int s = col_source[c];
      if (s < 0) continue;
      if (cells[c].empty()) {
        ++empty[static_cast<std::size_t>(s)];
        row[static_cast<std::size_t>(s)].push_back(0.0);
      } else {
        ++filled[static_cast<std::size_t>(s)];
        row[static_cast<std::size_t>(s)].push_back(parse_double(cells[c], where("column '" + header[c] + "'")));
      }
    }
    for (std::size_t s = 0; s < values.size(); ++s) {
      const bool missing = empty[s] > 0;
      if (missing) {
        require(filled[s] == 0, where() + ": source s" + std::to_string(s + 1) +
                                    " is partially missing; a source must be complete or entirely empty");
        require(opts.allow_missing_sources, where() + ": missing cells in source s" + std::to_string(s + 1));
      }
      ds.present[s].push_back(!missing);
      values[s].push_back(std::move(row[s]));
    }
    if (time_col >= 0) {
      SurvivalRecord r;
      r.time = parse_double(cells[static_cast<std::size_t>(time_col)], where("time"));
      require(r.time > 0.0, where() + ": time must be > 0");
      const std::string& e = cells[static_cast<std::size_t>(event_col)];
      require(e == "0" || e == "1", where() + ": event must be 0 or 1, got '" + e + "'");
      r.event = e == "1";
      ds.records.push_back(r);
    }
  }
  require(!header.empty(), name + ": empty file (no header row)");
  require(!ds.ids.empty(), name + ": no data rows");
  for (std::size_t s = 0; s < values.size(); ++s) {
    Matrix Y(static_cast<Eigen::Index>(values[s].size()), static_cast<Eigen::Index>(ds.columns[s].size()));
    for (std::size_t i = 0; i < values[s].size(); ++i)
      for (std::size_t j = 0; j < values[s][i].size(); ++j)
        Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[s][i][j];
    ds.Ys.push_back(std::move(Y));
  }
  for (std::size_t i = 0; i < ds.ids.size(); ++i) {
    bool any = false;
    for (const auto& p : ds.present) any = any || p[i];
    require(any, name + ": row '" + ds.ids[i] + "' has no observed source");
  }
  return ds;
}

inline Dataset read_dataset(const std::filesystem::path& path, const ReadOptions& opts = {}) {
  return parse_dataset(read_file(path), path.string(), opts);
}

inline std::vector<std::string> default_columns(std::size_t source, Eigen::Index d) {
  std::vector<std::string> cols;
  for (Eigen::Index j = 0; j < d; ++j) cols.push_back("s" + std::to_string(source + 1) + "_v" + std::to_string(j + 1));
  return cols;
}

inline Dataset make_dataset(const std::vector<Matrix>& Ys, const std::vector<SurvivalRecord>& records) {
  Dataset ds;
  ds.Ys = Ys;
  ds.records = records;
  const std::size_t N = static_cast<std::size_t>(Ys.front().rows());
  for (std::size_t i = 0; i < N; ++i) ds.ids.push_back(std::to_string(i + 1));
  for (std::size_t s = 0; s < Ys.size(); ++s) {
    ds.columns.push_back(default_columns(s, Ys[s].cols()));
    ds.present.emplace_back(N, true);
  }
  return ds;
}

inline std::string format_dataset(const Dataset& ds, const std::string& comment) {
  std::ostringstream os;
  os << comment;
  os << "id";
  for (const auto& cols : ds.columns)
    for (const auto& c : cols) os << ',' << c;
  if (ds.has_survival()) os << ",time,event";
  os << '\n';
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    os << ds.ids[i];
    for (std::size_t s = 0; s < ds.Ys.size(); ++s)
      for (Eigen::Index j = 0; j < ds.Ys[s].cols(); ++j)
        os << ',' << (ds.present[s][i] ? format_double(ds.Ys[s](static_cast<Eigen::Index>(i), j)) : "");
    if (ds.has_survival()) os << ',' << format_double(ds.records[i].time) << ',' << (ds.records[i].event ? 1 : 0);
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Key-value documents (model files, truth sidecars, config files).
// ---------------------------------------------------------------------------

struct KvEntry {
  std::string key, value;
  int line = 0;
};

class KvDocument {
 public:
  void set(const std::string& key, const std::string& value) {
    require(key.find_first_of("=\n") == std::string::npos && value.find('\n') == std::string::npos,
            "invalid key-value entry '" + key + "'");
    index_[key] = entries_.size();
    entries_.push_back({key, value, 0});
  }
  void set(const std::string& key, double v) { set(key, format_double(v)); }
  void set_int(const std::string& key, long long v) { set(key, std::to_string(v)); }
  void set_vector(const std::string& key, const Vector& v) {
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v(i));
    set(key, s);
  }
  /// Row-major with a separate shape entry.
  void set_matrix(const std::string& key, const Matrix& m) {
    set(key + ".shape", std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    std::string s;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) s += (i || j ? "," : "") + format_double(m(i, j));
    set(key, s);
  }

  bool has(const std::string& key) const { return index_.count(key) > 0; }
  const KvEntry& entry(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw InputError(source_ + ": missing key '" + key + "'");
    return entries_[it->second];
  }
  std::string where(const std::string& key) const {
    return source_ + ":" + std::to_string(entry(key).line) + " (" + key + ")";
  }
  const std::string& get(const std::string& key) const { return entry(key).value; }
  double get_double(const std::string& key) const { return parse_double(get(key), where(key)); }
  long long get_int(const std::string& key) const { return parse_int(get(key), where(key)); }
  bool get_bool(const std::string& key) const { return parse_bool(get(key), where(key)); }
  Vector get_vector(const std::string& key) const {
    const std::string& v = get(key);
    if (trim(v).empty()) return Vector(0);
    const auto parts = split(v, ',');
    Vector out(static_cast<Eigen::Index>(parts.size()));
    for (std::size_t i = 0; i < parts.size(); ++i) out(static_cast<Eigen::Index>(i)) = parse_double(parts[i], where(key));
    return out;
  }
  Matrix get_matrix(const std::string& key) const {
    const auto shape = split(get(key + ".shape"), 'x');
    require(shape.size() == 2, where(key + ".shape") + ": expected <rows>x<cols>");
    const long long r = parse_int(shape[0], where(key + ".shape")), c = parse_int(shape[1], where(key + ".shape"));
    require(r >= 0 && c >= 0, where(key + ".shape") + ": negative shape");
    const Vector flat = get_vector(key);
    require(flat.size() == r * c, where(key) + ": expected " + std::to_string(r * c) + " values, got " +
                                      std::to_string(flat.size()));
    Matrix m(r, c);
    for (long long i = 0; i < r; ++i)
      for (long long j = 0; j < c; ++j) m(i, j) = flat(i * c + j);
    return m;
  }
  const std::vector<KvEntry>& entries() const { return entries_; }

  std::string format(const std::string& comment) const {
    std::string s = comment;
    for (const auto& e : entries_) s += e.key + "=" + e.value + "\n";
    return s;
  }

  /// key=value per line; '#' starts a comment line; duplicate keys rejected.
  static KvDocument parse(const std::string& text, const std::string& source) {
    KvDocument doc;
    doc.source_ = source;
    std::istringstream is(text);
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
      ++n;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw InputError(source + ":" + std::to_string(n) + ": expected key=value");
      const std::string key = trim(t.substr(0, eq));
      if (key.empty()) throw InputError(source + ":" + std::to_string(n) + ": empty key");
      if (doc.index_.count(key))
        throw InputError(source + ":" + std::to_string(n) + ": duplicate key '" + key + "' (first on line " +
                         std::to_string(doc.entries_[doc.index_[key]].line) + ")");
      doc.index_[key] = doc.entries_.size();
      doc.entries_.push_back({key, trim(t.substr(eq + 1)), n});
    }
    return doc;
  }
  static KvDocument load(const std::filesystem::path& path) { return parse(read_file(path), path.string()); }

 private:
  std::vector<KvEntry> entries_;
  std::map<std::string, std::size_t> index_;
  std::string source_ = "<memory>";
};

// ---------------------------------------------------------------------------
// Model files.
// ---------------------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

struct SavedModel {
  ModelFit fit;
  std::vector<std::vector<std::string>> columns;  // training schema per source
  std::uint64_t seed = 0;
  std::string fingerprint;
};

inline std::string format_model(const ModelFit& fit, const std::vector<std::vector<std::string>>& columns,
                                std::uint64_t seed) {
  require(columns.size() == fit.specs.size(), "model: one column list per source is required");
  KvDocument d;
  d.set("format", "gpwphm-model");
  d.set_int("format_version", kModelFormatVersion);
  d.set("tool_version", kVersion);
  d.set_int("seed", static_cast<long long>(seed));
  d.set_int("N", fit.N());
  d.set_int("q", fit.q());
  d.set_int("sources", static_cast<long long>(fit.specs.size()));
  for (std::size_t s = 0; s < fit.specs.size(); ++s) {
    const std::string p = "source." + std::to_string(s + 1) + ".";
    d.set(p + "kernel", to_string(fit.specs[s].family));
    d.set(p + "sigma", fit.specs[s].sigma);
    d.set(p + "lengthscale", fit.specs[s].lengthscale);
    d.set(p + "noise_var", fit.specs[s].noise_var);
    std::string cols;
    for (std::size_t j = 0; j < columns[s].size(); ++j) cols += (j ? ";" : "") + columns[s][j];
    d.set(p + "columns", cols);
    d.set_matrix(p + "Y", fit.data.Ys[s]);
  }
  const PriorConfig& pr = fit.priors;
  d.set("priors.kappa0", pr.kappa0);
  d.set("priors.alpha0", pr.alpha0);
  d.set("priors.kappa1", pr.kappa1);
  d.set("priors.alpha1", pr.alpha1);
  d.set("priors.sigma0", pr.sigma0);
  d.set("priors.sigma1", pr.sigma1);
  d.set("priors.enabled", pr.enabled ? "1" : "0");
  d.set("survival", fit.data.survival ? "1" : "0");
  Vector times(static_cast<Eigen::Index>(fit.data.records.size())), events(times.size());
  for (std::size_t i = 0; i < fit.data.records.size(); ++i) {
    times(static_cast<Eigen::Index>(i)) = fit.data.records[i].time;
    events(static_cast<Eigen::Index>(i)) = fit.data.records[i].event ? 1.0 : 0.0;
  }
  d.set_vector("records.time", times);
  d.set_vector("records.event", events);
  d.set_matrix("X", fit.latent.X);
  d.set_vector("b", fit.wphm.b);
  d.set("rho", fit.wphm.rho);
  d.set("nu", fit.wphm.nu);
  d.set("rho_lb", fit.wphm.rho_lb);
  d.set("nu_lb", fit.wphm.nu_lb);
  d.set("nll", fit.nll);
  d.set("hyp_nll", fit.hyp_nll);
  d.set("hessian_logdet", fit.hessian_logdet);
  d.set_int("free_param_count", fit.free_param_count);
  d.set("grad_norm", fit.grad_norm);
  d.set("converged", fit.converged ? "1" : "0");
  d.set("hessian_pd", fit.hessian_pd ? "1" : "0");
  d.set_int("restarts_used", fit.restarts_used);
  d.set("fingerprint", data_fingerprint(fit.data.Ys, fit.data.records));
  return d.format(provenance_comment(seed, "fit"));
}

inline void save_model(const std::filesystem::path& path, const ModelFit& fit,
                       const std::vector<std::vector<std::string>>& columns, std::uint64_t seed) {
  atomic_write(path, format_model(fit, columns, seed));
}

inline double parse_number_or_inf(const KvDocument& d, const std::string& key) {
  const std::string v = trim(d.get(key));
  if (v == "inf") return std::numeric_limits<double>::infinity();
  if (v == "nan" || v == "-nan") return std::numeric_limits<double>::quiet_NaN();
  return d.get_double(key);
}

inline SavedModel parse_model(const KvDocument& d) {
  require(d.get("format") == "gpwphm-model", d.where("format") + ": not a model file");
  require(d.get_int("format_version") == kModelFormatVersion,
          d.where("format_version") + ": unsupported model format version");
  SavedModel m;
  m.seed = static_cast<std::uint64_t>(d.get_int("seed"));
  const long long S = d.get_int("sources");
  require(S >= 1, d.where("sources") + ": need at least one source");
  ModelFit& f = m.fit;
  for (long long s = 0; s < S; ++s) {
    const std::string p = "source." + std::to_string(s + 1) + ".";
    KernelSpec k;
    k.family = kernel_family_from_string(d.get(p + "kernel"));
    k.sigma = d.get_double(p + "sigma");
    k.lengthscale = d.get_double(p + "lengthscale");
    k.noise_var = d.get_double(p + "noise_var");
    k.validate();
    f.specs.push_back(k);
    m.columns.push_back(split(d.get(p + "columns"), ';'));
    f.data.Ys.push_back(d.get_matrix(p + "Y"));
    require(static_cast<Eigen::Index>(m.columns.back().size()) == f.data.Ys.back().cols(),
            d.where(p + "columns") + ": column count does not match the stored data");
  }
  PriorConfig& pr = f.priors;
  pr.kappa0 = d.get_double("priors.kappa0");
  pr.alpha0 = d.get_double("priors.alpha0");
  pr.kappa1 = d.get_double("priors.kappa1");
  pr.alpha1 = d.get_double("priors.alpha1");
  pr.sigma0 = d.get_double("priors.sigma0");
  pr.sigma1 = d.get_double("priors.sigma1");
  pr.enabled = d.get_bool("priors.enabled");
  pr.validate();
  f.data.survival = d.get_bool("survival");
  const Vector times = d.get_vector("records.time"), events = d.get_vector("records.event");
  require(times.size() == events.size(), d.where("records.event") + ": length differs from records.time");
  for (Eigen::Index i = 0; i < times.size(); ++i) {
    require(events(i) == 0.0 || events(i) == 1.0, d.where("records.event") + ": values must be 0 or 1");
    f.data.records.push_back({times(i), events(i) == 1.0});
  }
  f.data.validate();
  const Matrix X = d.get_matrix("X");
  require(X.rows() == d.get_int("N") && X.cols() == d.get_int("q"), d.where("X") + ": shape disagrees with N and q");
  require(X.rows() == f.data.N(), d.where("X") + ": row count disagrees with the stored data");
  f.latent = LatentState(X);
  require(f.latent.X == X, d.where("X") + ": pinned entries must be zero");
  f.wphm.b = d.get_vector("b");
  require(f.wphm.b.size() == X.cols(), d.where("b") + ": length must equal q");
  f.wphm.rho_lb = d.get_double("rho_lb");
  f.wphm.nu_lb = d.get_double("nu_lb");
  f.wphm.rho = d.get_double("rho");
  f.wphm.nu = d.get_double("nu");
  require(f.wphm.rho > 1.0 + f.wphm.rho_lb && f.wphm.nu > 1.0 + f.wphm.nu_lb,
          d.where("rho") + ": rho and nu must exceed 1 plus their lower bounds");
  f.nll = d.get_double("nll");
  f.hyp_nll = parse_number_or_inf(d, "hyp_nll");
  f.hessian_logdet = parse_number_or_inf(d, "hessian_logdet");
  f.free_param_count = d.get_int("free_param_count");
  f.grad_norm = parse_number_or_inf(d, "grad_norm");
  f.converged = d.get_bool("converged");
  f.hessian_pd = d.get_bool("hessian_pd");
  f.restarts_used = static_cast<int>(d.get_int("restarts_used"));
  f.seed = m.seed;
  m.fingerprint = d.get("fingerprint");
  require(m.fingerprint == data_fingerprint(f.data.Ys, f.data.records),
          d.where("fingerprint") + ": stored training data do not match the fingerprint (file corrupted or edited)");
  return m;
}

inline SavedModel load_model(const std::filesystem::path& path) { return parse_model(KvDocument::load(path)); }

/// Rejects prediction input whose source layout differs from the training data.
inline void check_schema(const SavedModel& m, const Dataset& ds) {
  require(ds.columns.size() == m.columns.size(), "schema mismatch: model has " + std::to_string(m.columns.size()) +
                                                     " sources, data has " + std::to_string(ds.columns.size()) +
                                                     " (model fingerprint " + m.fingerprint + ")");
  for (std::size_t s = 0; s < m.columns.size(); ++s)
    require(ds.columns[s] == m.columns[s], "schema mismatch in source s" + std::to_string(s + 1) +
                                               ": columns differ from the training data (model fingerprint " +
                                               m.fingerprint + ")");
}

// ---------------------------------------------------------------------------
// Truth sidecar written next to simulated data.
// ---------------------------------------------------------------------------

inline std::string component_name(PatternComponent c) {
  switch (c) {
    case PatternComponent::OuterCircle: return "outer";
    case PatternComponent::InnerCircle: return "inner";
    case PatternComponent::LineA: return "line_a";
    case PatternComponent::LineB: return "line_b";
  }
  return "?";
}

inline PatternComponent component_from_name(const std::string& s) {
  if (s == "outer") return PatternComponent::OuterCircle;
  if (s == "inner") return PatternComponent::InnerCircle;
  if (s == "line_a") return PatternComponent::LineA;
  if (s == "line_b") return PatternComponent::LineB;
  throw InputError("unknown pattern component '" + s + "'");
}

inline std::string format_truth(const SyntheticBundle& b) {
  const SimulationConfig& c = b.config;
  KvDocument d;
  d.set("format", "gpwphm-truth");
  d.set("tool_version", kVersion);
  d.set_int("seed", static_cast<long long>(c.seed));
  d.set("latents", c.use_pattern ? "pattern" : "gaussian");
  d.set_matrix("X_true", b.X_true);
  std::string comp;
  for (std::size_t i = 0; i < b.component.size(); ++i) comp += (i ? "," : "") + component_name(b.component[i]);
  d.set("component", comp);
  d.set_int("sources", static_cast<long long>(c.sources.size()));
  for (std::size_t s = 0; s < c.sources.size(); ++s) {
    const std::string p = "source." + std::to_string(s + 1) + ".";
    d.set(p + "kernel", to_string(c.sources[s].kernel.family));
    d.set(p + "sigma", c.sources[s].kernel.sigma);
    d.set(p + "lengthscale", c.sources[s].kernel.lengthscale);
    d.set(p + "noise_var", c.sources[s].kernel.noise_var);
    d.set_int(p + "d", c.sources[s].d);
  }
  d.set_vector("b", c.b);
  d.set("rho", c.rho);
  d.set("nu", c.nu);
  d.set("censor_frac", c.censor_frac);
  d.set_vector("event_times", b.event_times);
  return d.format(provenance_comment(c.seed, "simulate"));
}

struct Truth {
  Matrix X_true;
  std::vector<PatternComponent> component;
  std::uint64_t seed = 0;
};

inline Truth load_truth(const std::filesystem::path& path) {
  const KvDocument d = KvDocument::load(path);
  require(d.get("format") == "gpwphm-truth", d.where("format") + ": not a truth file");
  Truth t;
  t.X_true = d.get_matrix("X_true");
  t.seed = static_cast<std::uint64_t>(d.get_int("seed"));
  const std::string comp = trim(d.get("component"));
  if (!comp.empty())
    for (const auto& s : split(comp, ',')) t.component.push_back(component_from_name(trim(s)));
  return t;
}

}  // namespace gpwphm::io
