#include "vebridge/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <utility>

#include "json.hpp"
#include "vebridge/errors.hpp"

namespace vebridge {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

double parse_double(const std::string& s, std::size_t line_no, const std::string& col) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(Err::ConfigError,
         "line " + std::to_string(line_no) + ": cannot parse '" + s + "' in column " + col);
  }
}

int parse_binary(const std::string& s, std::size_t line_no, const std::string& col, Err err) {
  double v = parse_double(s, line_no, col);
  if (v != 0.0 && v != 1.0)
    fail(err, "line " + std::to_string(line_no) + ": column " + col + " must be 0 or 1, got " + s);
  return static_cast<int>(v);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

MultiTrialData parse_trials_csv(std::istream& in, const CsvSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) fail(Err::EmptySample, "empty input file");
  auto header = split_csv_line(line);

  auto col = [&](const std::string& name) -> int {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  int c_id = col(schema.trial_id), c_w = col(schema.w), c_a = col(schema.a), c_y = col(schema.y);
  int c_delta = col(schema.delta), c_l = col(schema.l);
  const std::pair<int, std::string> required[] = {
      {c_id, schema.trial_id}, {c_w, schema.w}, {c_a, schema.a}, {c_y, schema.y}};
  for (const auto& [idx, name] : required) {
    if (idx < 0) fail(Err::MissingColumn, "required column '" + name + "' not found in header");
  }

  MultiTrialData data;
  data.two_phase = c_delta >= 0;
  std::map<std::string, std::size_t> trial_index;  // id -> position, first-appearance order

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    auto f = split_csv_line(line);
    auto field = [&](int idx) -> std::string {
      return (idx >= 0 && idx < static_cast<int>(f.size())) ? f[idx] : std::string();
    };

    std::string id = field(c_id);
    if (id == schema.star_label) {
      if (!is_blank(field(c_a)) || !is_blank(field(c_y)))
        fail(Err::StarRowHasOutcome, "line " + std::to_string(line_no) +
                                         ": target-population row carries a or y");
      if (is_blank(field(c_w)))
        fail(Err::ConfigError, "line " + std::to_string(line_no) + ": star row missing w");
      data.star_w.push_back(parse_double(field(c_w), line_no, schema.w));
      continue;
    }

    auto [it, inserted] = trial_index.try_emplace(id, data.trials.size());
    if (inserted) data.trials.push_back(TrialSample{id, {}});
    TrialSample& trial = data.trials[it->second];

    ObservationRecord rec;
    if (is_blank(field(c_a)) || is_blank(field(c_y)))
      fail(Err::ConfigError, "line " + std::to_string(line_no) + ": trial row missing a or y");
    rec.a = parse_binary(field(c_a), line_no, schema.a, Err::InvalidTreatment);
    rec.y = parse_binary(field(c_y), line_no, schema.y, Err::InvalidOutcome);
    if (c_delta >= 0 && !is_blank(field(c_delta)))
      rec.delta = parse_binary(field(c_delta), line_no, schema.delta, Err::ConfigError);
    if (c_l >= 0 && !is_blank(field(c_l)))
      rec.l = parse_double(field(c_l), line_no, schema.l);

    bool observed = !rec.delta.has_value() || *rec.delta == 1;
    if (observed) {
      if (is_blank(field(c_w)))
        fail(Err::ConfigError,
             "line " + std::to_string(line_no) + ": observed record (delta=1) missing w");
      rec.w = parse_double(field(c_w), line_no, schema.w);
    } else if (!is_blank(field(c_w))) {
      fail(Err::ConfigError,
           "line " + std::to_string(line_no) + ": record with delta=0 must not carry w");
    }
    trial.records.push_back(rec);
  }

  if (data.star_w.empty()) fail(Err::EmptySample, "no target-population (star) rows");
  if (data.trials.empty()) fail(Err::EmptySample, "no trial rows");
  for (const auto& t : data.trials)
    if (t.records.empty()) fail(Err::EmptySample, "trial '" + t.id + "' has no rows");
  return data;
}

MultiTrialData load_trials(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) fail(Err::ConfigError, "cannot open data file: " + path);
  return parse_trials_csv(in, schema);
}

void serialize_trials(const MultiTrialData& data, std::ostream& out, const CsvSchema& schema) {
  bool with_aux = data.two_phase;
  for (const auto& t : data.trials)
    for (const auto& r : t.records)
      if (r.delta.has_value() || r.l.has_value()) with_aux = true;

  out << schema.trial_id << ',' << schema.w << ',' << schema.a << ',' << schema.y;
  if (with_aux) out << ',' << schema.delta << ',' << schema.l;
  out << '\n';
  for (double w : data.star_w) {
    out << schema.star_label << ',' << fmt_double(w) << ",,";
    if (with_aux) out << ",,";
    out << '\n';
  }
  for (const auto& t : data.trials) {
    for (const auto& r : t.records) {
      out << t.id << ',' << (r.w ? fmt_double(*r.w) : "") << ',' << r.a << ',' << r.y;
      if (with_aux) {
        out << ',' << (r.delta ? std::to_string(*r.delta) : "") << ','
            << (r.l ? fmt_double(*r.l) : "");
      }
      out << '\n';
    }
  }
}

std::string serialize_trials(const MultiTrialData& data, const CsvSchema& schema) {
  std::ostringstream os;
  serialize_trials(data, os, schema);
  return os.str();
}

std::vector<double> validation_grid(const MultiTrialData& data) {
  std::vector<double> grid = data.star_w;
  for (const auto& t : data.trials)
    for (const auto& r : t.records)
      if (r.w) grid.push_back(*r.w);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

ValidatedBounds validate_bounds(const BoundsSpec& spec, const MultiTrialData& data) {
  const std::size_t S = data.num_trials();
  if (spec.ell.size() != S + 1 || spec.uu.size() != S + 1 || spec.vv.size() != S + 1)
    fail(Err::ConfigError, "bounds arrays must have length S+1 = " + std::to_string(S + 1));

  auto grid = validation_grid(data);

  for (double w : grid) {
    double vsum = 0.0;
    for (const auto& v : spec.vv) vsum += v(w);
    if (std::abs(vsum - 1.0) > 1e-10)
      fail(Err::ConvexityViolation, "sum of v-weights at w=" + fmt_double(w) + " is " +
                                        fmt_double(vsum) + ", expected 1");
    for (const BoundFunc* d : {&spec.d0, &spec.d1}) {
      double dv = (*d)(w);
      if (dv < 0.0 || dv > 1.0)
        fail(Err::PseudoRiskOutOfRange,
             "pseudo-trial risk at w=" + fmt_double(w) + " is " + fmt_double(dv));
    }
    // certain separation failure: even the most favorable regressions in
    // [0,1] cannot open a gap of delta_min
    double max_gap = spec.uu[0](w) - spec.ell[0](w);
    for (std::size_t s = 1; s <= S; ++s) max_gap += std::max(0.0, spec.uu[s](w) - spec.ell[s](w));
    if (max_gap < spec.delta_min)
      fail(Err::OrderViolation, "upper and lower risk bounds cannot be separated by delta_min at w=" +
                                    fmt_double(w));
  }
  if (!(spec.delta_min > 0.0)) fail(Err::ConfigError, "delta_min must be positive");

  ValidatedBounds vb;
  vb.spec = spec;

  // univariate path applies when ell_s = c * uu_s for one source- and
  // w-independent c, or when every ell_s vanishes (s = 1..S)
  bool all_ell_zero = true;
  for (std::size_t s = 1; s <= S && all_ell_zero; ++s)
    for (double w : grid)
      if (spec.ell[s](w) != 0.0) {
        all_ell_zero = false;
        break;
      }
  if (all_ell_zero) {
    vb.path = FluctuationPath::Univariate;
    vb.path_multiple = 0.0;
    return vb;
  }

  bool have_c = false;
  double c = 0.0;
  bool proportional = true;
  for (std::size_t s = 1; s <= S && proportional; ++s) {
    for (double w : grid) {
      double u = spec.uu[s](w), e = spec.ell[s](w);
      double scale = std::max({1.0, std::abs(u), std::abs(e)});
      if (u == 0.0) {
        if (std::abs(e) > 1e-12 * scale) {
          proportional = false;
          break;
        }
        continue;
      }
      double ratio = e / u;
      if (!have_c) {
        have_c = true;
        c = ratio;
      } else if (std::abs(e - c * u) > 1e-12 * scale) {
        proportional = false;
        break;
      }
    }
  }
  if (proportional && have_c) {
    vb.path = FluctuationPath::Univariate;
    vb.path_multiple = c;
  } else {
    vb.path = FluctuationPath::Bivariate;
  }
  return vb;
}

namespace {

using nlohmann::json;

BoundFunc parse_bound_func(const json& j, const std::string& path) {
  if (j.is_number()) return BoundFunc(j.get<double>());
  if (j.is_object() && j.contains("x") && j.contains("y")) {
    try {
      return BoundFunc(j.at("x").get<std::vector<double>>(), j.at("y").get<std::vector<double>>());
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      fail(Err::ConfigError, path + ": " + e.what());
    }
  }
  fail(Err::ConfigError, path + ": expected a number or an {\"x\": [...], \"y\": [...]} table");
}

std::vector<BoundFunc> parse_bound_array(const json& j, const std::string& path) {
  if (!j.is_array()) fail(Err::ConfigError, path + ": expected an array");
  std::vector<BoundFunc> out;
  for (std::size_t i = 0; i < j.size(); ++i)
    out.push_back(parse_bound_func(j[i], path + "/" + std::to_string(i)));
  return out;
}

}  // namespace

AnalysisConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail(Err::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }

  AnalysisConfig cfg;
  if (j.contains("bounds")) {
    const json& b = j["bounds"];
    if (b.contains("l")) cfg.bounds.ell = parse_bound_array(b["l"], "/bounds/l");
    if (b.contains("u")) cfg.bounds.uu = parse_bound_array(b["u"], "/bounds/u");
    if (b.contains("v")) cfg.bounds.vv = parse_bound_array(b["v"], "/bounds/v");
    if (b.contains("d0")) cfg.bounds.d0 = parse_bound_func(b["d0"], "/bounds/d0");
    if (b.contains("d1")) cfg.bounds.d1 = parse_bound_func(b["d1"], "/bounds/d1");
    if (b.contains("delta_min")) {
      if (!b["delta_min"].is_number()) fail(Err::ConfigError, "/bounds/delta_min: expected number");
      cfg.bounds.delta_min = b["delta_min"].get<double>();
    }
  }
  auto get_num = [&](const char* key, double& dst, const char* path) {
    if (j.contains(key)) {
      if (!j[key].is_number()) fail(Err::ConfigError, std::string(path) + ": expected number");
      dst = j[key].get<double>();
    }
  };
  if (j.contains("mu_grid")) {
    if (!j["mu_grid"].is_array()) fail(Err::ConfigError, "/mu_grid: expected array");
    cfg.mu_grid = j["mu_grid"].get<std::vector<double>>();
  }
  get_num("z", cfg.z, "/z");
  if (j.contains("folds")) {
    if (!j["folds"].is_number_integer()) fail(Err::ConfigError, "/folds: expected integer");
    cfg.folds = j["folds"].get<int>();
  }
  if (j.contains("learners")) {
    const json& l = j["learners"];
    if (l.contains("outcome")) cfg.learners.outcome = l["outcome"].get<std::vector<std::string>>();
    if (l.contains("propensity"))
      cfg.learners.propensity = l["propensity"].get<std::vector<std::string>>();
  }
  if (j.contains("clips")) {
    const json& c = j["clips"];
    auto grab = [&](const char* key, double& dst) {
      if (c.contains(key)) dst = c[key].get<double>();
    };
    grab("m_eps", cfg.clips.m_eps);
    grab("g_eps", cfg.clips.g_eps);
    grab("ratio_lo", cfg.clips.ratio_lo);
    grab("ratio_hi", cfg.clips.ratio_hi);
    grab("ve_floor", cfg.clips.ve_floor);
  }
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("assume_constant_ve")) cfg.assume_constant_ve = j["assume_constant_ve"].get<bool>();
  if (j.contains("adaptive_resolution"))
    cfg.adaptive_resolution = j["adaptive_resolution"].get<int>();
  if (j.contains("censoring")) {
    const json& c = j["censoring"];
    if (c.contains("known_pi")) {
      const json& kp = c["known_pi"];
      if (kp.is_string() && kp.get<std::string>() == "ncc") {
        // exact design probabilities recovered from the realized counts
        cfg.censoring.mode = CensoringMode::KnownNcc;
      } else if (kp.is_object() && kp.contains("case") && kp.contains("control")) {
        cfg.censoring.mode = CensoringMode::KnownValues;
        cfg.censoring.case_pi = kp["case"].get<std::vector<double>>();
        cfg.censoring.control_pi = kp["control"].get<std::vector<double>>();
      } else {
        fail(Err::ConfigError,
             "/censoring/known_pi: expected \"ncc\" or {\"case\": [...], \"control\": [...]}");
      }
    }
  }
  return cfg;
}

AnalysisConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Err::ConfigError, "cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_json(ss.str());
}

void validate_analysis_config(const AnalysisConfig& cfg) {
  for (std::size_t i = 0; i < cfg.mu_grid.size(); ++i) {
    double mu = cfg.mu_grid[i];
    if (!(mu > 0.0 && mu < 1.0))
      fail(Err::ConfigError, "/mu_grid: values must lie strictly in (0,1)");
    if (i > 0 && !(mu > cfg.mu_grid[i - 1]))
      fail(Err::ConfigError, "/mu_grid: values must be strictly increasing");
  }
  if (!(cfg.z > 0.0)) fail(Err::ConfigError, "/z: must be positive");
  if (cfg.folds < 2) fail(Err::ConfigError, "/folds: must be at least 2");
  if (!(cfg.clips.m_eps > 0.0 && cfg.clips.m_eps < 0.5))
    fail(Err::ConfigError, "/clips/m_eps: must lie in (0, 0.5)");
  if (!(cfg.clips.g_eps > 0.0 && cfg.clips.g_eps < 0.5))
    fail(Err::ConfigError, "/clips/g_eps: must lie in (0, 0.5)");
  if (!(cfg.clips.ratio_lo > 0.0 && cfg.clips.ratio_hi > cfg.clips.ratio_lo))
    fail(Err::ConfigError, "/clips: need 0 < ratio_lo < ratio_hi");
  if (cfg.adaptive_resolution < 1)
    fail(Err::ConfigError, "/adaptive_resolution: must be at least 1");
}

}  // namespace vebridge
