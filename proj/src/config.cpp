#include "phydiff/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <variant>

#include "phydiff/csv.hpp"
#include "phydiff/errors.hpp"

namespace phydiff {

std::string scenario_name(Scenario s) { return s == Scenario::OfdmDetect ? "ofdm_detect" : "pn_estimate"; }

std::string ground_truth_name(GroundTruth g) { return g == GroundTruth::Lmmse ? "gt1" : "gt2"; }

namespace {

// ---------------------------------------------------------------------------
// TOML subset: [section] headers, key = value, values are integers, floats,
// "strings", true/false or flat arrays of numbers. '#' starts a comment
// outside strings.

struct Value {
  enum class Kind { Integer, Float, String, Bool, Array } kind = Kind::Integer;
  long long i = 0;
  double f = 0.0;
  std::string s;
  bool b = false;
  std::vector<Value> items;
};

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

Value parse_scalar(const std::string& tok, const std::string& where) {
  Value v;
  if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"') {
    v.kind = Value::Kind::String;
    v.s = tok.substr(1, tok.size() - 2);
    if (v.s.find('"') != std::string::npos) throw ConfigError(where + ": malformed string");
    return v;
  }
  if (tok == "true" || tok == "false") {
    v.kind = Value::Kind::Bool;
    v.b = tok == "true";
    return v;
  }
  const bool looks_float = tok.find_first_of(".eEn") != std::string::npos;  // n: nan/inf are rejected below
  try {
    std::size_t used = 0;
    if (!looks_float) {
      v.kind = Value::Kind::Integer;
      v.i = std::stoll(tok, &used);
    } else {
      v.kind = Value::Kind::Float;
      v.f = std::stod(tok, &used);
      if (!std::isfinite(v.f)) throw std::invalid_argument(tok);
    }
    if (used != tok.size() || tok.empty()) throw std::invalid_argument(tok);
  } catch (const std::exception&) {
    throw ConfigError(where + ": cannot parse value '" + tok + "'");
  }
  return v;
}

Value parse_value(const std::string& raw, const std::string& where) {
  const std::string tok = trim(raw);
  if (tok.empty()) throw ConfigError(where + ": missing value");
  if (tok.front() != '[') return parse_scalar(tok, where);
  if (tok.back() != ']') throw ConfigError(where + ": unterminated array");
  Value v;
  v.kind = Value::Kind::Array;
  const std::string body = trim(tok.substr(1, tok.size() - 2));
  if (body.empty()) return v;
  std::istringstream in(body);
  std::string item;
  while (std::getline(in, item, ',')) {
    Value e = parse_scalar(trim(item), where);
    if (e.kind != Value::Kind::Integer && e.kind != Value::Kind::Float) {
      throw ConfigError(where + ": arrays hold numbers only");
    }
    v.items.push_back(e);
  }
  return v;
}

using Document = std::map<std::string, std::map<std::string, Value>>;

Document parse_document(const std::string& text) {
  Document doc;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string l = trim(strip_comment(line));
    if (l.empty()) continue;
    const std::string at = "line " + std::to_string(lineno);
    if (l.front() == '[') {
      if (l.back() != ']') throw ConfigError(at + ": malformed section header");
      section = trim(l.substr(1, l.size() - 2));
      if (section.empty()) throw ConfigError(at + ": empty section name");
      doc[section];
      continue;
    }
    const auto eq = l.find('=');
    if (eq == std::string::npos) throw ConfigError(at + ": expected key = value");
    const std::string key = trim(l.substr(0, eq));
    if (key.empty()) throw ConfigError(at + ": empty key");
    if (section.empty()) throw ConfigError(key + ": key outside any [section]");
    const std::string name = section + "." + key;
    auto& tab = doc[section];
    if (tab.count(key) != 0) throw ConfigError(name + ": duplicate key");
    tab[key] = parse_value(l.substr(eq + 1), name);
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Typed accessors

double as_double(const Value& v, const std::string& name) {
  if (v.kind == Value::Kind::Float) return v.f;
  if (v.kind == Value::Kind::Integer) return static_cast<double>(v.i);
  throw ConfigError(name + ": expected a number");
}

long long as_int(const Value& v, const std::string& name) {
  if (v.kind != Value::Kind::Integer) throw ConfigError(name + ": expected an integer");
  return v.i;
}

std::size_t as_count(const Value& v, const std::string& name) {
  const long long i = as_int(v, name);
  if (i < 0) throw ConfigError(name + ": must be non-negative");
  return static_cast<std::size_t>(i);
}

std::string as_string(const Value& v, const std::string& name) {
  if (v.kind != Value::Kind::String) throw ConfigError(name + ": expected a string");
  return v.s;
}

bool as_bool(const Value& v, const std::string& name) {
  if (v.kind != Value::Kind::Bool) throw ConfigError(name + ": expected true or false");
  return v.b;
}

std::vector<double> as_doubles(const Value& v, const std::string& name) {
  if (v.kind != Value::Kind::Array) throw ConfigError(name + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& e : v.items) out.push_back(as_double(e, name));
  return out;
}

std::vector<std::size_t> as_counts(const Value& v, const std::string& name) {
  if (v.kind != Value::Kind::Array) throw ConfigError(name + ": expected an array of integers");
  std::vector<std::size_t> out;
  for (const auto& e : v.items) out.push_back(as_count(e, name));
  return out;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

template <class T>
std::string join(const std::vector<T>& xs, const std::function<std::string(const T&)>& fmt) {
  std::string out = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + fmt(xs[i]);
  return out + "]";
}

std::string fmt_doubles(const std::vector<double>& xs) {
  return join<double>(xs, [](const double& d) { return format_double(d); });
}

std::string fmt_counts(const std::vector<std::size_t>& xs) {
  return join<std::size_t>(xs, [](const std::size_t& n) { return std::to_string(n); });
}

// Output of format_double that parse_scalar reads as a float.
std::string fmt_float(double d) {
  std::string s = format_double(d);
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

/// One key of the file: where it lives, how to read it and how to write it.
struct Field {
  std::string section;
  std::string key;
  std::function<void(ExperimentConfig&, const Value&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  using V = Value;
  using S = std::string;
  static const std::vector<Field> table = {
      {"experiment", "scenario",
       [](C& c, const V& v, const S& n) {
         const S s = as_string(v, n);
         if (s == "ofdm_detect") c.scenario = Scenario::OfdmDetect;
         else if (s == "pn_estimate") c.scenario = Scenario::PnEstimate;
         else throw ConfigError(n + ": expected \"ofdm_detect\" or \"pn_estimate\"");
       },
       [](const C& c) { return quote(scenario_name(c.scenario)); }},
      {"experiment", "seed", [](C& c, const V& v, const S& n) { c.seed = as_count(v, n); },
       [](const C& c) { return std::to_string(c.seed); }},
      {"experiment", "out_dir", [](C& c, const V& v, const S& n) { c.out_dir = as_string(v, n); },
       [](const C& c) { return quote(c.out_dir); }},

      {"schedule", "steps", [](C& c, const V& v, const S& n) { c.diffusion_steps = static_cast<int>(as_int(v, n)); },
       [](const C& c) { return std::to_string(c.diffusion_steps); }},
      {"schedule", "beta_min", [](C& c, const V& v, const S& n) { c.beta_min = as_double(v, n); },
       [](const C& c) { return fmt_float(c.beta_min); }},
      {"schedule", "beta_max", [](C& c, const V& v, const S& n) { c.beta_max = as_double(v, n); },
       [](const C& c) { return fmt_float(c.beta_max); }},

      {"sampler", "steps", [](C& c, const V& v, const S& n) { c.sampler_steps = static_cast<int>(as_int(v, n)); },
       [](const C& c) { return std::to_string(c.sampler_steps); }},
      {"sampler", "eta", [](C& c, const V& v, const S& n) { c.eta = as_double(v, n); },
       [](const C& c) { return fmt_float(c.eta); }},

      {"npnn", "q1", [](C& c, const V& v, const S& n) { c.q1 = as_count(v, n); },
       [](const C& c) { return std::to_string(c.q1); }},
      {"npnn", "q2", [](C& c, const V& v, const S& n) { c.q2 = as_count(v, n); },
       [](const C& c) { return std::to_string(c.q2); }},
      {"npnn", "q_last", [](C& c, const V& v, const S& n) { c.q_last = as_count(v, n); },
       [](const C& c) { return std::to_string(c.q_last); }},
      {"npnn", "kernel",
       [](C& c, const V& v, const S& n) {
         const auto k = as_counts(v, n);
         if (k.size() != 2) throw ConfigError(n + ": expected [height, width]");
         c.kernel_h = k[0];
         c.kernel_w = k[1];
       },
       [](const C& c) { return fmt_counts({c.kernel_h, c.kernel_w}); }},
      {"npnn", "time_dim", [](C& c, const V& v, const S& n) { c.time_dim = as_count(v, n); },
       [](const C& c) { return std::to_string(c.time_dim); }},
      {"npnn", "max_period", [](C& c, const V& v, const S& n) { c.max_period = as_double(v, n); },
       [](const C& c) { return fmt_float(c.max_period); }},
      {"npnn", "base_width", [](C& c, const V& v, const S& n) { c.base_width = as_count(v, n); },
       [](const C& c) { return std::to_string(c.base_width); }},

      {"train", "learning_rate", [](C& c, const V& v, const S& n) { c.learning_rate = as_double(v, n); },
       [](const C& c) { return fmt_float(c.learning_rate); }},
      {"train", "steps", [](C& c, const V& v, const S& n) { c.train_steps = static_cast<long>(as_int(v, n)); },
       [](const C& c) { return std::to_string(c.train_steps); }},
      {"train", "batch_size", [](C& c, const V& v, const S& n) { c.batch_size = as_count(v, n); },
       [](const C& c) { return std::to_string(c.batch_size); }},
      {"train", "snr_min_db", [](C& c, const V& v, const S& n) { c.train_snr_min_db = as_double(v, n); },
       [](const C& c) { return fmt_float(c.train_snr_min_db); }},
      {"train", "snr_max_db", [](C& c, const V& v, const S& n) { c.train_snr_max_db = as_double(v, n); },
       [](const C& c) { return fmt_float(c.train_snr_max_db); }},
      {"train", "ground_truth",
       [](C& c, const V& v, const S& n) {
         const S s = as_string(v, n);
         if (s == "gt1") c.ground_truth = GroundTruth::Lmmse;
         else if (s == "gt2") c.ground_truth = GroundTruth::Transmitted;
         else throw ConfigError(n + ": expected \"gt1\" or \"gt2\"");
       },
       [](const C& c) { return quote(ground_truth_name(c.ground_truth)); }},

      {"ofdm", "n_fft", [](C& c, const V& v, const S& n) { c.ofdm.n_fft = as_count(v, n); },
       [](const C& c) { return std::to_string(c.ofdm.n_fft); }},
      {"ofdm", "n_sym", [](C& c, const V& v, const S& n) { c.ofdm.n_sym = as_count(v, n); },
       [](const C& c) { return std::to_string(c.ofdm.n_sym); }},
      {"ofdm", "cp_len", [](C& c, const V& v, const S& n) { c.ofdm.cp_len = as_count(v, n); },
       [](const C& c) { return std::to_string(c.ofdm.cp_len); }},
      {"ofdm", "scs_hz", [](C& c, const V& v, const S& n) { c.ofdm.scs_hz = as_double(v, n); },
       [](const C& c) { return fmt_float(c.ofdm.scs_hz); }},
      {"ofdm", "n_rx", [](C& c, const V& v, const S& n) { c.ofdm.n_rx = as_count(v, n); },
       [](const C& c) { return std::to_string(c.ofdm.n_rx); }},
      {"ofdm", "data_order", [](C& c, const V& v, const S& n) { c.ofdm.data_order = static_cast<int>(as_int(v, n)); },
       [](const C& c) { return std::to_string(c.ofdm.data_order); }},
      {"ofdm", "pilot_order",
       [](C& c, const V& v, const S& n) { c.ofdm.pilot_order = static_cast<int>(as_int(v, n)); },
       [](const C& c) { return std::to_string(c.ofdm.pilot_order); }},
      {"ofdm", "pilot_symbols", [](C& c, const V& v, const S& n) { c.ofdm.pilot_symbols = as_counts(v, n); },
       [](const C& c) { return fmt_counts(c.ofdm.pilot_symbols); }},
      {"ofdm", "max_delay_ns", [](C& c, const V& v, const S& n) {
         c.max_delay_ns = as_double(v, n);
         c.ofdm.max_delay_s = c.max_delay_ns * 1e-9;
       },
       [](const C& c) { return fmt_float(c.max_delay_ns); }},
      {"ofdm", "profile", [](C& c, const V& v, const S& n) { c.profile_path = as_string(v, n); },
       [](const C& c) { return quote(c.profile_path); }},

      {"pn", "section_len", [](C& c, const V& v, const S& n) { c.pn.section_len = as_count(v, n); },
       [](const C& c) { return std::to_string(c.pn.section_len); }},
      {"pn", "data_order", [](C& c, const V& v, const S& n) { c.pn.data_order = static_cast<int>(as_int(v, n)); },
       [](const C& c) { return std::to_string(c.pn.data_order); }},
      {"pn", "level_dbchz", [](C& c, const V& v, const S& n) { c.pn.level_dbchz = as_double(v, n); },
       [](const C& c) { return fmt_float(c.pn.level_dbchz); }},
      {"pn", "offset_hz", [](C& c, const V& v, const S& n) { c.pn.offset_hz = as_double(v, n); },
       [](const C& c) { return fmt_float(c.pn.offset_hz); }},
      {"pn", "symbol_rate", [](C& c, const V& v, const S& n) { c.pn.symbol_rate = as_double(v, n); },
       [](const C& c) { return fmt_float(c.pn.symbol_rate); }},

      {"eval", "snr_db", [](C& c, const V& v, const S& n) { c.eval_snr_db = as_doubles(v, n); },
       [](const C& c) { return fmt_doubles(c.eval_snr_db); }},
      {"eval", "frames", [](C& c, const V& v, const S& n) { c.eval_frames = as_count(v, n); },
       [](const C& c) { return std::to_string(c.eval_frames); }},
      {"eval", "pn_levels_dbchz", [](C& c, const V& v, const S& n) { c.pn_levels_dbchz = as_doubles(v, n); },
       [](const C& c) { return fmt_doubles(c.pn_levels_dbchz); }},
      {"eval", "trace", [](C& c, const V& v, const S& n) { c.trace = as_bool(v, n); },
       [](const C& c) { return std::string(c.trace ? "true" : "false"); }},
  };
  return table;
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

// Runs a module validator and prefixes its message with the section name.
template <class F>
void check_block(const std::string& section, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  require(diffusion_steps >= 1, "schedule.steps", "must be at least 1");
  require(beta_min > 0.0, "schedule.beta_min", "must be positive");
  require(beta_max < 1.0, "schedule.beta_max", "must be below 1");
  require(beta_min < beta_max, "schedule.beta_min", "must be smaller than schedule.beta_max");
  require(sampler_steps >= 1, "sampler.steps", "must be at least 1");
  require(sampler_steps <= diffusion_steps, "sampler.steps", "must not exceed schedule.steps");
  require(eta >= 0.0, "sampler.eta", "must be non-negative");

  require(q1 > 0, "npnn.q1", "must be positive");
  require(q2 > 0, "npnn.q2", "must be positive");
  require(q_last > 0, "npnn.q_last", "must be positive");
  require(kernel_h % 2 == 1 && kernel_w % 2 == 1, "npnn.kernel", "extents must be odd");
  require(time_dim > 0 && time_dim % 2 == 0, "npnn.time_dim", "must be even and positive");
  require(max_period > 0.0, "npnn.max_period", "must be positive");
  require(base_width > 0, "npnn.base_width", "must be positive");

  require(learning_rate > 0.0, "train.learning_rate", "must be positive");
  require(train_steps >= 0, "train.steps", "must be non-negative");
  require(batch_size > 0, "train.batch_size", "must be positive");
  require(train_snr_min_db <= train_snr_max_db, "train.snr_min_db", "must not exceed train.snr_max_db");

  require(!eval_snr_db.empty(), "eval.snr_db", "must list at least one SNR");
  require(eval_frames > 0, "eval.frames", "must be positive");
  require(!pn_levels_dbchz.empty(), "eval.pn_levels_dbchz", "must list at least one level");

  if (scenario == Scenario::OfdmDetect) {
    require(ofdm.n_fft > 0, "ofdm.n_fft", "must be positive");
    require(ofdm.n_sym > 0, "ofdm.n_sym", "must be positive");
    require(ofdm.n_rx > 0, "ofdm.n_rx", "must be positive");
    require(ofdm.scs_hz > 0.0, "ofdm.scs_hz", "must be positive");
    require(max_delay_ns >= 0.0, "ofdm.max_delay_ns", "must be non-negative");
    for (int order : {ofdm.data_order, ofdm.pilot_order}) {
      require(order == 4 || order == 16 || order == 64 || order == 256,
              order == ofdm.data_order ? "ofdm.data_order" : "ofdm.pilot_order", "must be 4, 16, 64 or 256");
    }
    for (std::size_t n : ofdm.pilot_symbols) require(n < ofdm.n_sym, "ofdm.pilot_symbols", "index outside the frame");
    require(static_cast<double>(ofdm.cp_len) / ofdm.sample_rate() >= ofdm.max_delay_s, "ofdm.cp_len",
            "cyclic prefix is shorter than ofdm.max_delay_ns");
    check_block("ofdm", [&] { ofdm.validate(); });
    require(q_last > ofdm.condition_channels(), "npnn.q_last", "must exceed the condition channel count");
  } else {
    require(pn.section_len >= 2, "pn.section_len", "must be at least 2");
    require(pn.data_order == 4 || pn.data_order == 16 || pn.data_order == 64 || pn.data_order == 256,
            "pn.data_order", "must be 4, 16, 64 or 256");
    require(pn.offset_hz > 0.0, "pn.offset_hz", "must be positive");
    require(pn.symbol_rate > 0.0, "pn.symbol_rate", "must be positive");
    check_block("pn", [&] { pn.validate(); });
    require(q_last > 3, "npnn.q_last", "must exceed the condition channel count");
  }
  check_block("npnn", [&] { npnn_spec().validate(); });
}

NpnnSpec ExperimentConfig::npnn_spec() const {
  NpnnSpec s;
  if (scenario == Scenario::OfdmDetect) {
    s.encoder.height = ofdm.n_fft;
    s.encoder.width = ofdm.n_sym;
    s.encoder.channels = ofdm.condition_channels();
  } else {
    s.encoder.height = 1;
    s.encoder.width = pn.section_len;
    s.encoder.channels = 3;
  }
  s.encoder.q1 = q1;
  s.encoder.q2 = q2;
  s.encoder.q_last = q_last;
  s.encoder.kernel_h = kernel_h;
  s.encoder.kernel_w = kernel_w;
  s.time.dim = time_dim;
  s.time.max_period = max_period;
  s.unet.base_width = base_width;
  s.sample_channels = 2;
  s.max_t = diffusion_steps;
  return s;
}

Schedule ExperimentConfig::schedule() const { return make_sigmoid_schedule(diffusion_steps, beta_min, beta_max); }

TauSet ExperimentConfig::tau() const { return make_tau(sampler_steps, diffusion_steps, eta); }

std::string ExperimentConfig::digest() const {
  const NpnnSpec s = npnn_spec();
  std::ostringstream os;
  os << scenario_name(scenario) << '|' << s.encoder.height << 'x' << s.encoder.width << 'x' << s.encoder.channels
     << '|' << s.sample_channels << '|' << q1 << ',' << q2 << ',' << q_last << '|' << kernel_h << 'x' << kernel_w
     << '|' << time_dim << ',' << format_double(max_period) << '|' << base_width << '|' << diffusion_steps << ','
     << format_double(beta_min) << ',' << format_double(beta_max);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(os.str())));
  return buf;
}

bool ExperimentConfig::operator==(const ExperimentConfig& other) const {
  return format_config(*this) == format_config(other);
}

ExperimentConfig parse_config(const std::string& text, const std::string& base_dir) {
  const Document doc = parse_document(text);
  ExperimentConfig cfg;

  std::set<std::string> known;
  for (const auto& f : fields()) known.insert(f.section + "." + f.key);
  std::set<std::string> sections;
  for (const auto& f : fields()) sections.insert(f.section);
  for (const auto& [section, tab] : doc) {
    if (sections.count(section) == 0) throw ConfigError(section + ": unknown section");
    for (const auto& [key, value] : tab) {
      if (known.count(section + "." + key) == 0) throw ConfigError(section + "." + key + ": unknown key");
    }
  }

  auto lookup = [&](const std::string& section, const std::string& key) -> const Value* {
    auto s = doc.find(section);
    if (s == doc.end()) return nullptr;
    auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  };

  for (const auto& f : fields()) {
    if (const Value* v = lookup(f.section, f.key)) f.set(cfg, *v, f.section + "." + f.key);
  }

  // Phase-noise runs operate at higher SNR than the detection runs.
  if (cfg.scenario == Scenario::PnEstimate) {
    if (!lookup("train", "snr_min_db")) cfg.train_snr_min_db = 10.0;
    if (!lookup("train", "snr_max_db")) cfg.train_snr_max_db = 40.0;
    if (!lookup("eval", "snr_db")) cfg.eval_snr_db = {10, 15, 20, 25, 30, 35, 40};
  }

  if (!cfg.profile_path.empty()) {
    std::filesystem::path p(cfg.profile_path);
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    try {
      cfg.ofdm.profile = load_tdl_profile(p.string()).scaled_to(cfg.ofdm.max_delay_s);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("ofdm.profile: ") + e.what());
    }
  } else {
    cfg.ofdm.profile = default_tdl_profile(cfg.ofdm.max_delay_s);
  }

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const auto dir = std::filesystem::path(path).parent_path();
  return parse_config(ss.str(), dir.empty() ? "." : dir.string());
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += '\n';
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

}  // namespace phydiff
