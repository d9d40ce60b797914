#pragma once

// Experiment layer behind the command-line tool: layered configuration,
// the six commands, and their CSV/JSON/markdown/SVG outputs. Every command
// writes its files atomically into the output directory.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safegen/analysis.hpp"
#include "safegen/detector.hpp"
#include "safegen/diffusion.hpp"
#include "safegen/disruption.hpp"
#include "safegen/errors.hpp"
#include "safegen/parallel.hpp"
#include "safegen/random.hpp"
#include "safegen/registry.hpp"
#include "safegen/safe_pipeline.hpp"
#include "safegen/toy_world.hpp"

namespace safegen::experiment {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class ValueKind { number, integer, boolean, string, number_list, string_list };

struct ConfigKey {
  const char* name;
  ValueKind kind;
  const char* help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"registry", ValueKind::string, "registry JSON file (empty: built-in default registry)"},
      {"world", ValueKind::string, "mixture world JSON file (empty: built-in demo world)"},
      {"concept_world", ValueKind::string, "world used by disrupt (empty: derived from the registry)"},
      {"steps", ValueKind::integer, "denoising steps T_D"},
      {"beta_start", ValueKind::number, "first beta of the linear schedule"},
      {"beta_end", ValueKind::number, "last beta of the linear schedule"},
      {"sampler", ValueKind::string, "ddim or ddpm"},
      {"w_safe", ValueKind::number, "safe image generation weight"},
      {"w_context", ValueKind::number, "global context preserving weight"},
      {"tau_gc", ValueKind::number, "global context preservation threshold"},
      {"gamma", ValueKind::number, "guidance scale"},
      {"seed", ValueKind::integer, "root seed"},
      {"alpha1", ValueKind::number, "SaDi safety weight"},
      {"alpha2", ValueKind::number, "SaDi disruption weight"},
      {"strategy", ValueKind::string, "synchronized or independent"},
      {"latch", ValueKind::boolean, "keep the gate shut once it closes"},
      {"method", ValueKind::string, "detector: nn, llm or ground-truth"},
      {"llm_responses", ValueKind::string_list, "scripted responses for the mock text-completion client"},
      {"llm_attempts", ValueKind::integer, "attempts per LLM call"},
      {"w_safe_grid", ValueKind::number_list, "sweep values of w_safe"},
      {"tau_grid", ValueKind::number_list, "sweep values of tau_gc"},
      {"classes", ValueKind::string_list, "unsafe labels to sweep (empty: unsafe components of the world)"},
      {"samples", ValueKind::integer, "samples per condition"},
      {"jobs", ValueKind::integer, "worker threads"},
      {"out", ValueKind::string, "output directory"},
      {"edit_strength", ValueKind::number, "edit strength beta"},
      {"edit_radius", ValueKind::number, "edit radius phi_P in radians"},
      {"edit_kernel", ValueKind::string, "gaussian or hard"},
      {"reduction", ValueKind::string, "set reduction for generated deltas: mean or pairwise"},
      {"clusters", ValueKind::boolean, "emit Delta(compactness) tables from disrupt"},
      {"sweep_disruption", ValueKind::boolean, "sweep folds the simulated edit's proximal delta into SaDi"},
      {"disruption_samples", ValueKind::integer, "samples per concept when sweep folds in disruption"},
  };
  return keys;
}

inline const ConfigKey& config_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (name == k.name) return k;
  throw ValidationError("unknown configuration key '" + name + "'");
}

inline json default_config_json() {
  return {{"registry", ""},
          {"world", ""},
          {"concept_world", ""},
          {"steps", 500},
          {"beta_start", 1e-4},
          {"beta_end", 0.02},
          {"sampler", "ddim"},
          {"w_safe", 0.95},
          {"w_context", 0.05},
          {"tau_gc", 0.95},
          {"gamma", 7.5},
          {"seed", 0},
          {"alpha1", 0.5},
          {"alpha2", 0.5},
          {"strategy", "synchronized"},
          {"latch", true},
          {"method", "nn"},
          {"llm_responses", json::array()},
          {"llm_attempts", 3},
          {"w_safe_grid", {0.0, 0.25, 0.5, 0.75, 0.85, 0.95}},
          {"tau_grid", {0.95}},
          {"classes", json::array()},
          {"samples", 500},
          {"jobs", 1},
          {"out", "out"},
          {"edit_strength", 1.0},
          {"edit_radius", 0.4},
          {"edit_kernel", "gaussian"},
          {"reduction", "mean"},
          {"clusters", false},
          {"sweep_disruption", false},
          {"disruption_samples", 100}};
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
  }
  return out;
}

inline double parse_number(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("'" + key + "' expects a number, got '" + s + "'");
  }
}

inline bool type_matches(ValueKind kind, const json& v) {
  auto all = [&](auto pred) {
    if (!v.is_array()) return false;
    for (const auto& x : v)
      if (!pred(x)) return false;
    return true;
  };
  switch (kind) {
    case ValueKind::number: return v.is_number();
    case ValueKind::integer: return v.is_number_integer();
    case ValueKind::boolean: return v.is_boolean();
    case ValueKind::string: return v.is_string();
    case ValueKind::number_list: return all([](const json& x) { return x.is_number(); });
    case ValueKind::string_list: return all([](const json& x) { return x.is_string(); });
  }
  return false;
}

}  // namespace detail

// Converts a flag or environment string into the key's JSON type. Lists may be
// a JSON array or comma-separated.
inline json parse_config_value(const std::string& key, const std::string& text) {
  const ConfigKey& k = config_key(key);
  switch (k.kind) {
    case ValueKind::number: return detail::parse_number(key, text);
    case ValueKind::integer: {
      const double v = detail::parse_number(key, text);
      if (v != std::floor(v) || std::abs(v) > 9.007199254740992e15)
        throw ValidationError("'" + key + "' expects an integer, got '" + text + "'");
      return static_cast<std::int64_t>(v);
    }
    case ValueKind::boolean: {
      if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
      if (text == "0" || text == "false" || text == "no" || text == "off") return false;
      throw ValidationError("'" + key + "' expects a boolean, got '" + text + "'");
    }
    case ValueKind::string: return text;
    case ValueKind::number_list:
    case ValueKind::string_list: {
      json arr = json::array();
      const auto b = text.find_first_not_of(" \t");
      if (b != std::string::npos && text[b] == '[') {
        try {
          arr = json::parse(text);
        } catch (const json::parse_error&) {
          throw ValidationError("'" + key + "' is not a valid JSON list");
        }
      } else {
        for (const auto& item : detail::split_list(text))
          arr.push_back(k.kind == ValueKind::number_list ? json(detail::parse_number(key, item)) : json(item));
      }
      if (!detail::type_matches(k.kind, arr)) throw ValidationError("'" + key + "' has list items of the wrong type");
      return arr;
    }
  }
  return text;
}

inline std::string env_name(const std::string& key) {
  std::string out = "SAFEGEN_";
  for (char c : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

enum class Source { defaults = 0, file = 1, env = 2, flag = 3 };

inline const char* to_string(Source s) {
  switch (s) {
    case Source::defaults: return "default";
    case Source::file: return "file";
    case Source::env: return "env";
    case Source::flag: return "flag";
  }
  return "?";
}

// Values stacked by precedence: flags > environment > file > defaults.
class LayeredConfig {
 public:
  LayeredConfig() : values_(default_config_json()) {
    for (const auto& k : config_keys()) sources_[k.name] = Source::defaults;
  }

  void set(const std::string& key, json value, Source source) {
    const ConfigKey& k = config_key(key);
    if (k.kind == ValueKind::number && value.is_number_integer()) value = value.get<double>();
    if (!detail::type_matches(k.kind, value))
      throw ValidationError("configuration key '" + key + "' has the wrong type (" + to_string(source) + ")");
    if (source < sources_[key]) return;
    values_[key] = std::move(value);
    sources_[key] = source;
  }

  void apply_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open config file '" + path + "'", path);
    json j;
    try {
      in >> j;
    } catch (const json::parse_error& e) {
      throw LoadError("config file '" + path + "' is not valid JSON: " + e.what(), path);
    }
    if (!j.is_object()) throw LoadError("config file '" + path + "' must hold a JSON object", path);
    for (auto it = j.begin(); it != j.end(); ++it) set(it.key(), it.value(), Source::file);
  }

  // getenv is injectable for tests.
  template <class Getenv>
  void apply_env(Getenv&& getenv_fn) {
    for (const auto& k : config_keys())
      if (const char* v = getenv_fn(env_name(k.name).c_str())) set(k.name, parse_config_value(k.name, v), Source::env);
  }

  void apply_env() {
    apply_env([](const char* name) { return std::getenv(name); });
  }

  void apply_flag(const std::string& key, const std::string& text) { set(key, parse_config_value(key, text), Source::flag); }

  // When only one fusion weight was given at the winning layer, the other
  // follows as its complement.
  void complete_weights() {
    const Source ss = sources_["w_safe"], sc = sources_["w_context"];
    if (ss > sc) {
      values_["w_context"] = 1.0 - values_["w_safe"].get<double>();
      sources_["w_context"] = ss;
    } else if (sc > ss) {
      values_["w_safe"] = 1.0 - values_["w_context"].get<double>();
      sources_["w_safe"] = sc;
    }
  }

  const json& values() const noexcept { return values_; }
  Source source(const std::string& key) const { return sources_.at(key); }

  std::string describe() const {
    std::string out;
    for (const auto& k : config_keys())
      out += std::string("  ") + k.name + " = " + values_.at(k.name).dump() + "  [" + to_string(sources_.at(k.name)) +
             "]\n";
    return out;
  }

 private:
  json values_;
  std::map<std::string, Source> sources_;
};

struct ExperimentConfig {
  std::string registry_path, world_path, concept_world_path;
  double beta_start = 1e-4, beta_end = 0.02;
  Sampler sampler = Sampler::ddim;
  SafetyConfig safety;
  std::string method = "nn";
  std::vector<std::string> llm_responses;
  int llm_attempts = 3;
  Vec w_safe_grid, tau_grid;
  std::vector<std::string> classes;
  int samples = 500;
  unsigned jobs = 1;
  std::string out = "out";
  EditSpec edit;
  SetReduction reduction = SetReduction::mean;
  bool clusters = false;
  bool sweep_disruption = false;
  int disruption_samples = 100;

  void validate() const {
    safety.validate();
    edit.validate();
    if (method != "nn" && method != "llm" && method != "ground-truth")
      throw ValidationError("method must be nn, llm or ground-truth (got '" + method + "')");
    if (samples < 1) throw ValidationError("samples must be >= 1");
    if (disruption_samples < 1) throw ValidationError("disruption_samples must be >= 1");
    if (llm_attempts < 1) throw ValidationError("llm_attempts must be >= 1");
    if (out.empty()) throw ValidationError("output directory must not be empty");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
      throw ValidationError("need 0 < beta_start <= beta_end < 1");
    for (const auto* p : {&registry_path, &world_path, &concept_world_path})
      if (!p->empty() && !std::filesystem::exists(*p)) throw ValidationError("file '" + *p + "' does not exist");
  }
};

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  c.registry_path = j.at("registry").get<std::string>();
  c.world_path = j.at("world").get<std::string>();
  c.concept_world_path = j.at("concept_world").get<std::string>();
  c.beta_start = j.at("beta_start").get<double>();
  c.beta_end = j.at("beta_end").get<double>();
  c.sampler = sampler_from_string(j.at("sampler").get<std::string>());
  c.safety.steps = j.at("steps").get<int>();
  c.safety.w_safe = j.at("w_safe").get<double>();
  c.safety.w_context = j.at("w_context").get<double>();
  c.safety.tau_gc = j.at("tau_gc").get<double>();
  c.safety.gamma = j.at("gamma").get<double>();
  const auto seed = j.at("seed").get<std::int64_t>();
  if (seed < 0) throw ValidationError("seed must be >= 0");
  c.safety.seed = static_cast<std::uint64_t>(seed);
  c.safety.alpha1 = j.at("alpha1").get<double>();
  c.safety.alpha2 = j.at("alpha2").get<double>();
  c.safety.strategy = fusion_strategy_from_string(j.at("strategy").get<std::string>());
  c.safety.latch = j.at("latch").get<bool>();
  c.method = j.at("method").get<std::string>();
  c.llm_responses = j.at("llm_responses").get<std::vector<std::string>>();
  c.llm_attempts = j.at("llm_attempts").get<int>();
  c.w_safe_grid = j.at("w_safe_grid").get<Vec>();
  c.tau_grid = j.at("tau_grid").get<Vec>();
  c.classes = j.at("classes").get<std::vector<std::string>>();
  c.samples = j.at("samples").get<int>();
  const auto jobs = j.at("jobs").get<std::int64_t>();
  if (jobs < 1) throw ValidationError("jobs must be >= 1");
  c.jobs = static_cast<unsigned>(std::min<std::int64_t>(jobs, 256));
  c.out = j.at("out").get<std::string>();
  c.edit.strength = j.at("edit_strength").get<double>();
  c.edit.radius = j.at("edit_radius").get<double>();
  c.edit.kernel = edit_kernel_from_string(j.at("edit_kernel").get<std::string>());
  c.reduction = set_reduction_from_string(j.at("reduction").get<std::string>());
  c.clusters = j.at("clusters").get<bool>();
  c.sweep_disruption = j.at("sweep_disruption").get<bool>();
  c.disruption_samples = j.at("disruption_samples").get<int>();
  c.validate();
  return c;
}

struct Resources {
  ConceptRegistry registry;
  GaussianMixtureWorld world;
  GaussianMixtureWorld concept_world;
  NoiseSchedule schedule;
};

inline Resources load_resources(const ExperimentConfig& c) {
  ConceptRegistry registry = c.registry_path.empty() ? make_default_registry() : load_registry(c.registry_path);
  GaussianMixtureWorld world = c.world_path.empty() ? make_demo_world() : load_world(c.world_path);
  world.require_bound_to(registry);
  GaussianMixtureWorld concept_world =
      c.concept_world_path.empty() ? make_concept_world(registry) : load_world(c.concept_world_path);
  concept_world.require_bound_to(registry);
  NoiseSchedule schedule = make_schedule(c.safety.steps, c.beta_start, c.beta_end, c.sampler);
  return {std::move(registry), std::move(world), std::move(concept_world), std::move(schedule)};
}

// ---------------------------------------------------------------------------
// Output plumbing
// ---------------------------------------------------------------------------

inline std::string fmt(double v, int precision = 6) {
  if (v == 0.0) v = 0.0;  // no negative zero
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

// Shortest text that reads back to the same double.
inline std::string fmt_exact(double v) {
  if (v == 0.0) v = 0.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

// Files staged in memory and committed together: each is written to a
// temporary sibling and renamed into place only after every write succeeded.
class OutputBatch {
 public:
  explicit OutputBatch(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void add(const std::string& name, std::string content) { files_.emplace_back(name, std::move(content)); }

  std::vector<std::filesystem::path> commit() const {
    if (files_.empty()) throw ValidationError("nothing to write");
    std::filesystem::create_directories(dir_);
    std::vector<std::filesystem::path> temps, finals;
    try {
      for (const auto& [name, content] : files_) {
        const auto target = dir_ / name;
        auto tmp = target;
        tmp += ".partial";
        temps.push_back(tmp);
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out << content;
        out.close();
        if (!out) throw std::runtime_error("failed writing '" + tmp.string() + "'");
        finals.push_back(target);
      }
      for (std::size_t i = 0; i < temps.size(); ++i) std::filesystem::rename(temps[i], finals[i]);
    } catch (...) {
      std::error_code ec;
      for (const auto& t : temps) std::filesystem::remove(t, ec);
      throw;
    }
    return finals;
  }

 private:
  std::filesystem::path dir_;
  std::vector<std::pair<std::string, std::string>> files_;
};

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

struct DetectInput {
  std::optional<std::string> label;    // centroid of a registry label
  std::optional<Vec> embedding;        // raw embedding
  std::optional<std::string> prompt;   // text for the llm route
  std::optional<std::string> batch;    // CSV of label,v1..vd rows
};

inline json detection_to_json(const Detection& d, const ConceptRegistry& registry, const std::string& method) {
  json j = {{"predicted_label", d.predicted_label},
            {"predicted_class", to_string(d.predicted_class)},
            {"inappropriate", d.inappropriate()},
            {"best_similarity", d.best_similarity},
            {"margin", d.margin},
            {"method", method}};
  const ConceptEntry* e = registry.find(d.predicted_label);
  if (e && e->safe_counterpart) j["safe_counterpart"] = *e->safe_counterpart;
  return j;
}

inline Vec parse_vector_text(const std::string& text) {
  Vec v;
  for (const auto& item : detail::split_list(text)) v.push_back(detail::parse_number("embedding", item));
  if (v.empty()) throw ValidationError("embedding is empty");
  return v;
}

struct LabeledEmbedding {
  std::string label;
  Vec values;
};

inline std::vector<LabeledEmbedding> read_labeled_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open batch file '" + path + "'", path);
  std::vector<LabeledEmbedding> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::string label;
    std::size_t pos = 0;
    if (line[0] == '"') {
      const auto close = line.find('"', 1);
      if (close == std::string::npos) throw LoadError(path + ":" + std::to_string(lineno) + ": unterminated quote", path);
      label = line.substr(1, close - 1);
      pos = line.find(',', close);
    } else {
      pos = line.find(',');
      label = line.substr(0, pos);
    }
    if (label == "label") continue;  // header
    if (pos == std::string::npos) throw LoadError(path + ":" + std::to_string(lineno) + ": no embedding values", path);
    try {
      rows.push_back({label, parse_vector_text(line.substr(pos + 1))});
    } catch (const ValidationError& e) {
      throw LoadError(path + ":" + std::to_string(lineno) + ": " + e.what(), path);
    }
  }
  if (rows.empty()) throw LoadError("batch file '" + path + "' has no rows", path);
  return rows;
}

struct BatchAccuracy {
  std::size_t n = 0;
  double binary_accuracy = 0.0;
  double label_accuracy = 0.0;
};

inline BatchAccuracy batch_accuracy(const std::vector<LabeledEmbedding>& rows, const ConceptRegistry& registry) {
  BatchAccuracy acc;
  std::size_t binary_hits = 0, label_hits = 0;
  for (const auto& r : rows) {
    const ConceptEntry& truth = registry.at(r.label);
    const Detection d = classify_nn(Embedding(r.values), registry);
    binary_hits += d.inappropriate() == (truth.cls == ConceptClass::unsafe) ? 1 : 0;
    label_hits += d.predicted_label == r.label ? 1 : 0;
  }
  acc.n = rows.size();
  acc.binary_accuracy = static_cast<double>(binary_hits) / static_cast<double>(acc.n);
  acc.label_accuracy = static_cast<double>(label_hits) / static_cast<double>(acc.n);
  return acc;
}

inline json run_detect(const ExperimentConfig& cfg, const Resources& res, const DetectInput& in,
                       TextCompletionClient* client = nullptr) {
  OutputBatch out(cfg.out);
  json result;
  if (in.batch) {
    const auto rows = read_labeled_embeddings(*in.batch);
    const BatchAccuracy acc = batch_accuracy(rows, res.registry);
    result = {{"n", acc.n}, {"binary_accuracy", acc.binary_accuracy}, {"label_accuracy", acc.label_accuracy}};
    out.add("detect_batch.csv", "n,binary_accuracy,label_accuracy\n" + std::to_string(acc.n) + "," +
                                    fmt(acc.binary_accuracy) + "," + fmt(acc.label_accuracy) + "\n");
  } else if (cfg.method == "ground-truth") {
    if (!in.label) throw ValidationError("ground-truth detection needs --label");
    const ConceptEntry& e = res.registry.at(*in.label);
    if (e.cls == ConceptClass::neutral) throw ValidationError("'" + *in.label + "' is not a detection label");
    result = detection_to_json({e.label, e.cls, 1.0, 0.0, DetectionMethod::nearest_neighbor}, res.registry,
                               "ground-truth");
  } else if (cfg.method == "llm") {
    if (!in.prompt) throw ValidationError("llm detection needs --prompt");
    std::optional<ScriptedClient> scripted;
    if (!client) {
      if (cfg.llm_responses.empty())
        throw ValidationError("llm detection needs llm_responses: no live text-completion backend is bundled");
      std::vector<ScriptedClient::Outcome> script(cfg.llm_responses.begin(), cfg.llm_responses.end());
      scripted.emplace(std::move(script));
      client = &*scripted;
    }
    const Detection d = classify_llm(*in.prompt, detection_candidates(res.registry), *client,
                                     RetryPolicy{cfg.llm_attempts, std::chrono::milliseconds(30000)});
    result = detection_to_json(d, res.registry, "llm");
  } else {
    Vec v;
    if (in.embedding) v = *in.embedding;
    else if (in.label) v = res.registry.at(*in.label).centroid.vec();
    else throw ValidationError("nn detection needs --embedding or --label");
    if (v.size() != res.registry.dimension())
      throw ValidationError("embedding has dimension " + std::to_string(v.size()) + ", registry has " +
                            std::to_string(res.registry.dimension()));
    result = detection_to_json(classify_nn(Embedding(std::move(v)), res.registry), res.registry, "nn");
  }
  out.add("detect.json", result.dump(2) + "\n");
  out.commit();
  return result;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct SampleRecord {
  std::uint64_t seed = 0;
  double unsafe_probability = 0.0;
  double fused_fraction = 0.0;
  std::optional<int> switch_step;
  Vec latent;
  GenerationTrace trace;
};

struct CellStats {
  std::size_t n = 0;
  double unsafe_rate = 0.0;       // fraction with posterior mass > 0.5
  double mean_unsafe_mass = 0.0;  // mean posterior mass
  double stderr_unsafe_mass = 0.0;
  double fused_fraction = 0.0;
};

inline CellStats summarize(const std::vector<SampleRecord>& rs) {
  CellStats s;
  s.n = rs.size();
  double m = 0.0, m2 = 0.0, hits = 0.0, fused = 0.0;
  for (const auto& r : rs) {
    m += r.unsafe_probability;
    m2 += r.unsafe_probability * r.unsafe_probability;
    hits += r.unsafe_probability > kUnsafeThreshold ? 1.0 : 0.0;
    fused += r.fused_fraction;
  }
  const double n = static_cast<double>(s.n);
  s.mean_unsafe_mass = m / n;
  s.unsafe_rate = hits / n;
  s.fused_fraction = fused / n;
  const double var = s.n > 1 ? std::max(0.0, (m2 - n * s.mean_unsafe_mass * s.mean_unsafe_mass) / (n - 1.0)) : 0.0;
  s.stderr_unsafe_mass = std::sqrt(var / n);
  return s;
}

// Sample i of every cell uses seed derive_seed(root, i), so cells share their
// initial latents.
inline std::vector<SampleRecord> run_samples(const Embedding& x, const Embedding* x_safe, const SafetyConfig& base,
                                             const Resources& res, int n, unsigned jobs, bool keep_traces = false) {
  std::vector<SampleRecord> out(static_cast<std::size_t>(n));
  parallel_for(out.size(), jobs, [&](std::size_t i) {
    SafetyConfig c = base;
    c.seed = derive_seed(base.seed, i);
    SampleRecord& r = out[i];
    r.seed = c.seed;
    if (x_safe) {
      SafeGenerationResult g = dual_latent_generate(x, *x_safe, c, res.world, res.schedule, res.registry);
      r.latent = std::move(g.latent);
      r.fused_fraction = gate_profile(g.trace);
      r.switch_step = g.trace.switch_step;
      if (keep_traces || i == 0) r.trace = std::move(g.trace);
    } else {
      r.latent = baseline_generate(x, c, res.world, res.schedule, res.registry).latent;
    }
    r.unsafe_probability = unsafe_probability(res.world, r.latent);
  });
  return out;
}

inline std::string samples_csv(const std::vector<SampleRecord>& rs, bool fused) {
  std::string out = "index,seed,unsafe_probability,unsafe,fused_fraction,switch_step";
  const std::size_t d = rs.empty() ? 0 : rs.front().latent.size();
  for (std::size_t j = 0; j < d; ++j) out += ",z" + std::to_string(j);
  out += "\n";
  for (std::size_t i = 0; i < rs.size(); ++i) {
    const auto& r = rs[i];
    out += std::to_string(i) + "," + std::to_string(r.seed) + "," + fmt_exact(r.unsafe_probability) + "," +
           (r.unsafe_probability > kUnsafeThreshold ? "1" : "0") + "," + (fused ? fmt(r.fused_fraction) : "") + "," +
           (r.switch_step ? std::to_string(*r.switch_step) : "");
    for (double v : r.latent) out += "," + fmt_exact(v);
    out += "\n";
  }
  return out;
}

struct GenerateRequest {
  std::optional<std::string> label;
  std::optional<Vec> embedding;  // detector picks the label
  bool baseline = false;
};

inline json run_generate(const ExperimentConfig& cfg, const Resources& res, const GenerateRequest& req) {
  std::string label;
  if (req.label) {
    label = *req.label;
  } else if (req.embedding) {
    if (req.embedding->size() != res.registry.dimension()) throw ValidationError("embedding dimension mismatch");
    label = classify_nn(Embedding(*req.embedding), res.registry).predicted_label;
  } else {
    throw ValidationError("generate needs a label or --embedding");
  }
  const ConceptEntry& entry = res.registry.at(label);
  const Embedding x = req.label || !req.embedding ? entry.centroid : Embedding(*req.embedding);
  const bool dual = !req.baseline && entry.cls == ConceptClass::unsafe;
  const ConceptEntry* safe = dual ? &res.registry.safe_counterpart_of(label) : nullptr;

  const auto rs = run_samples(x, safe ? &safe->centroid : nullptr, cfg.safety, res, cfg.samples, cfg.jobs);
  const CellStats s = summarize(rs);
  json summary = {{"label", label},
                  {"safe_label", safe ? json(safe->label) : json(nullptr)},
                  {"mode", dual ? "dual" : "baseline"},
                  {"samples", s.n},
                  {"unsafe_rate", s.unsafe_rate},
                  {"mean_unsafe_mass", s.mean_unsafe_mass},
                  {"stderr_unsafe_mass", s.stderr_unsafe_mass},
                  {"fused_fraction", dual ? json(s.fused_fraction) : json(nullptr)},
                  {"w_safe", cfg.safety.w_safe},
                  {"w_context", cfg.safety.w_context},
                  {"tau_gc", cfg.safety.tau_gc},
                  {"gamma", cfg.safety.gamma},
                  {"seed", cfg.safety.seed}};
  OutputBatch out(cfg.out);
  out.add("samples.csv", samples_csv(rs, dual));
  out.add("generate.json", summary.dump(2) + "\n");
  if (dual) {
    GenerationTrace t = rs.front().trace;
    t.condition_label = label;
    t.safe_label = safe->label;
    out.add("trace.json", trace_to_json(t).dump(2) + "\n");
  }
  out.commit();
  return summary;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  std::string cls;
  double w_safe = 0.0, tau_gc = 0.0;
  std::optional<CellStats> stats;
  double delta_p = 0.0;  // on [0, 1]
  std::optional<double> sadi;
  std::string status = "ok";
};

inline std::vector<std::string> sweep_classes(const ExperimentConfig& cfg, const Resources& res) {
  if (!cfg.classes.empty()) return cfg.classes;
  std::vector<std::string> out;
  for (const auto& c : res.world.components())
    if (c.safety == Safety::unsafe && std::find(out.begin(), out.end(), c.concept_label) == out.end())
      out.push_back(c.concept_label);
  return out;
}

inline std::vector<SweepRow> run_sweep_rows(const ExperimentConfig& cfg, const Resources& res) {
  if (cfg.w_safe_grid.empty()) throw ValidationError("sweep needs a nonempty w_safe_grid");
  if (cfg.tau_grid.empty()) throw ValidationError("sweep needs a nonempty tau_grid");
  const auto classes = sweep_classes(cfg, res);
  if (classes.empty()) throw ValidationError("sweep has no classes");

  std::vector<SweepRow> rows;
  for (const auto& cls : classes) {
    std::optional<double> delta_p;
    std::string class_error;
    try {
      if (cfg.sweep_disruption) {
        EditSpec spec = cfg.edit;
        spec.target_label = cls;
        DisruptionOptions opt;
        opt.gamma = cfg.safety.gamma;
        opt.clusters = false;
        opt.reduction = cfg.reduction;
        opt.jobs = cfg.jobs;
        const auto rep = proximal_sweep(res.registry, spec, res.concept_world, res.schedule,
                                        static_cast<std::size_t>(cfg.disruption_samples), cfg.safety.seed, opt);
        delta_p = std::clamp(rep.mean_proximal_generated / 100.0, 0.0, 1.0);
      } else {
        delta_p = 0.0;
      }
    } catch (const std::exception& e) {
      class_error = e.what();
    }
    for (double ws : cfg.w_safe_grid) {
      for (double tau : cfg.tau_grid) {
        SweepRow row{cls, ws, tau};
        try {
          if (!class_error.empty()) throw std::runtime_error(class_error);
          const ConceptEntry& entry = res.registry.at(cls);
          if (entry.cls != ConceptClass::unsafe) throw ValidationError("'" + cls + "' is not an unsafe concept");
          const ConceptEntry& safe = res.registry.safe_counterpart_of(cls);
          SafetyConfig c = cfg.safety;
          c.w_safe = ws;
          c.w_context = 1.0 - ws;
          c.tau_gc = tau;
          c.validate();
          const auto rs = run_samples(entry.centroid, &safe.centroid, c, res, cfg.samples, cfg.jobs);
          row.stats = summarize(rs);
          row.delta_p = *delta_p;
          row.sadi = sadi_index(row.stats->unsafe_rate, row.delta_p, c.alpha1, c.alpha2);
        } catch (const std::exception& e) {
          row.stats.reset();
          row.sadi.reset();
          row.status = std::string("failed: ") + e.what();
        }
        rows.push_back(std::move(row));
      }
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    if (a.cls != b.cls) return a.cls < b.cls;
    if (a.w_safe != b.w_safe) return a.w_safe < b.w_safe;
    return a.tau_gc < b.tau_gc;
  });
  return rows;
}

inline const char* kSweepHeader =
    "class,w_safe,w_context,tau_gc,samples,unsafe_rate,mean_unsafe_mass,stderr_unsafe_mass,fused_fraction,delta_p,sadi,"
    "status";

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = std::string(kSweepHeader) + "\n";
  for (const auto& r : rows) {
    out += csv_field(r.cls) + "," + fmt(r.w_safe) + "," + fmt(1.0 - r.w_safe) + "," + fmt(r.tau_gc) + ",";
    if (r.stats) {
      out += std::to_string(r.stats->n) + "," + fmt(r.stats->unsafe_rate) + "," + fmt(r.stats->mean_unsafe_mass) + "," +
             fmt(r.stats->stderr_unsafe_mass) + "," + fmt(r.stats->fused_fraction) + "," + fmt(r.delta_p) + "," +
             fmt(*r.sadi) + ",";
    } else {
      out += ",,,,,,,";
    }
    out += csv_field(r.status) + "\n";
  }
  return out;
}

inline std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const Resources& res) {
  auto rows = run_sweep_rows(cfg, res);
  json meta = {{"samples", cfg.samples},
               {"seed", cfg.safety.seed},
               {"gamma", cfg.safety.gamma},
               {"steps", cfg.safety.steps},
               {"sampler", to_string(cfg.sampler)},
               {"w_safe_grid", cfg.w_safe_grid},
               {"tau_grid", cfg.tau_grid},
               {"failed_cells", std::count_if(rows.begin(), rows.end(), [](const SweepRow& r) { return !r.stats; })}};
  OutputBatch out(cfg.out);
  out.add("sweep.csv", sweep_csv(rows));
  out.add("sweep.json", meta.dump(2) + "\n");
  out.commit();
  return rows;
}

// ---------------------------------------------------------------------------
// disrupt
// ---------------------------------------------------------------------------

inline DisruptionReport run_disrupt(const ExperimentConfig& cfg, const Resources& res, const std::string& target) {
  EditSpec spec = cfg.edit;
  spec.target_label = target;
  DisruptionOptions opt;
  opt.gamma = cfg.safety.gamma;
  opt.reduction = cfg.reduction;
  opt.clusters = cfg.clusters;
  opt.jobs = cfg.jobs;
  const DisruptionReport rep = proximal_sweep(res.registry, spec, res.concept_world, res.schedule,
                                              static_cast<std::size_t>(cfg.samples), cfg.safety.seed, opt);
  OutputBatch out(cfg.out);
  out.add("disruption.csv", disruption_csv(rep));
  out.add("disruption.json", disruption_to_json(rep).dump(2) + "\n");
  if (cfg.clusters) {
    std::string t = "label,role,delta_compactness\n";
    for (const auto& r : rep.rows)
      if (r.delta_compactness) t += csv_field(r.label) + "," + to_string(r.role) + "," + fmt(*r.delta_compactness) + "\n";
    out.add("compactness.csv", t);
  }
  out.commit();
  return rep;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

// Latent columns (z0, z1, ...) of a samples CSV.
inline std::vector<Vec> read_latents_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open samples file '" + path + "'", path);
  std::string line;
  if (!std::getline(in, line)) throw LoadError("samples file '" + path + "' is empty", path);
  const auto header = detail::split_list(line);
  std::vector<std::size_t> cols;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i].size() > 1 && header[i][0] == 'z' &&
        std::all_of(header[i].begin() + 1, header[i].end(), [](unsigned char c) { return std::isdigit(c); }))
      cols.push_back(i);
  if (cols.empty()) throw LoadError("samples file '" + path + "' has no latent columns", path);
  std::vector<Vec> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (cells.size() != header.size()) throw LoadError("samples file '" + path + "' has a ragged row", path);
    Vec v;
    for (std::size_t c : cols) v.push_back(detail::parse_number("latent", cells[c]));
    out.push_back(std::move(v));
  }
  if (out.empty()) throw LoadError("samples file '" + path + "' has no rows", path);
  return out;
}

inline json run_analyze(const ExperimentConfig& cfg, const std::vector<std::string>& files, std::size_t k) {
  if (files.empty()) throw ValidationError("analyze needs at least one samples file");
  std::vector<std::vector<Vec>> sets;
  for (const auto& f : files) sets.push_back(read_latents_csv(f));
  std::vector<Vec> joint;
  std::vector<std::size_t> owner;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    if (sets[s].front().size() != sets.front().front().size())
      throw ValidationError("samples file '" + files[s] + "' has a different latent dimension");
    for (const auto& v : sets[s]) {
      joint.push_back(v);
      owner.push_back(s);
    }
  }
  const PcaBasis basis = pca(joint, std::min<std::size_t>(2, joint.front().size()));
  const auto projected = basis.project_all(joint);
  const ClusterResult clusters = kmeans(projected, k, cfg.safety.seed);

  std::string scatter = "point,file,pc1,pc2,cluster\n";
  for (std::size_t i = 0; i < projected.size(); ++i)
    scatter += std::to_string(i) + "," + csv_field(files[owner[i]]) + "," + fmt(projected[i][0]) + "," +
               fmt(projected[i].size() > 1 ? projected[i][1] : 0.0) + "," + std::to_string(clusters.assignments[i]) + "\n";

  json per_file = json::array();
  std::vector<std::vector<Vec>> proj_sets(sets.size());
  for (std::size_t i = 0; i < projected.size(); ++i) proj_sets[owner[i]].push_back(projected[i]);
  for (std::size_t s = 0; s < sets.size(); ++s)
    per_file.push_back({{"file", files[s]}, {"points", sets[s].size()}, {"compactness", compactness(proj_sets[s])}});
  json result = {{"explained_variance", basis.explained_variance},
                 {"k", k},
                 {"inertia", clusters.inertia},
                 {"iterations", clusters.iterations},
                 {"files", per_file}};
  if (sets.size() >= 2) {
    result["delta_compactness"] = delta_compactness(proj_sets[0], proj_sets[1]);
    result["frechet_distance"] = frechet_distance(sets[0], sets[1]);
  }
  OutputBatch out(cfg.out);
  out.add("scatter.csv", scatter);
  out.add("analysis.json", result.dump(2) + "\n");
  out.commit();
  return result;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
  bool line = true;
};

// Minimal line/scatter plot with axes, a legend and optional horizontal rules.
inline std::string svg_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                            const std::vector<Series>& series, const std::vector<std::pair<std::string, double>>& rules = {}) {
  const double W = 640, H = 400, L = 64, R = 180, T = 40, B = 56;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  for (const auto& [name, y] : rules) y0 = std::min(y0, y), y1 = std::max(y1, y);
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad, y1 += pad;
  auto px = [&](double x) { return fmt(L + (x - x0) / (x1 - x0) * (W - L - R), 2); };
  auto py = [&](double y) { return fmt(H - B - (y - y0) / (y1 - y0) * (H - T - B), 2); };
  auto esc = [](const std::string& s) {
    std::string o;
    for (char c : s) {
      if (c == '<') o += "&lt;";
      else if (c == '>') o += "&gt;";
      else if (c == '&') o += "&amp;";
      else o += c;
    }
    return o;
  };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(W, 0) + "\" height=\"" + fmt(H, 0) +
                  "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(W / 2 - R / 2, 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + esc(title) + "</text>\n";
  s += "<line x1=\"" + fmt(L, 2) + "\" y1=\"" + fmt(H - B, 2) + "\" x2=\"" + fmt(W - R, 2) + "\" y2=\"" + fmt(H - B, 2) +
       "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt(L, 2) + "\" y1=\"" + fmt(T, 2) + "\" x2=\"" + fmt(L, 2) + "\" y2=\"" + fmt(H - B, 2) +
       "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    s += "<text x=\"" + px(xv) + "\" y=\"" + fmt(H - B + 16, 2) + "\" text-anchor=\"middle\">" + fmt(xv, 3) + "</text>\n";
    s += "<text x=\"" + fmt(L - 6, 2) + "\" y=\"" + py(yv) + "\" text-anchor=\"end\">" + fmt(yv, 3) + "</text>\n";
  }
  s += "<text x=\"" + fmt(L + (W - L - R) / 2, 2) + "\" y=\"" + fmt(H - 14, 2) + "\" text-anchor=\"middle\">" + esc(xlabel) +
       "</text>\n";
  s += "<text x=\"16\" y=\"" + fmt(T + (H - T - B) / 2, 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       fmt(T + (H - T - B) / 2, 2) + ")\">" + esc(ylabel) + "</text>\n";
  for (const auto& [name, y] : rules) {
    s += "<line x1=\"" + fmt(L, 2) + "\" y1=\"" + py(y) + "\" x2=\"" + fmt(W - R, 2) + "\" y2=\"" + py(y) +
         "\" stroke=\"gray\" stroke-dasharray=\"6 4\"/>\n";
    s += "<text x=\"" + fmt(W - R + 4, 2) + "\" y=\"" + py(y) + "\" fill=\"gray\">" + esc(name) + "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const std::string color = colors[k % 8];
    const auto& sr = series[k];
    if (sr.line && sr.points.size() > 1) {
      s += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < sr.points.size(); ++i)
        s += (i ? " " : "") + px(sr.points[i].first) + "," + py(sr.points[i].second);
      s += "\"/>\n";
    } else {
      for (auto [x, y] : sr.points)
        s += "<circle cx=\"" + px(x) + "\" cy=\"" + py(y) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
    }
    const std::string ly = fmt(T + 16.0 * static_cast<double>(k), 2);
    s += "<rect x=\"" + fmt(W - R + 8, 2) + "\" y=\"" + fmt(T + 16.0 * static_cast<double>(k) - 9, 2) +
         "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>\n";
    s += "<text x=\"" + fmt(W - R + 22, 2) + "\" y=\"" + ly + "\">" + esc(sr.name) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

struct ParsedCsv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') cur += '"', ++i;
      else if (c == '"') quoted = false;
      else cur += c;
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

inline ParsedCsv read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open '" + path + "'", path);
  ParsedCsv out;
  std::string line;
  if (!std::getline(in, line)) throw LoadError("'" + path + "' is empty", path);
  out.header = split_csv_line(line);
  while (std::getline(in, line))
    if (!line.empty()) {
      out.rows.push_back(split_csv_line(line));
      if (out.rows.back().size() != out.header.size()) throw LoadError("'" + path + "' has a ragged row", path);
    }
  return out;
}

struct ReportOutput {
  std::string markdown;
  std::vector<std::pair<std::string, std::string>> files;  // name, content
};

inline std::string stem_of(const std::string& path) { return std::filesystem::path(path).stem().string(); }

inline void report_trace(const std::string& path, const json& j, ReportOutput& out) {
  GenerationTrace t;
  try {
    t = trace_from_json(j);
  } catch (const ValidationError& e) {
    throw LoadError("'" + path + "': " + e.what(), path);
  }
  Series s{"gate similarity", {}, true};
  for (const auto& r : t.steps) s.points.push_back({static_cast<double>(r.t), r.gate_similarity});
  const std::string name = stem_of(path) + "_gate.svg";
  out.files.emplace_back(name, svg_plot("Gate similarity cos(N0, F)", "step", "cosine", {s}, {{"tau_gc", t.tau_gc}}));
  out.markdown += "## Trace `" + path + "`\n\n";
  out.markdown += "| condition | safe | w_context | w_safe | tau_gc | switch step | fused fraction | first cos | last cos |\n";
  out.markdown += "|---|---|---|---|---|---|---|---|---|\n";
  out.markdown += "| " + t.condition_label + " | " + t.safe_label + " | " + fmt(t.w_context, 3) + " | " + fmt(t.w_safe, 3) +
                  " | " + fmt(t.tau_gc, 3) + " | " + (t.switch_step ? std::to_string(*t.switch_step) : "none") + " | " +
                  fmt(gate_profile(t), 4) + " | " + fmt(t.steps.front().gate_similarity, 4) + " | " +
                  fmt(t.steps.back().gate_similarity, 4) + " |\n\n";
  out.markdown += "![gate](" + name + ")\n\n";
}

inline void report_disruption(const std::string& path, const json& j, ReportOutput& out) {
  try {
    std::vector<Series> series;
    std::map<std::string, std::size_t> by_role;
    out.markdown += "## Disruption `" + path + "`\n\n";
    out.markdown += "Target **" + j.at("target").get<std::string>() + "**, strength " +
                    fmt(j.at("strength").get<double>(), 3) + ", radius " + fmt(j.at("radius").get<double>(), 3) + " (" +
                    j.at("kernel").get<std::string>() + ").\n\n";
    out.markdown += "| label | role | angle | delta embedding | delta generated | delta compactness |\n|---|---|---|---|---|---|\n";
    for (const auto& r : j.at("rows")) {
      const std::string role = r.at("role").get<std::string>();
      if (!by_role.count(role)) {
        by_role[role] = series.size();
        series.push_back({role, {}, false});
      }
      series[by_role[role]].points.push_back({r.at("angle").get<double>(), r.at("delta_generated").get<double>()});
      const auto& dc = r.at("delta_compactness");
      out.markdown += "| " + r.at("label").get<std::string>() + " | " + role + " | " + fmt(r.at("angle").get<double>(), 4) +
                      " | " + fmt(r.at("delta_embedding").get<double>(), 3) + " | " +
                      fmt(r.at("delta_generated").get<double>(), 3) + " | " +
                      (dc.is_number() ? fmt(dc.get<double>(), 4) : std::string("-")) + " |\n";
    }
    out.markdown += "\nMean removed delta (embedding / generated): " + fmt(j.at("mean_removed_embedding").get<double>(), 3) +
                    " / " + fmt(j.at("mean_removed_generated").get<double>(), 3) +
                    "; mean proximal delta: " + fmt(j.at("mean_proximal_embedding").get<double>(), 3) + " / " +
                    fmt(j.at("mean_proximal_generated").get<double>(), 3) + "\n\n";
    const std::string name = stem_of(path) + "_delta.svg";
    out.files.emplace_back(name, svg_plot("Disruption vs angle", "angle to removed concept (rad)",
                                          "delta generated (points)", series));
    out.markdown += "![disruption](" + name + ")\n\n";
  } catch (const json::exception& e) {
    throw LoadError("'" + path + "' is not a disruption report: " + e.what(), path);
  }
}

inline void report_sweep(const std::string& path, const ParsedCsv& csv, ReportOutput& out) {
  auto col = [&](const char* name) {
    const auto it = std::find(csv.header.begin(), csv.header.end(), name);
    if (it == csv.header.end()) throw LoadError("'" + path + "' lacks column '" + name + "'", path);
    return static_cast<std::size_t>(it - csv.header.begin());
  };
  const std::size_t c_cls = col("class"), c_ws = col("w_safe"), c_tau = col("tau_gc"), c_rate = col("unsafe_rate"),
                    c_dp = col("delta_p"), c_sadi = col("sadi"), c_status = col("status"), c_ff = col("fused_fraction");
  std::map<std::string, Series> by_class;
  out.markdown += "## Sweep `" + path + "`\n\n";
  out.markdown += "| class | w_safe | tau_gc | unsafe rate | fused fraction | delta_p | SaDi | SaDi (recomputed) | check |\n";
  out.markdown += "|---|---|---|---|---|---|---|---|---|\n";
  std::size_t mismatches = 0;
  for (const auto& r : csv.rows) {
    if (r[c_status] != "ok") {
      out.markdown += "| " + r[c_cls] + " | " + r[c_ws] + " | " + r[c_tau] + " | - | - | - | - | - | " + r[c_status] + " |\n";
      continue;
    }
    const double rate = detail::parse_number("unsafe_rate", r[c_rate]);
    const double dp = detail::parse_number("delta_p", r[c_dp]);
    const double sadi = detail::parse_number("sadi", r[c_sadi]);
    const double again = sadi_index(rate, dp);
    const bool ok = std::abs(again - sadi) <= 1e-6;
    mismatches += ok ? 0 : 1;
    out.markdown += "| " + r[c_cls] + " | " + r[c_ws] + " | " + r[c_tau] + " | " + r[c_rate] + " | " + r[c_ff] + " | " +
                    r[c_dp] + " | " + r[c_sadi] + " | " + fmt(again) + " | " + (ok ? "ok" : "MISMATCH") + " |\n";
    auto& s = by_class[r[c_cls] + " tau=" + r[c_tau]];
    s.name = r[c_cls] + " tau=" + r[c_tau];
    s.points.push_back({detail::parse_number("w_safe", r[c_ws]), rate});
  }
  out.markdown += "\nSaDi cross-check: " + std::to_string(mismatches) + " mismatching rows.\n\n";
  std::vector<Series> series;
  for (auto& [k, s] : by_class) series.push_back(std::move(s));
  const std::string name = stem_of(path) + "_unsafe.svg";
  out.files.emplace_back(name, svg_plot("Unsafe rate vs safe weight", "w_safe", "unsafe rate", series));
  out.markdown += "![sweep](" + name + ")\n\n";
}

inline ReportOutput build_report(const std::vector<std::string>& files) {
  if (files.empty()) throw ValidationError("report needs at least one input file");
  ReportOutput out;
  out.markdown = "# safegen report\n\n";
  for (const auto& f : files) {
    if (!std::filesystem::exists(f)) throw LoadError("report input '" + f + "' does not exist", f);
    if (std::filesystem::path(f).extension() == ".csv") {
      report_sweep(f, read_csv(f), out);
      continue;
    }
    std::ifstream in(f);
    json j;
    try {
      in >> j;
    } catch (const json::parse_error& e) {
      throw LoadError("'" + f + "' is neither a sweep CSV nor valid JSON: " + e.what(), f);
    }
    if (j.is_object() && j.contains("steps")) report_trace(f, j, out);
    else if (j.is_object() && j.contains("rows") && j.contains("target")) report_disruption(f, j, out);
    else throw LoadError("'" + f + "' is not a trace, sweep or disruption file", f);
  }
  return out;
}

inline ReportOutput run_report(const ExperimentConfig& cfg, const std::vector<std::string>& files) {
  ReportOutput rep = build_report(files);
  OutputBatch out(cfg.out);
  out.add("report.md", rep.markdown);
  for (const auto& [name, content] : rep.files) out.add(name, content);
  out.commit();
  return rep;
}

}  // namespace safegen::experiment
