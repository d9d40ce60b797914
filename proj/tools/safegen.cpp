#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "safegen/experiment.hpp"

namespace {

using nlohmann::json;
namespace ex = safegen::experiment;

enum ExitCode { kOk = 0, kInvalid = 2, kFailure = 3 };

int fail(const std::string& type, const std::string& message, int code) {
  std::cerr << json{{"error", {{"type", type}, {"message", message}, {"exit_code", code}}}}.dump() << "\n";
  return code;
}

// Flags that map straight onto configuration keys.
const std::vector<std::pair<std::string, std::string>> kConfigFlags = {
    {"--registry", "registry"},       {"--world", "world"},
    {"--concept-world", "concept_world"},
    {"--steps", "steps"},             {"--beta-start", "beta_start"},
    {"--beta-end", "beta_end"},       {"--sampler", "sampler"},
    {"--w-safe", "w_safe"},           {"--w-context", "w_context"},
    {"--tau-gc", "tau_gc"},           {"--gamma", "gamma"},
    {"--seed", "seed"},               {"--alpha1", "alpha1"},
    {"--alpha2", "alpha2"},           {"--strategy", "strategy"},
    {"--latch", "latch"},             {"--method", "method"},
    {"--llm-response", "llm_responses"},
    {"--llm-attempts", "llm_attempts"},
    {"--w-safe-grid", "w_safe_grid"}, {"--tau-grid", "tau_grid"},
    {"--classes", "classes"},         {"--samples", "samples"},
    {"--jobs", "jobs"},               {"--out", "out"},
    {"--beta", "edit_strength"},      {"--radius", "edit_radius"},
    {"--kernel", "edit_kernel"},      {"--reduction", "reduction"},
    {"--with-disruption", "sweep_disruption"},
    {"--disruption-samples", "disruption_samples"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safety-guided generation on a Gaussian-mixture toy world"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  bool quiet = false;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_flag("-q,--quiet", quiet, "do not print the resolved configuration");
  std::map<std::string, std::string> raw;
  std::map<std::string, CLI::Option*> opts;
  for (const auto& [flag, key] : kConfigFlags)
    opts[key] = app.add_option(flag, raw[key], ex::config_key(key).help);
  bool clusters = false, baseline = false;
  app.add_flag("--clusters", clusters, "emit Delta(compactness) tables");

  auto* detect = app.add_subcommand("detect", "classify a prompt embedding or prompt text");
  std::string d_embedding, d_label, d_prompt, d_batch;
  detect->add_option("--embedding", d_embedding, "comma-separated embedding");
  detect->add_option("--label", d_label, "use the centroid of this registry label");
  detect->add_option("--prompt", d_prompt, "prompt text (llm method)");
  detect->add_option("--batch", d_batch, "CSV of label,v1,...,vd rows");

  auto* generate = app.add_subcommand("generate", "sample with the dual-latent pipeline");
  std::string g_label, g_embedding;
  generate->add_option("label", g_label, "concept label");
  generate->add_option("--embedding", g_embedding, "comma-separated embedding (label picked by the detector)");
  generate->add_flag("--baseline", baseline, "single-branch baseline without the safe latent");

  auto* sweep = app.add_subcommand("sweep", "grid over classes, w_safe and tau_gc");

  auto* disrupt = app.add_subcommand("disrupt", "simulate a concept edit and measure disruption");
  std::string target;
  disrupt->add_option("target", target, "unsafe label to remove")->required();

  auto* analyze = app.add_subcommand("analyze", "PCA, k-means and Frechet distance over sample files");
  std::vector<std::string> analyze_files;
  std::size_t k = 3;
  analyze->add_option("files", analyze_files, "samples.csv files")->required();
  analyze->add_option("-k,--k", k, "clusters");

  auto* report = app.add_subcommand("report", "markdown and SVG report from trace, sweep or disruption files");
  std::vector<std::string> report_files;
  report->add_option("files", report_files, "trace JSON, sweep CSV or disruption JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("ParseError", e.what(), kInvalid);
  }

  try {
    ex::LayeredConfig layered;
    if (!config_path.empty()) layered.apply_file(config_path);
    layered.apply_env();
    for (const auto& [flag, key] : kConfigFlags)
      if (opts[key]->count() > 0) layered.apply_flag(key, raw[key]);
    if (clusters) layered.set("clusters", true, ex::Source::flag);
    layered.complete_weights();
    if (!quiet) std::cerr << "safegen configuration:\n" << layered.describe();

    const ex::ExperimentConfig cfg = ex::config_from_json(layered.values());
    json result;
    if (*report) {
      result = {{"report", cfg.out + "/report.md"}, {"inputs", report_files}};
      ex::run_report(cfg, report_files);
    } else if (*analyze) {
      result = ex::run_analyze(cfg, analyze_files, k);
    } else {
      const ex::Resources res = ex::load_resources(cfg);
      if (*detect) {
        ex::DetectInput in;
        if (!d_embedding.empty()) in.embedding = ex::parse_vector_text(d_embedding);
        if (!d_label.empty()) in.label = d_label;
        if (!d_prompt.empty()) in.prompt = d_prompt;
        if (!d_batch.empty()) in.batch = d_batch;
        result = ex::run_detect(cfg, res, in);
      } else if (*generate) {
        ex::GenerateRequest req;
        if (!g_label.empty()) req.label = g_label;
        if (!g_embedding.empty()) req.embedding = ex::parse_vector_text(g_embedding);
        req.baseline = baseline;
        result = ex::run_generate(cfg, res, req);
      } else if (*sweep) {
        const auto rows = ex::run_sweep(cfg, res);
        std::size_t failed = 0;
        for (const auto& r : rows) failed += r.stats ? 0 : 1;
        result = {{"sweep", cfg.out + "/sweep.csv"}, {"rows", rows.size()}, {"failed_cells", failed}};
      } else if (*disrupt) {
        result = safegen::disruption_to_json(ex::run_disrupt(cfg, res, target));
      }
    }
    std::cout << result.dump(2) << "\n";
    return kOk;
  } catch (const safegen::LoadError& e) {
    return fail("LoadError", e.what(), kInvalid);
  } catch (const safegen::ValidationError& e) {
    return fail("ValidationError", e.what(), kInvalid);
  } catch (const safegen::DomainError& e) {
    return fail("DomainError", e.what(), kInvalid);
  } catch (const nlohmann::json::exception& e) {
    return fail("ParseError", e.what(), kInvalid);
  } catch (const safegen::TransportError& e) {
    return fail("TransportError", e.what(), kFailure);
  } catch (const safegen::NoMatchError& e) {
    return fail("NoMatchError", e.what(), kFailure);
  } catch (const std::exception& e) {
    return fail("Error", e.what(), kFailure);
  }
}
