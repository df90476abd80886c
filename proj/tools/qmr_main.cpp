#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "qmr/bspline.hpp"
#include "qmr/error.hpp"
#include "qmr/experiment.hpp"
#include "qmr/export.hpp"
#include "qmr/io.hpp"
#include "qmr/log.hpp"
#include "qmr/metrics.hpp"
#include "qmr/phantom.hpp"
#include "qmr/registration.hpp"
#include "qmr/rpca.hpp"
#include "qmr/t1fit.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit code for a completed run whose acceptance thresholds failed.
constexpr int kThresholdsFailed = 1;

struct Output {
  std::string path;
  std::string format = "json";

  void add_to(CLI::App* app, const std::string& flag, const std::string& help) {
    app->add_option(flag, path, help + " (stdout when omitted)");
    app->add_option("--format", format, "Report format")->check(CLI::IsMember({"json", "csv"}));
  }

  void emit(const json& document) const {
    const std::string text = format == "csv" ? qmr::to_csv(document) : document.dump(2) + "\n";
    if (path.empty()) {
      std::cout << text;
      return;
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw qmr::Error(qmr::ErrorKind::io, "cannot open '" + path + "' for writing");
    os << text;
    if (!os) throw qmr::Error(qmr::ErrorKind::io, "failed writing '" + path + "'");
  }
};

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw qmr::Error(qmr::ErrorKind::io, "'" + path + "' does not exist");
}

json loss_json(const qmr::LossBreakdown& l) {
  return {{"total", l.total}, {"similarity", l.similarity}, {"smooth", l.smooth}, {"cyclic", l.cyclic}};
}

json roi_json(const qmr::RoiStats& s) { return {{"mean", s.mean}, {"std", s.std}, {"count", s.count}}; }

std::string safe_label(std::string label) {
  for (char& c : label) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  }
  return label;
}

// ---- phantom ---------------------------------------------------------------

struct PhantomArgs {
  std::string preset = "pre-gd";
  double amplitude = 4.0;
  double noise = 0.02;
  std::uint64_t seed = 7;
  double edge_width = 1.0;
  std::string out;
  std::string truth_dir;
  Output report;
};

int run_phantom(const PhantomArgs& a) {
  qmr::PhantomConfig config = qmr::PhantomConfig::preset(qmr::parse_contrast_mode(a.preset));
  config.amplitude = a.amplitude;
  config.seed = a.seed;
  config.edge_width = a.edge_width;
  if (!(a.noise >= 0.0)) throw qmr::Error(qmr::ErrorKind::config, "--noise must be >= 0");
  config.noise_sigma = a.noise * qmr::signal_range(config);
  const qmr::PhantomTruth truth = qmr::generate_phantom(config);
  qmr::save_stack(truth.observed, a.out);

  json manifest{{"version", qmr::version()},
                {"preset", qmr::to_string(config.contrast)},
                {"amplitude", config.amplitude},
                {"noise_fraction", a.noise},
                {"noise_sigma", config.noise_sigma},
                {"seed", config.seed},
                {"observed", a.out}};
  if (!a.truth_dir.empty()) {
    const fs::path dir(a.truth_dir);
    fs::create_directories(dir);
    json files;
    qmr::save_stack(truth.clean, dir / "clean.qmr");
    files["clean"] = "clean.qmr";
    qmr::save_field(truth.true_fields, dir / "fields.qmr");
    files["fields"] = "fields.qmr";
    const qmr::ImageStack t1 = qmr::ImageStack::from_frames({truth.true_t1_star, truth.true_t1});
    qmr::save_stack(t1, dir / "true_t1.qmr");
    files["true_t1"] = "true_t1.qmr (frames: T1*, T1)";
    json masks;
    for (const qmr::RoiMask& m : truth.masks) {
      const std::string name = "mask-" + safe_label(m.label()) + ".qmr";
      qmr::save_mask(m, dir / name);
      masks[m.label()] = name;
    }
    qmr::save_mask(truth.motion_region, dir / "mask-motion.qmr");
    masks["motion"] = "mask-motion.qmr";
    files["masks"] = masks;
    manifest["truth"] = files;
    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    os << manifest.dump(2) << "\n";
    if (!os) throw qmr::Error(qmr::ErrorKind::io, "failed writing manifest in '" + a.truth_dir + "'");
  }
  a.report.emit(manifest);
  return 0;
}

// ---- decompose -------------------------------------------------------------

struct DecomposeArgs {
  std::string input;
  qmr::RpcaConfig rpca;
  std::string out_low;
  std::string out_sparse;
  Output report;
};

int run_decompose(const DecomposeArgs& a) {
  require_file(a.input);
  const qmr::ImageStack stack = qmr::load_stack(a.input);
  const qmr::Decomposition d = qmr::godec_decompose(stack, a.rpca);
  if (!a.out_low.empty()) qmr::save_stack(d.low_rank, a.out_low);
  if (!a.out_sparse.empty()) qmr::save_stack(d.sparse, a.out_sparse);
  a.report.emit({{"version", qmr::version()},
                 {"rank", d.rank},
                 {"iterations", d.iterations_used},
                 {"final_relative_error", d.final_relative_error},
                 {"singular_values", d.singular_values},
                 {"objective_trace", d.objective_trace},
                 {"lambda", d.lambda}});
  return 0;
}

// ---- register --------------------------------------------------------------

struct RegisterArgs {
  std::string input;
  std::string similarity = "nmi";
  qmr::RegistrationConfig config;
  std::string out_warped;
  std::string out_field;
  Output report;
};

int run_register(RegisterArgs a) {
  require_file(a.input);
  a.config.similarity = qmr::parse_similarity(a.similarity);
  a.config.validate();
  const qmr::ImageStack stack = qmr::load_stack(a.input);
  const qmr::RegistrationResult r = qmr::rpca_register(stack, a.config);
  if (!a.out_warped.empty()) qmr::save_stack(r.warped, a.out_warped);
  if (!a.out_field.empty()) qmr::save_field(r.fields, a.out_field);

  json rounds = json::array();
  for (std::size_t i = 0; i < r.round_reports.size(); ++i) {
    const qmr::RoundReport& rr = r.round_reports[i];
    json trace = json::array();
    if (i < r.loss_traces.size()) {
      for (const auto& l : r.loss_traces[i]) trace.push_back(loss_json(l));
    }
    rounds.push_back({{"round", rr.round},
                      {"d_pca_before", rr.d_pca_before},
                      {"d_pca_after", rr.d_pca_after},
                      {"rpca_iterations", rr.rpca_iterations},
                      {"rpca_error", rr.rpca_error},
                      {"accepted_steps", rr.accepted_steps},
                      {"rejected_steps", rr.rejected_steps},
                      {"mean_displacement", rr.mean_displacement},
                      {"loss_trace", trace}});
  }
  a.report.emit({{"version", qmr::version()},
                 {"seed", a.config.seed},
                 {"similarity", qmr::to_string(a.config.similarity)},
                 {"lambda_smooth", a.config.lambda_smooth},
                 {"lambda_cyclic", a.config.lambda_cyclic},
                 {"rounds", rounds},
                 {"d_pca", {{"before", qmr::d_pca(stack, 1)}, {"after", qmr::d_pca(r.warped, 1)}}},
                 {"field", {{"sup", r.fields.max_magnitude()}, {"mean", r.fields.mean_magnitude()}}},
                 {"aborted", r.aborted},
                 {"diagnostic", r.diagnostic}});
  if (r.aborted) {
    spdlog::error("registration aborted: {}", r.diagnostic);
    return qmr::exit_code_for(qmr::ErrorKind::convergence);
  }
  return 0;
}

// ---- warp ------------------------------------------------------------------

struct WarpArgs {
  std::string input;
  std::string field;
  std::string out;
};

int run_warp(const WarpArgs& a) {
  require_file(a.input);
  require_file(a.field);
  const qmr::ImageStack stack = qmr::load_stack(a.input);
  const qmr::DisplacementField field = qmr::load_field(a.field);
  qmr::save_stack(qmr::warp_stack(stack, field), a.out);
  return 0;
}

// ---- fit-t1 ----------------------------------------------------------------

struct FitArgs {
  std::string input;
  std::string mask;
  std::string out_maps;
  std::string png_dir;
  bool look_locker = false;
  bool signed_data = false;
  Output stats;
};

int run_fit(const FitArgs& a) {
  require_file(a.input);
  const qmr::ImageStack stack = qmr::load_stack(a.input);
  std::optional<qmr::RoiMask> mask;
  if (!a.mask.empty()) {
    require_file(a.mask);
    mask = qmr::load_mask(a.mask);
  }
  qmr::FitOptions options;
  options.look_locker = a.look_locker;
  options.polarity_restore = !a.signed_data;
  const qmr::T1MapResult maps = qmr::fit_map(stack, mask ? &*mask : nullptr, options);
  if (!a.out_maps.empty()) qmr::save_stack(qmr::maps_to_stack(maps), a.out_maps);

  const qmr::RoiMask roi =
      mask ? *mask
           : qmr::RoiMask(stack.height(), stack.width(), std::vector<std::uint8_t>(stack.frame_size(), 1), "image");
  std::size_t converged = 0;
  for (std::size_t i = 0; i < maps.converged.size(); ++i) converged += roi.contains(i) && maps.converged[i];
  const std::pair<const char*, const qmr::Image*> named[] = {{"a", &maps.a_map},
                                                             {"b", &maps.b_map},
                                                             {"t1_star", &maps.t1_star_map},
                                                             {"t1", &maps.t1_map},
                                                             {"sd", &maps.sd_map}};
  json roi_maps;
  for (const auto& [name, image] : named) {
    roi_maps[name] = converged > 0 ? roi_json(qmr::roi_stats(*image, roi, maps.converged)) : json(nullptr);
  }
  if (!a.png_dir.empty()) {
    fs::create_directories(a.png_dir);
    for (const auto& [name, image] : named) qmr::save_png(*image, fs::path(a.png_dir) / (std::string(name) + ".png"));
  }
  a.stats.emit({{"version", qmr::version()},
                {"roi", roi.label()},
                {"roi_pixels", roi.count()},
                {"converged_pixels", converged},
                {"look_locker", a.look_locker},
                {"maps", roi_maps}});
  return 0;
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::string input;
  std::string mask;
  std::string field;
  int top_k = 1;
  int bins = qmr::default_bins;
  int ncc_window = 9;
  Output report;
};

int run_evaluate(const EvaluateArgs& a) {
  require_file(a.input);
  const qmr::ImageStack stack = qmr::load_stack(a.input);
  std::optional<qmr::RoiMask> mask;
  if (!a.mask.empty()) {
    require_file(a.mask);
    mask = qmr::load_mask(a.mask);
  }
  const qmr::ImageStack normalized = qmr::normalize_stack(stack).stack;
  const qmr::Image reference = qmr::implicit_reference(normalized);
  const int n = stack.frames();
  json nmi_matrix = json::array();
  json ncc = json::array();
  for (int i = 0; i < n; ++i) {
    json row = json::array();
    for (int j = 0; j < n; ++j) row.push_back(qmr::nmi(normalized.frame(i), normalized.frame(j), a.bins));
    nmi_matrix.push_back(row);
    ncc.push_back(qmr::local_ncc(normalized.frame_image(i), reference, a.ncc_window));
  }
  json report{{"version", qmr::version()},
              {"top_k", a.top_k},
              {"d_pca", qmr::d_pca(stack, a.top_k, mask ? &*mask : nullptr)},
              {"nmi", nmi_matrix},
              {"ncc_to_mean", ncc}};
  if (!a.field.empty()) {
    require_file(a.field);
    const qmr::DisplacementField field = qmr::load_field(a.field);
    report["cyclic_loss"] = qmr::cyclic_loss(field);
    report["field"] = {{"sup", field.max_magnitude()}, {"mean", field.mean_magnitude()}};
  }
  a.report.emit(report);
  return 0;
}

// ---- run -------------------------------------------------------------------

struct RunArgs {
  std::string config;
  std::string png_dir;
  int jobs = 1;
  bool no_timing = false;
  Output report;
};

int run_experiment_command(const RunArgs& a) {
  qmr::ExperimentConfig config = qmr::load_experiment_config(a.config);
  if (!a.png_dir.empty()) config.png_dir = fs::path(a.png_dir);
  const qmr::ExperimentReport report = qmr::run_experiment(config, a.jobs);
  a.report.emit(qmr::to_json(report, !a.no_timing));
  return report.passed ? 0 : kThresholdsFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motion correction and T1 mapping for inversion-recovery image series", "qmr"};
  app.set_version_flag("--version", std::string("qmr ") + qmr::version());
  app.require_subcommand(1);
  auto subcommand = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->set_version_flag("--version", std::string("qmr ") + qmr::version());
    return sub;
  };
  std::function<int()> action;

  PhantomArgs phantom;
  {
    CLI::App* s = subcommand("phantom", "Generate a synthetic sequence with planted motion");
    s->add_option("--preset", phantom.preset, "pre-gd or post-gd")->capture_default_str();
    s->add_option("--amplitude", phantom.amplitude, "Largest planted displacement (px)")->capture_default_str();
    s->add_option("--noise", phantom.noise, "Noise sigma as a fraction of the signal range")->capture_default_str();
    s->add_option("--seed", phantom.seed, "Random seed")->capture_default_str();
    s->add_option("--edge-width", phantom.edge_width, "Tissue boundary blur (px)")->capture_default_str();
    s->add_option("--out", phantom.out, "Observed stack (.qmr)")->required();
    s->add_option("--out-truth", phantom.truth_dir, "Directory for fields, masks and true maps");
    phantom.report.add_to(s, "--manifest", "Manifest output");
    s->callback([&] { action = [&] { return run_phantom(phantom); }; });
  }

  DecomposeArgs decompose;
  {
    CLI::App* s = subcommand("decompose", "Low-rank plus sparse decomposition");
    s->add_option("--input", decompose.input, "Input stack")->required();
    s->add_option("--rank", decompose.rpca.rank, "Low rank, 0 = frames / 2")->capture_default_str();
    s->add_option("--sparse-fraction", decompose.rpca.sparse_fraction, "Fraction of sparse entries")
        ->capture_default_str();
    s->add_option("--max-iterations", decompose.rpca.max_iterations)->capture_default_str();
    s->add_option("--tolerance", decompose.rpca.tolerance)->capture_default_str();
    s->add_option("--seed", decompose.rpca.seed)->capture_default_str();
    s->add_option("--out-low", decompose.out_low, "Low-rank stack");
    s->add_option("--out-sparse", decompose.out_sparse, "Sparse stack");
    decompose.report.add_to(s, "--report", "Run report");
    s->callback([&] { action = [&] { return run_decompose(decompose); }; });
  }

  RegisterArgs reg;
  {
    CLI::App* s = subcommand("register", "Groupwise registration with iterative decomposition");
    qmr::RegistrationConfig& c = reg.config;
    s->add_option("--input", reg.input, "Input stack")->required();
    s->add_option("--rounds", c.rounds)->capture_default_str();
    s->add_option("--similarity", reg.similarity, "nmi or ncc")->capture_default_str();
    s->add_option("--lambda-smooth", c.lambda_smooth)->capture_default_str();
    s->add_option("--lambda-cyclic", c.lambda_cyclic)->capture_default_str();
    s->add_option("--steps", c.steps_per_round, "Gradient steps per round")->capture_default_str();
    s->add_option("--step-size", c.step_size, "Initial step (px)")->capture_default_str();
    s->add_option("--spacing", c.control_spacing, "Control point spacing (px)")->capture_default_str();
    s->add_option("--bins", c.bins)->capture_default_str();
    s->add_option("--ncc-window", c.ncc_window)->capture_default_str();
    s->add_option("--similarity-sigma", c.similarity_sigma, "Blur of warped frames (px)")->capture_default_str();
    s->add_option("--seed", c.seed)->capture_default_str();
    s->add_option("--out-warped", reg.out_warped, "Warped stack");
    s->add_option("--out-field", reg.out_field, "Total displacement field");
    reg.report.add_to(s, "--report", "Registration report");
    s->callback([&] { action = [&] { return run_register(reg); }; });
  }

  WarpArgs warp;
  {
    CLI::App* s = subcommand("warp", "Apply a displacement field to a stack");
    s->add_option("--input", warp.input)->required();
    s->add_option("--field", warp.field)->required();
    s->add_option("--out", warp.out)->required();
    s->callback([&] { action = [&] { return run_warp(warp); }; });
  }

  FitArgs fit;
  {
    CLI::App* s = subcommand("fit-t1", "Pixelwise inversion-recovery fit");
    s->add_option("--input", fit.input)->required();
    s->add_option("--mask", fit.mask, "ROI mask; all pixels when omitted");
    s->add_option("--out-maps", fit.out_maps, "Five-frame map stack (A, B, T1*, T1, SD)");
    s->add_option("--png-dir", fit.png_dir, "Write 8-bit PNG renderings of the maps");
    s->add_flag("--look-locker", fit.look_locker, "Report Look-Locker corrected T1");
    s->add_flag("--signed", fit.signed_data, "Input is phase-sensitive; skip polarity restoration");
    fit.stats.add_to(s, "--out-stats", "ROI statistics");
    s->callback([&] { action = [&] { return run_fit(fit); }; });
  }

  EvaluateArgs evaluate;
  {
    CLI::App* s = subcommand("evaluate", "Alignment metrics for a stack");
    s->add_option("--input", evaluate.input)->required();
    s->add_option("--mask", evaluate.mask);
    s->add_option("--field", evaluate.field, "Displacement field for the cyclic loss");
    s->add_option("--topk", evaluate.top_k)->capture_default_str();
    s->add_option("--bins", evaluate.bins)->capture_default_str();
    s->add_option("--ncc-window", evaluate.ncc_window)->capture_default_str();
    evaluate.report.add_to(s, "--out", "Metrics report");
    s->callback([&] { action = [&] { return run_evaluate(evaluate); }; });
  }

  RunArgs run;
  {
    CLI::App* s = subcommand("run", "Run an experiment described by a JSON file");
    s->add_option("config,--config", run.config, "Experiment JSON")->required();
    s->add_option("--jobs", run.jobs, "Cases processed in parallel")->capture_default_str()->check(CLI::PositiveNumber);
    s->add_option("--png-dir", run.png_dir, "Write T1 and SD map images");
    s->add_flag("--no-timing", run.no_timing, "Omit wall-clock fields");
    run.report.add_to(s, "--out", "Experiment report");
    s->callback([&] { action = [&] { return run_experiment_command(run); }; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return qmr::exit_code_for(qmr::ErrorKind::config);
  }

  try {
    qmr::configure_logging();
    return action();
  } catch (const qmr::Error& e) {
    std::fprintf(stderr, "qmr: %s error: %s\n", qmr::to_string(e.kind()), e.what());
    return qmr::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "qmr: %s\n", e.what());
    return qmr::exit_code_for(qmr::ErrorKind::io);
  }
}
