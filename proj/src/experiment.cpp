#include "qmr/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "qmr/error.hpp"
#include "qmr/export.hpp"
#include "qmr/io.hpp"
#include "qmr/metrics.hpp"

namespace qmr {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void reject_unknown(const json& object, std::initializer_list<const char*> known, const std::string& where) {
  if (!object.is_object()) throw Error(ErrorKind::config, where + " must be an object");
  for (const auto& [key, value] : object.items()) {
    bool found = false;
    for (const char* k : known) found = found || key == k;
    if (!found) throw Error(ErrorKind::config, "unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& object, const char* key, T& target, const std::string& where) {
  if (!object.contains(key)) return;
  try {
    target = object.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::config, where + "." + key + " has the wrong type");
  }
}

template <typename T>
void read(const json& object, const char* key, std::optional<T>& target, const std::string& where) {
  if (!object.contains(key)) return;
  T value{};
  read(object, key, value, where);
  target = value;
}

RegistrationConfig parse_registration(const json& j) {
  RegistrationConfig c;
  const std::string where = "registration";
  reject_unknown(j, {"lambda_smooth", "lambda_cyclic", "rounds", "steps_per_round", "step_size", "control_spacing",
                     "bins", "ncc_window", "similarity_sigma", "similarity", "rpca", "seed"},
                 where);
  read(j, "lambda_smooth", c.lambda_smooth, where);
  read(j, "lambda_cyclic", c.lambda_cyclic, where);
  read(j, "rounds", c.rounds, where);
  read(j, "steps_per_round", c.steps_per_round, where);
  read(j, "step_size", c.step_size, where);
  read(j, "control_spacing", c.control_spacing, where);
  read(j, "bins", c.bins, where);
  read(j, "ncc_window", c.ncc_window, where);
  read(j, "similarity_sigma", c.similarity_sigma, where);
  read(j, "seed", c.seed, where);
  if (j.contains("similarity")) {
    std::string s;
    read(j, "similarity", s, where);
    c.similarity = parse_similarity(s);
  }
  if (j.contains("rpca")) {
    const json& r = j.at("rpca");
    reject_unknown(r, {"rank", "sparse_fraction", "max_iterations", "tolerance", "seed"}, "registration.rpca");
    read(r, "rank", c.rpca.rank, "registration.rpca");
    read(r, "sparse_fraction", c.rpca.sparse_fraction, "registration.rpca");
    read(r, "max_iterations", c.rpca.max_iterations, "registration.rpca");
    read(r, "tolerance", c.rpca.tolerance, "registration.rpca");
    read(r, "seed", c.rpca.seed, "registration.rpca");
  }
  c.validate();
  return c;
}

PhantomConfig parse_phantom(const json& j, std::uint64_t seed, const std::string& where) {
  reject_unknown(j, {"preset", "amplitude", "noise", "noise_sigma", "seed", "edge_width", "motion_radius",
                     "motion_spacing", "magnitude"},
                 where);
  std::string preset = "pre-gd";
  read(j, "preset", preset, where);
  PhantomConfig c = PhantomConfig::preset(parse_contrast_mode(preset));
  c.seed = seed;
  read(j, "seed", c.seed, where);
  read(j, "amplitude", c.amplitude, where);
  read(j, "edge_width", c.edge_width, where);
  read(j, "motion_radius", c.motion_radius, where);
  read(j, "motion_spacing", c.motion_spacing, where);
  read(j, "magnitude", c.magnitude, where);
  if (j.contains("noise") && j.contains("noise_sigma")) {
    throw Error(ErrorKind::config, where + " sets both noise and noise_sigma");
  }
  if (j.contains("noise")) {
    double fraction = 0.0;
    read(j, "noise", fraction, where);
    if (!(fraction >= 0.0)) throw Error(ErrorKind::config, where + ".noise must be >= 0");
    c.noise_sigma = fraction * signal_range(c);
  }
  read(j, "noise_sigma", c.noise_sigma, where);
  c.validate();
  return c;
}

double mean_over(const Image& map, const RoiMask& roi, std::span<const std::uint8_t> converged) {
  return roi_stats(map, roi, converged).mean;
}

struct Fitted {
  double sd = 0.0;
  double t1 = 0.0;
  T1MapResult maps;
};

Fitted fit_and_summarize(const ImageStack& stack, const RoiMask& roi, const FitOptions& options) {
  Fitted f{0.0, 0.0, fit_map(stack, &roi, options)};
  f.sd = mean_over(f.maps.sd_map, roi, f.maps.converged);
  f.t1 = mean_over(f.maps.t1_map, roi, f.maps.converged);
  return f;
}

[[noreturn]] void rethrow_tagged(const std::string& name, const char* stage) {
  try {
    throw;
  } catch (const Error& e) {
    throw Error(e.kind(), "case '" + name + "', stage " + stage + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorKind::io, "case '" + name + "', stage " + stage + ": " + e.what());
  }
}

void write_maps(const std::filesystem::path& dir, const std::string& name, const char* tag, const Fitted& f,
                const RoiMask& roi) {
  std::filesystem::create_directories(dir);
  Image t1 = f.maps.t1_map;
  Image sd = f.maps.sd_map;
  for (std::size_t i = 0; i < t1.size(); ++i) {
    if (!roi.contains(i) || !f.maps.converged[i]) t1.values()[i] = sd.values()[i] = 0.0;
  }
  save_png(t1, dir / (name + "_" + tag + "_t1.png"), 0.0, 2000.0);
  save_png(sd, dir / (name + "_" + tag + "_sd.png"), 0.0, 200.0);
}

CaseReport run_case(const ExperimentCase& c, const ExperimentConfig& config) {
  CaseReport report;
  report.name = c.name;

  auto start = Clock::now();
  std::optional<PhantomTruth> truth;
  std::optional<ImageStack> input;
  std::optional<RoiMask> roi;
  try {
    if (c.phantom) {
      truth = generate_phantom(*c.phantom);
      input = truth->observed;
      roi = truth->mask("roi");
    } else {
      if (!std::filesystem::exists(c.input)) {
        throw Error(ErrorKind::io, "input '" + c.input.string() + "' does not exist");
      }
      input = load_stack(c.input);
      if (c.mask) {
        if (!std::filesystem::exists(*c.mask)) {
          throw Error(ErrorKind::io, "mask '" + c.mask->string() + "' does not exist");
        }
        roi = load_mask(*c.mask);
      } else {
        roi = RoiMask(input->height(), input->width(), std::vector<std::uint8_t>(input->frame_size(), 1), "image");
      }
    }
  } catch (...) {
    rethrow_tagged(c.name, "load");
  }
  report.timing.load = seconds_since(start);

  start = Clock::now();
  std::optional<RegistrationResult> registered;
  try {
    registered = rpca_register(*input, config.registration);
  } catch (...) {
    rethrow_tagged(c.name, "register");
  }
  report.timing.registration = seconds_since(start);
  const RegistrationResult& reg = *registered;
  report.rounds = reg.round_reports;
  report.aborted = reg.aborted;
  report.diagnostic = reg.diagnostic;
  report.field_sup = reg.fields.max_magnitude();
  report.field_mean = reg.fields.mean_magnitude();

  start = Clock::now();
  Fitted before, after;
  try {
    before = fit_and_summarize(*input, *roi, config.fit);
    after = fit_and_summarize(reg.warped, *roi, config.fit);
  } catch (...) {
    rethrow_tagged(c.name, "fit-t1");
  }
  report.timing.fitting = seconds_since(start);
  report.roi_sd_before = before.sd;
  report.roi_sd_after = after.sd;
  report.roi_t1_before = before.t1;
  report.roi_t1_after = after.t1;

  start = Clock::now();
  try {
    report.d_pca_before = d_pca(*input, config.top_k);
    report.d_pca_after = d_pca(reg.warped, config.top_k);
    if (truth) {
      const DisplacementField zero(truth->true_fields.frames(), truth->true_fields.height(),
                                   truth->true_fields.width());
      report.epe_before = endpoint_error(zero, truth->true_fields, truth->motion_region);
      report.epe_after = endpoint_error(reg.fields, truth->true_fields, truth->motion_region);
    }
    if (config.png_dir) {
      write_maps(*config.png_dir, c.name, "before", before, *roi);
      write_maps(*config.png_dir, c.name, "after", after, *roi);
    }
  } catch (...) {
    rethrow_tagged(c.name, "evaluate");
  }
  report.timing.evaluation = seconds_since(start);

  const Thresholds& t = config.thresholds;
  auto fail = [&](const std::string& what) { report.failures.push_back(what); };
  if (report.aborted) fail("registration aborted: " + report.diagnostic);
  if (t.min_d_pca_gain && !(report.d_pca_after - report.d_pca_before > *t.min_d_pca_gain)) {
    fail("d_pca gain " + std::to_string(report.d_pca_after - report.d_pca_before) + " not above " +
         std::to_string(*t.min_d_pca_gain));
  }
  const double sd_change = before.sd > 0.0 ? (after.sd - before.sd) / before.sd : 0.0;
  if (t.min_sd_reduction && !(-sd_change >= *t.min_sd_reduction)) {
    fail("ROI SD reduction " + std::to_string(-sd_change) + " below " + std::to_string(*t.min_sd_reduction));
  }
  if (t.max_sd_change && !(std::abs(sd_change) <= *t.max_sd_change)) {
    fail("ROI SD change " + std::to_string(sd_change) + " exceeds " + std::to_string(*t.max_sd_change));
  }
  if (t.max_epe_ratio && report.epe_before && report.epe_before->mean > 0.0) {
    const double ratio = report.epe_after->mean / report.epe_before->mean;
    if (!(ratio <= *t.max_epe_ratio)) {
      fail("endpoint error ratio " + std::to_string(ratio) + " exceeds " + std::to_string(*t.max_epe_ratio));
    }
  }
  if (t.max_field_sup && !(report.field_sup <= *t.max_field_sup)) {
    fail("field sup-norm " + std::to_string(report.field_sup) + " exceeds " + std::to_string(*t.max_field_sup));
  }
  for (const std::string& f : report.failures) spdlog::warn("case '{}': {}", c.name, f);
  return report;
}

json epe_json(const std::optional<EndpointError>& e) {
  if (!e) return nullptr;
  return json{{"mean", e->mean}, {"p95", e->p95}};
}

void flatten(const json& node, const std::string& prefix, std::ostringstream& out) {
  if (node.is_object()) {
    for (const auto& [key, value] : node.items()) flatten(value, prefix.empty() ? key : prefix + "." + key, out);
  } else if (node.is_array()) {
    for (std::size_t i = 0; i < node.size(); ++i) flatten(node[i], prefix + "[" + std::to_string(i) + "]", out);
  } else {
    std::string value = node.is_string() ? node.get<std::string>() : node.dump();
    if (value.find_first_of(",\"\n") != std::string::npos) {
      std::string quoted = "\"";
      for (char ch : value) quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      value = quoted + "\"";
    }
    out << prefix << ',' << value << '\n';
  }
}

}  // namespace

const char* version() { return QMR_VERSION; }

ExperimentConfig parse_experiment_config(const json& document, const std::filesystem::path& base) {
  reject_unknown(document, {"seed", "top_k", "registration", "fit", "cases", "thresholds", "png_dir"}, "experiment");
  ExperimentConfig c;
  c.source = document;
  read(document, "seed", c.seed, "experiment");
  read(document, "top_k", c.top_k, "experiment");
  if (c.top_k < 1) throw Error(ErrorKind::config, "experiment.top_k must be >= 1");

  c.registration.seed = c.seed;
  if (document.contains("registration")) {
    json reg = document.at("registration");
    if (reg.is_object() && !reg.contains("seed")) reg["seed"] = c.seed;
    c.registration = parse_registration(reg);
  }

  c.fit.polarity_restore = true;
  if (document.contains("fit")) {
    const json& f = document.at("fit");
    reject_unknown(f, {"polarity_restore", "look_locker", "max_iterations"}, "fit");
    read(f, "polarity_restore", c.fit.polarity_restore, "fit");
    read(f, "look_locker", c.fit.look_locker, "fit");
    read(f, "max_iterations", c.fit.max_iterations, "fit");
  }

  if (document.contains("thresholds")) {
    const json& t = document.at("thresholds");
    reject_unknown(t, {"min_d_pca_gain", "min_sd_reduction", "max_sd_change", "max_epe_ratio", "max_field_sup"},
                   "thresholds");
    read(t, "min_d_pca_gain", c.thresholds.min_d_pca_gain, "thresholds");
    read(t, "min_sd_reduction", c.thresholds.min_sd_reduction, "thresholds");
    read(t, "max_sd_change", c.thresholds.max_sd_change, "thresholds");
    read(t, "max_epe_ratio", c.thresholds.max_epe_ratio, "thresholds");
    read(t, "max_field_sup", c.thresholds.max_field_sup, "thresholds");
  }
  if (document.contains("png_dir")) {
    std::string dir;
    read(document, "png_dir", dir, "experiment");
    c.png_dir = base / dir;
  }

  if (!document.contains("cases") || !document.at("cases").is_array() || document.at("cases").empty()) {
    throw Error(ErrorKind::config, "experiment needs a non-empty 'cases' array");
  }
  const json& cases = document.at("cases");
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const json& j = cases[i];
    const std::string where = "cases[" + std::to_string(i) + "]";
    reject_unknown(j, {"name", "phantom", "input", "mask"}, where);
    ExperimentCase ec;
    ec.name = "case-" + std::to_string(i);
    read(j, "name", ec.name, where);
    if (j.contains("phantom") == j.contains("input")) {
      throw Error(ErrorKind::config, where + " needs exactly one of 'phantom' or 'input'");
    }
    if (j.contains("phantom")) {
      ec.phantom = parse_phantom(j.at("phantom"), c.seed, where + ".phantom");
    } else {
      std::string input;
      read(j, "input", input, where);
      ec.input = base / input;
      if (j.contains("mask")) {
        std::string mask;
        read(j, "mask", mask, where);
        ec.mask = base / mask;
      }
    }
    c.cases.push_back(std::move(ec));
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::io, "cannot open experiment config '" + path.string() + "'");
  json document;
  try {
    document = json::parse(is);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::config, path.string() + ": " + e.what());
  }
  return parse_experiment_config(document, path.parent_path());
}

ExperimentReport run_experiment(const ExperimentConfig& config, int jobs) {
  if (jobs < 1) throw Error(ErrorKind::config, "jobs must be >= 1");
  const std::size_t count = config.cases.size();
  std::vector<std::optional<CaseReport>> reports(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        reports[i] = run_case(config.cases[i], config);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(jobs), count));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ExperimentReport out;
  out.seed = config.seed;
  out.config = config.source;
  for (auto& r : reports) {
    out.passed = out.passed && r->failures.empty();
    out.cases.push_back(std::move(*r));
  }
  return out;
}

json to_json(const ExperimentReport& report, bool include_timing) {
  json cases = json::array();
  for (const CaseReport& c : report.cases) {
    json rounds = json::array();
    for (const RoundReport& r : c.rounds) {
      rounds.push_back({{"round", r.round},
                        {"d_pca_before", r.d_pca_before},
                        {"d_pca_after", r.d_pca_after},
                        {"rpca_iterations", r.rpca_iterations},
                        {"rpca_error", r.rpca_error},
                        {"accepted_steps", r.accepted_steps},
                        {"rejected_steps", r.rejected_steps},
                        {"mean_displacement", r.mean_displacement}});
    }
    json entry{{"name", c.name},
               {"d_pca", {{"before", c.d_pca_before}, {"after", c.d_pca_after}}},
               {"roi_sd_ms", {{"before", c.roi_sd_before}, {"after", c.roi_sd_after}}},
               {"roi_t1_ms", {{"before", c.roi_t1_before}, {"after", c.roi_t1_after}}},
               {"endpoint_error", {{"before", epe_json(c.epe_before)}, {"after", epe_json(c.epe_after)}}},
               {"field", {{"sup", c.field_sup}, {"mean", c.field_mean}}},
               {"rounds", rounds},
               {"aborted", c.aborted},
               {"diagnostic", c.diagnostic},
               {"failures", c.failures},
               {"passed", c.failures.empty()}};
    if (include_timing) {
      entry["timing"] = {{"load_s", c.timing.load},
                         {"register_s", c.timing.registration},
                         {"fit_s", c.timing.fitting},
                         {"evaluate_s", c.timing.evaluation}};
    }
    cases.push_back(std::move(entry));
  }
  return json{{"version", version()},
              {"seed", report.seed},
              {"config", report.config},
              {"cases", cases},
              {"passed", report.passed}};
}

std::string to_csv(const json& document) {
  std::ostringstream out;
  out << "key,value\n";
  flatten(document, "", out);
  return out.str();
}

}  // namespace qmr
