#pragma once

// Command-line front end: generate, refine, losses, evaluate, check.
// Needs CLI11.hpp on the include path (vendor/ in this repository).
//
// Exit codes: 0 ok, 1 usage/config, 2 I/O, 3 numerical degeneracy,
// 4 self-check failure.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rgdepth/errors.hpp"
#include "rgdepth/io.hpp"
#include "rgdepth/losses.hpp"
#include "rgdepth/refine.hpp"
#include "rgdepth/scenes.hpp"
#include "rgdepth/selfcheck.hpp"

namespace rgdepth::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum ExitCode : int { kOk = 0, kUsage = 1, kIo = 2, kNumerical = 3, kCheckFailed = 4 };

enum class FeatureSource { Derived, Intensity, Bundle };

struct RunConfig {
  std::string command;
  LossWeights weights;
  RefineOptions refine;
  SceneSpec scene;
  fs::path out, bundle, depth, init_depth, recon;
  std::optional<Real> init_value;
  FeatureSource features = FeatureSource::Derived;
  std::vector<std::string> filter;
  int workers = 1;
  bool json_output = false;
  bool inject_jacobian_sign = false;

  void validate() const {
    weights.validate();
    refine.validate();
    scene.validate();
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (init_value && !(*init_value > 0.0)) throw ConfigError("init_value must be positive");
  }
};

namespace detail {

inline void allow_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* a : keys) known = known || k == a;
    if (!known) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

inline Vec3 vec3(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(where + ": expected an array of 3 numbers");
  return {j[0].get<Real>(), j[1].get<Real>(), j[2].get<Real>()};
}

inline FeatureSource parse_features(const std::string& s) {
  if (s == "derived") return FeatureSource::Derived;
  if (s == "intensity") return FeatureSource::Intensity;
  if (s == "bundle") return FeatureSource::Bundle;
  throw ConfigError("features must be one of derived, intensity, bundle (got '" + s + "')");
}

template <class T>
void get_if(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

inline void apply_scene(const json& j, SceneSpec& s) {
  allow_keys(j, {"width", "height", "intrinsics", "plane", "texture", "sources", "d_min", "d_max"}, "scene");
  get_if(j, "width", s.width);
  get_if(j, "height", s.height);
  get_if(j, "d_min", s.d_min);
  get_if(j, "d_max", s.d_max);
  if (j.contains("intrinsics")) {
    const json& k = j.at("intrinsics");
    allow_keys(k, {"fx", "fy", "cx", "cy"}, "scene.intrinsics");
    get_if(k, "fx", s.intrinsics.fx);
    get_if(k, "fy", s.intrinsics.fy);
    get_if(k, "cx", s.intrinsics.cx);
    get_if(k, "cy", s.intrinsics.cy);
  }
  if (j.contains("plane")) {
    const json& p = j.at("plane");
    allow_keys(p, {"normal", "offset"}, "scene.plane");
    if (p.contains("normal")) s.plane_normal = vec3(p.at("normal"), "scene.plane.normal");
    get_if(p, "offset", s.plane_offset);
  }
  if (j.contains("texture")) {
    const json& t = j.at("texture");
    allow_keys(t, {"seed", "frequency"}, "scene.texture");
    get_if(t, "seed", s.texture_seed);
    get_if(t, "frequency", s.texture_frequency);
  }
  if (j.contains("sources")) {
    if (!j.at("sources").is_array()) throw ConfigError("scene.sources: expected an array");
    s.sources.clear();
    for (const json& src : j.at("sources")) {
      allow_keys(src, {"translation", "axis_angle"}, "scene.sources[]");
      const Vec3 t = src.contains("translation") ? vec3(src.at("translation"), "translation") : Vec3::Zero();
      const Vec3 aa = src.contains("axis_angle") ? vec3(src.at("axis_angle"), "axis_angle") : Vec3::Zero();
      s.sources.push_back(PoseSE3::from_axis_angle(aa, t));
    }
  }
}

inline void apply_weights(const json& j, LossWeights& w) {
  allow_keys(j, {"alpha", "lambda_sm", "lambda_dis", "lambda_cvt", "gamma"}, "weights");
  get_if(j, "alpha", w.alpha);
  get_if(j, "lambda_sm", w.lambda_sm);
  get_if(j, "lambda_dis", w.lambda_dis);
  get_if(j, "lambda_cvt", w.lambda_cvt);
  get_if(j, "gamma", w.gamma);
}

inline void apply_refine(const json& j, RefineOptions& r) {
  allow_keys(j,
             {"max_iters", "step_clamp_frac", "backtrack_max", "damping", "convergence_tol", "d_min", "d_max",
              "jtj_floor"},
             "refine");
  get_if(j, "max_iters", r.max_iters);
  get_if(j, "step_clamp_frac", r.step_clamp_frac);
  get_if(j, "backtrack_max", r.backtrack_max);
  get_if(j, "damping", r.damping);
  get_if(j, "convergence_tol", r.convergence_tol);
  get_if(j, "d_min", r.d_min);
  get_if(j, "d_max", r.d_max);
  get_if(j, "jtj_floor", r.jtj_floor);
}

}  // namespace detail

/// Overlays a JSON config document onto `cfg`. Unknown keys are rejected.
inline void apply_config(const json& j, RunConfig& cfg) {
  try {
    detail::allow_keys(j,
                       {"scene", "weights", "refine", "workers", "features", "out", "bundle", "depth", "init_depth",
                        "init_value", "recon", "filter"},
                       "config");
    if (j.contains("scene")) detail::apply_scene(j.at("scene"), cfg.scene);
    if (j.contains("weights")) detail::apply_weights(j.at("weights"), cfg.weights);
    if (j.contains("refine")) detail::apply_refine(j.at("refine"), cfg.refine);
    detail::get_if(j, "workers", cfg.workers);
    if (j.contains("features")) cfg.features = detail::parse_features(j.at("features").get<std::string>());
    const std::pair<const char*, fs::path*> paths[] = {{"out", &cfg.out},
                                                       {"bundle", &cfg.bundle},
                                                       {"depth", &cfg.depth},
                                                       {"init_depth", &cfg.init_depth},
                                                       {"recon", &cfg.recon}};
    for (const auto& [key, dst] : paths) {
      if (j.contains(key)) *dst = j.at(key).get<std::string>();
    }
    if (j.contains("init_value")) cfg.init_value = j.at("init_value").get<Real>();
    detail::get_if(j, "filter", cfg.filter);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_config(const fs::path& path, RunConfig cfg = {}) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  apply_config(j, cfg);
  return cfg;
}

namespace detail {

inline std::string fmt(Real v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

inline json metrics_json(const DepthMetrics& m) {
  return {{"abs_rel", m.abs_rel}, {"sq_rel", m.sq_rel}, {"rmse", m.rmse}, {"rmse_log", m.rmse_log},
          {"delta_1", m.delta_1}, {"delta_2", m.delta_2}, {"delta_3", m.delta_3}};
}

inline void print_metrics(std::ostream& out, const std::vector<std::pair<std::string, DepthMetrics>>& rows) {
  out << std::left << std::setw(10) << "" << std::right;
  for (const char* h : {"abs_rel", "sq_rel", "rmse", "rmse_log", "d<1.25", "d<1.25^2", "d<1.25^3"}) {
    out << std::setw(12) << h;
  }
  out << '\n' << std::fixed << std::setprecision(6);
  for (const auto& [name, m] : rows) {
    out << std::left << std::setw(10) << name << std::right;
    for (Real v : {m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta_1, m.delta_2, m.delta_3}) out << std::setw(12) << v;
    out << '\n';
  }
  out << std::defaultfloat;
}

inline void require(const fs::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("missing required ") + what);
}

/// Refuses outputs that would overwrite one of the command's inputs.
inline void guard_inputs(const fs::path& output, std::initializer_list<fs::path> inputs) {
  std::error_code ec;
  for (const auto& in : inputs) {
    if (!in.empty() && fs::exists(in) && fs::exists(output) && fs::equivalent(in, output, ec)) {
      throw ConfigError("refusing to overwrite input file " + in.string());
    }
  }
}

inline FeatureSet features_for(const SceneBundle& b, FeatureSource src, bool phi_role) {
  switch (src) {
    case FeatureSource::Derived:
      return derive_feature_set(b.target, b.sources);
    case FeatureSource::Intensity: {
      FeatureSet f{channel_mean(b.target), {}};
      for (const auto& s : b.sources) f.sources.push_back(channel_mean(s));
      return f;
    }
    case FeatureSource::Bundle: {
      const auto& stored = phi_role ? b.phi : b.feat;
      if (!stored) throw ConfigError(std::string("bundle has no stored ") + (phi_role ? "phi" : "feat") + " stacks");
      return *stored;
    }
  }
  throw ConfigError("unknown feature source");
}

}  // namespace detail

inline int cmd_generate(const RunConfig& cfg, std::ostream& out) {
  detail::require(cfg.out, "--out directory");
  // Everything is built and validated in memory before the first write.
  const SceneBundle b = generate(cfg.scene);
  const ConsistencyReport rep = rewarp_check(b, cfg.weights);
  io::write_bundle(cfg.out, b);
  json report{{"out", cfg.out.string()},
              {"width", b.spec.width},
              {"height", b.spec.height},
              {"sources", b.sources.size()},
              {"rewarp_photometric", rep.photometric},
              {"rewarp_mean_abs_error", rep.mean_abs_error}};
  if (cfg.json_output) {
    out << report.dump(2) << '\n';
  } else {
    out << "wrote " << b.sources.size() << "-source bundle (" << b.spec.width << "x" << b.spec.height << ") to "
        << cfg.out.string() << '\n';
    for (std::size_t s = 0; s < rep.photometric.size(); ++s) {
      out << "  source " << s << ": re-warp photometric " << detail::fmt(rep.photometric[s]) << ", mean |diff| "
          << detail::fmt(rep.mean_abs_error[s]) << '\n';
    }
  }
  return kOk;
}

inline int cmd_refine(const RunConfig& cfg, std::ostream& out) {
  detail::require(cfg.bundle, "--bundle directory");
  detail::require(cfg.out, "--out directory");
  if (cfg.init_depth.empty() == !cfg.init_value) {
    throw ConfigError("refine needs exactly one of --init-depth PATH or --init-value DEPTH");
  }
  const SceneBundle b = io::read_bundle(cfg.bundle);
  const DepthMap init = cfg.init_value ? DepthMap(b.spec.height, b.spec.width, *cfg.init_value, cfg.refine.d_min)
                                       : io::read_depth_pfm(cfg.init_depth, cfg.refine.d_min);
  const FeatureSet f = detail::features_for(b, cfg.features, false);
  RefineOptions opts = cfg.refine;
  opts.workers = cfg.workers;
  const RefineResult res = gn_refine(init, f.target, f.sources, b.intrinsics(), b.poses(), opts, &b.gt_depth);

  const fs::path depth_out = cfg.out / "depth_refined.pfm";
  const fs::path trace_out = cfg.out / "trace.json";
  for (const auto& o : {depth_out, trace_out}) {
    detail::guard_inputs(o, {cfg.init_depth, cfg.bundle / io::kManifestName, cfg.bundle / "depth_gt.pfm"});
  }
  fs::create_directories(cfg.out);
  io::write_depth_pfm(depth_out, res.depth);
  const json trace{{"error", res.trace.error},   {"accepted", res.trace.accepted}, {"masked", res.trace.masked},
                   {"rmse", res.trace.rmse},     {"converged", res.trace.converged},
                   {"iterations", res.trace.accepted.size()}};
  io::write_file(trace_out, trace.dump(2) + "\n");

  const DepthMetrics before = depth_metrics(init, b.gt_depth, res.observable);
  const DepthMetrics after = depth_metrics(res.depth, b.gt_depth, res.observable);
  json report{{"initial", detail::metrics_json(before)},
              {"refined", detail::metrics_json(after)},
              {"observable_pixels", res.observable.count()},
              {"iterations", res.trace.accepted.size()},
              {"converged", res.trace.converged},
              {"depth", depth_out.string()},
              {"trace", trace_out.string()}};
  if (cfg.json_output) {
    out << report.dump(2) << '\n';
  } else {
    out << "iterations " << res.trace.accepted.size() << (res.trace.converged ? " (converged)" : "")
        << ", observable pixels " << res.observable.count() << ", E " << detail::fmt(res.trace.error.front()) << " -> "
        << detail::fmt(res.trace.error.back()) << '\n';
    detail::print_metrics(out, {{"initial", before}, {"refined", after}});
  }
  io::write_file(cfg.out / "report.json", report.dump(2) + "\n");
  return kOk;
}

inline int cmd_losses(const RunConfig& cfg, std::ostream& out) {
  detail::require(cfg.bundle, "--bundle directory");
  const SceneBundle b = io::read_bundle(cfg.bundle);
  const DepthMap depth = cfg.depth.empty() ? b.gt_depth : io::read_depth_pfm(cfg.depth);
  if (!depth.same_grid(b.spec.height, b.spec.width)) throw DimensionError("depth map size differs from the bundle");
  const ImageBuffer recon = cfg.recon.empty() ? b.target : io::read_pfm(cfg.recon);
  const FeatureSet phi = detail::features_for(b, cfg.features, true);
  const FeatureSet feat = detail::features_for(b, cfg.features, false);
  EvaluateOptions eo;
  eo.gauss_newton.jtj_floor = cfg.refine.jtj_floor;
  eo.workers = cfg.workers;
  const LossReport r = evaluate_all(depth, b, phi, feat, recon, cfg.weights, eo);

  const json report{{"l_ph", r.l_ph},   {"l_sm", r.l_sm},   {"l_fm", r.l_fm},   {"l_g", r.l_g},
                    {"l_rec", r.l_rec}, {"l_dis", r.l_dis}, {"l_cvt", r.l_cvt}, {"l_ae", r.l_ae},
                    {"l_rg", r.l_rg},   {"total", r.total}};
  if (cfg.json_output) {
    out << report.dump(2) << '\n';
  } else {
    const LossWeights& w = cfg.weights;
    auto row = [&](const char* name, Real v, const std::string& note = {}) {
      out << "  " << std::left << std::setw(7) << name << std::right << std::setw(18) << detail::fmt(v);
      if (!note.empty()) out << "   " << note;
      out << '\n';
    };
    row("l_ph", r.l_ph);
    row("l_sm", r.l_sm);
    row("l_fm", r.l_fm);
    row("l_g", r.l_g, "= l_ph + l_fm + " + detail::fmt(w.lambda_sm) + " * l_sm");
    row("l_rec", r.l_rec);
    row("l_dis", r.l_dis);
    row("l_cvt", r.l_cvt);
    row("l_ae", r.l_ae, "= l_rec + " + detail::fmt(w.lambda_dis) + " * l_dis + " + detail::fmt(w.lambda_cvt) + " * l_cvt");
    row("l_rg", r.l_rg);
    row("total", r.total, "= l_ae + l_g + " + detail::fmt(w.gamma) + " * l_rg");
  }
  if (!cfg.out.empty()) {
    fs::create_directories(cfg.out);
    io::write_file(cfg.out / "losses.json", report.dump(2) + "\n");
  }
  return kOk;
}

inline int cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
  detail::require(cfg.bundle, "--bundle directory");
  detail::require(cfg.depth, "--depth file");
  const SceneBundle b = io::read_bundle(cfg.bundle);
  const DepthMap pred = io::read_depth_pfm(cfg.depth);
  if (!pred.same_grid(b.spec.height, b.spec.width)) throw DimensionError("depth map size differs from the bundle");
  const DepthMetrics m = depth_metrics(pred, b.gt_depth, ValidityMask(b.spec.height, b.spec.width, true));
  const json report = detail::metrics_json(m);
  if (cfg.json_output) {
    out << report.dump(2) << '\n';
  } else {
    detail::print_metrics(out, {{"depth", m}});
  }
  if (!cfg.out.empty()) {
    fs::create_directories(cfg.out);
    io::write_file(cfg.out / "metrics.json", report.dump(2) + "\n");
  }
  return kOk;
}

/// The Jacobian with its sign flipped: a deliberately broken implementation
/// used to confirm that the finite-difference suite catches it.
inline check::Hooks sign_flipped_hooks() {
  check::Hooks h;
  h.jacobian = [](const ImageBuffer& f, const PixelCoord& p, Real d, const CameraIntrinsics& k, const PoseSE3& t) {
    std::vector<Real> j = jacobian(f, p, d, k, t);
    for (Real& x : j) x = -x;
    return j;
  };
  return h;
}

inline int cmd_check(const RunConfig& cfg, std::ostream& out) {
  const check::Hooks hooks = cfg.inject_jacobian_sign ? sign_flipped_hooks() : check::Hooks{};
  const std::vector<check::CheckResult> results = check::run(cfg.filter, hooks);
  json report = json::array();
  std::vector<std::string> failed;
  for (const auto& r : results) {
    report.push_back({{"name", r.name}, {"passed", r.passed}, {"max_error", r.max_error}, {"detail", r.detail}});
    if (!r.passed) failed.push_back(r.name);
  }
  if (cfg.json_output) {
    out << report.dump(2) << '\n';
  } else {
    for (const auto& r : results) {
      out << (r.passed ? "ok    " : "FAIL  ") << std::left << std::setw(15) << r.name << std::right
          << " max error " << std::setw(12) << detail::fmt(r.max_error) << "   " << r.detail << '\n';
    }
    if (!failed.empty()) {
      out << "failed:";
      for (const auto& n : failed) out << ' ' << n;
      out << '\n';
    }
  }
  return failed.empty() ? kOk : kCheckFailed;
}

/// Parses arguments, runs the command and maps errors onto exit codes.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Residual-guidance depth refinement and loss toolkit", "rgdepth"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (flags override it)");

  struct Flags {
    std::string out, bundle, depth, init_depth, recon, features, fault;
    std::uint64_t seed = 0;
    int workers = 1, max_iters = 0;
    double gamma = 0, alpha = 0, init_value = 0;
    std::vector<std::string> filter;
    bool json_out = false;
  } f;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file (flags override it)");
    sub->add_option("--workers", f.workers, "worker threads for pixel loops")->check(CLI::PositiveNumber);
    sub->add_flag("--json", f.json_out, "print the report as JSON instead of a table");
  };

  CLI::App* gen = app.add_subcommand("generate", "render a synthetic scene bundle");
  common(gen);
  gen->add_option("--out", f.out, "output directory");
  gen->add_option("--seed", f.seed, "texture seed");

  CLI::App* ref = app.add_subcommand("refine", "Gauss-Newton depth refinement on a bundle");
  common(ref);
  ref->add_option("--bundle", f.bundle, "scene bundle directory");
  ref->add_option("--out", f.out, "output directory");
  ref->add_option("--init-depth", f.init_depth, "initial depth (PFM)");
  ref->add_option("--init-value", f.init_value, "uniform initial depth");
  ref->add_option("--max-iters", f.max_iters, "iteration cap")->check(CLI::NonNegativeNumber);
  ref->add_option("--features", f.features, "derived | intensity | bundle");

  CLI::App* los = app.add_subcommand("losses", "evaluate every loss term at a depth map");
  common(los);
  los->add_option("--bundle", f.bundle, "scene bundle directory");
  los->add_option("--depth", f.depth, "depth map (PFM); ground truth when omitted");
  los->add_option("--recon", f.recon, "reconstruction (PFM); the target image when omitted");
  los->add_option("--features", f.features, "derived | intensity | bundle");
  los->add_option("--out", f.out, "directory for losses.json");
  los->add_option("--gamma", f.gamma, "residual-guidance weight");
  los->add_option("--alpha", f.alpha, "SSIM / L1 mix");

  CLI::App* ev = app.add_subcommand("evaluate", "depth metrics against the bundle ground truth");
  common(ev);
  ev->add_option("--bundle", f.bundle, "scene bundle directory");
  ev->add_option("--depth", f.depth, "predicted depth (PFM)");
  ev->add_option("--out", f.out, "directory for metrics.json");

  CLI::App* chk = app.add_subcommand("check", "run the numerical self-checks");
  common(chk);
  chk->add_option("--filter", f.filter, "run only the named suite(s)");
  chk->add_option("--inject-fault", f.fault, "deliberately break an implementation")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    CLI::App* sub = app.get_subcommands().front();
    cfg.command = sub->get_name();
    auto given = [&](const char* name) {
      const CLI::Option* o = sub->get_option_no_throw(name);
      return o != nullptr && o->count() > 0;
    };
    if (given("--out")) cfg.out = f.out;
    if (given("--bundle")) cfg.bundle = f.bundle;
    if (given("--depth")) cfg.depth = f.depth;
    if (given("--init-depth")) cfg.init_depth = f.init_depth;
    if (given("--init-value")) cfg.init_value = f.init_value;
    if (given("--recon")) cfg.recon = f.recon;
    if (given("--features")) cfg.features = detail::parse_features(f.features);
    if (given("--seed")) cfg.scene.texture_seed = f.seed;
    if (given("--workers")) cfg.workers = f.workers;
    if (given("--max-iters")) cfg.refine.max_iters = f.max_iters;
    if (given("--gamma")) cfg.weights.gamma = f.gamma;
    if (given("--alpha")) cfg.weights.alpha = f.alpha;
    if (given("--filter")) cfg.filter = f.filter;
    if (given("--inject-fault")) {
      if (f.fault != "jacobian-sign") throw ConfigError("unknown fault '" + f.fault + "'");
      cfg.inject_jacobian_sign = true;
    }
    cfg.json_output = f.json_out;
    cfg.validate();

    if (cfg.command == "generate") return cmd_generate(cfg, out);
    if (cfg.command == "refine") return cmd_refine(cfg, out);
    if (cfg.command == "losses") return cmd_losses(cfg, out);
    if (cfg.command == "evaluate") return cmd_evaluate(cfg, out);
    return cmd_check(cfg, out);
  } catch (const NoObservabilityError& e) {
    err << "error: " << e.what() << '\n';
    return kNumerical;
  } catch (const EmptyReductionError& e) {
    err << "error: " << e.what() << '\n';
    return kNumerical;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << " (byte " << e.offset() << ")\n";
    return kIo;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
}

}  // namespace rgdepth::cli
