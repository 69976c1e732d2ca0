#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ism/belavkin.hpp"
#include "ism/discrete.hpp"
#include "ism/errors.hpp"
#include "ism/kernel.hpp"
#include "ism/quantum.hpp"
#include "ism/scaling.hpp"

namespace ism {

enum class Scenario {
  discrete,
  diffusive,
  jump,
  quantum,
  belavkin_diffusive,
  belavkin_jump,
  validate,
  calibrate
};

inline const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::discrete: return "discrete";
    case Scenario::diffusive: return "diffusive";
    case Scenario::jump: return "jump";
    case Scenario::quantum: return "quantum";
    case Scenario::belavkin_diffusive: return "belavkin-diffusive";
    case Scenario::belavkin_jump: return "belavkin-jump";
    case Scenario::validate: return "validate";
    case Scenario::calibrate: return "calibrate";
  }
  return "?";
}

struct RunSettings {
  int steps = 0;         // discrete / quantum chains
  double horizon = 0.0;  // continuous scenarios
  double dt = 0.0;
  long trajectories = 1000;
  std::uint64_t seed = 0;
  int record_stride = 1;
  int threads = 0;  // 0 = hardware default (or ISM_THREADS via the CLI)
  SamplingMode sampling_mode = SamplingMode::predictive;
  double collapse_threshold = 0.0;  // 0 = scenario default
};

struct OutputSettings {
  std::string dir = "out";
  std::string trajectory_file = "trajectories.jsonl";
  std::string summary_file = "summary.tsv";
};

struct RunConfig {
  Scenario scenario = Scenario::discrete;
  std::optional<MeasurementKernel> kernel;
  std::optional<PointerDistribution> q0;
  std::optional<DiffusiveModel> diffusive;
  std::optional<JumpModel> jump;
  std::optional<QuantumApparatus> apparatus;
  std::optional<CMatrix> rho0;
  std::string runs_dir;
  RunSettings run;
  OutputSettings output;

  double collapse_threshold() const {
    if (run.collapse_threshold > 0.0) return run.collapse_threshold;
    // continuous limits concentrate more slowly; default per scenario kind
    switch (scenario) {
      case Scenario::diffusive:
      case Scenario::jump:
      case Scenario::belavkin_diffusive:
      case Scenario::belavkin_jump:
        return 1.0 - 1e-3;
      default:
        return 1.0 - 1e-6;
    }
  }
};

namespace config_detail {

using nlohmann::json;

struct Errors {
  std::vector<std::string> messages;
  void add(const std::string& path, const std::string& what) {
    messages.push_back(path + ": " + what);
  }
  void raise_if_any() const {
    if (!messages.empty()) throw config_error(messages);
  }
};

inline const json* get(const json& j, const std::string& key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

inline Eigen::VectorXd parse_vector(const json& j, const std::string& path, Errors& errs) {
  if (!j.is_array()) {
    errs.add(path, "expected an array of numbers");
    return Eigen::VectorXd();
  }
  Eigen::VectorXd v(static_cast<int>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) {
      errs.add(path + "[" + std::to_string(k) + "]", "expected a number");
      return Eigen::VectorXd();
    }
    v[static_cast<int>(k)] = j[k].get<double>();
  }
  return v;
}

inline Eigen::MatrixXd parse_matrix(const json& j, const std::string& path, Errors& errs) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) {
    errs.add(path, "expected an array of rows");
    return Eigen::MatrixXd();
  }
  const std::size_t cols = j[0].size();
  Eigen::MatrixXd m(static_cast<int>(j.size()), static_cast<int>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) {
      errs.add(path + "[" + std::to_string(r) + "]", "ragged row");
      return Eigen::MatrixXd();
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) {
        errs.add(path + "[" + std::to_string(r) + "][" + std::to_string(c) + "]",
                 "expected a number");
        return Eigen::MatrixXd();
      }
      m(static_cast<int>(r), static_cast<int>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

/// Complex matrices come in as {"re": [[..]], "im": [[..]]}; "im" may be
/// omitted for real matrices.
inline CMatrix parse_cmatrix(const json& j, const std::string& path, Errors& errs) {
  if (!j.is_object() || !get(j, "re")) {
    errs.add(path, "expected an object with \"re\" (and optional \"im\") matrices");
    return CMatrix();
  }
  const Eigen::MatrixXd re = parse_matrix(*get(j, "re"), path + ".re", errs);
  Eigen::MatrixXd im = Eigen::MatrixXd::Zero(re.rows(), re.cols());
  if (const json* jim = get(j, "im")) {
    im = parse_matrix(*jim, path + ".im", errs);
    if (im.rows() != re.rows() || im.cols() != re.cols()) {
      errs.add(path, "re/im shape mismatch");
      return CMatrix();
    }
  }
  if (re.size() == 0) return CMatrix();
  return re.cast<std::complex<double>>() + std::complex<double>(0.0, 1.0) * im.cast<std::complex<double>>();
}

inline CVector parse_cvector(const json& j, const std::string& path, Errors& errs) {
  if (!j.is_object() || !get(j, "re")) {
    errs.add(path, "expected an object with \"re\" (and optional \"im\") arrays");
    return CVector();
  }
  const Eigen::VectorXd re = parse_vector(*get(j, "re"), path + ".re", errs);
  Eigen::VectorXd im = Eigen::VectorXd::Zero(re.size());
  if (const json* jim = get(j, "im")) {
    im = parse_vector(*jim, path + ".im", errs);
    if (im.size() != re.size()) {
      errs.add(path, "re/im length mismatch");
      return CVector();
    }
  }
  if (re.size() == 0) return CVector();
  return re.cast<std::complex<double>>() + std::complex<double>(0.0, 1.0) * im.cast<std::complex<double>>();
}

inline std::vector<std::string> parse_labels(const json& j, const std::string& path,
                                             Errors& errs) {
  std::vector<std::string> out;
  if (!j.is_array()) {
    errs.add(path, "expected an array of strings");
    return out;
  }
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_string()) {
      errs.add(path + "[" + std::to_string(k) + "]", "expected a string");
      return {};
    }
    out.push_back(j[k].get<std::string>());
  }
  return out;
}

}  // namespace config_detail

/// Parses and fully validates a JSON run configuration.  All problems are
/// collected with their field paths and reported in one config_error.
inline RunConfig parse_config(const std::string& text) {
  using namespace config_detail;
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw config_error(std::string("config is not valid JSON: ") + e.what());
  }
  Errors errs;
  RunConfig cfg;

  // scenario
  const json* jscenario = get(root, "scenario");
  if (!jscenario || !jscenario->is_string()) {
    errs.add("scenario", "required string field");
    errs.raise_if_any();
  }
  const std::string sname = jscenario->get<std::string>();
  bool found = false;
  for (Scenario s : {Scenario::discrete, Scenario::diffusive, Scenario::jump, Scenario::quantum,
                     Scenario::belavkin_diffusive, Scenario::belavkin_jump, Scenario::validate,
                     Scenario::calibrate}) {
    if (sname == scenario_name(s)) {
      cfg.scenario = s;
      found = true;
    }
  }
  if (!found) {
    errs.add("scenario", "unknown scenario \"" + sname + "\"");
    errs.raise_if_any();
  }

  const json* jmodel = get(root, "model");
  if (!jmodel || !jmodel->is_object()) {
    if (cfg.scenario != Scenario::calibrate) {
      errs.add("model", "required object field");
      errs.raise_if_any();
    }
  }

  // exactly one model section may be present, and it must match the scenario
  if (jmodel) {
    int kinds = 0;
    const bool has_kernel = get(*jmodel, "kernel") != nullptr;
    const bool has_diffusive = get(*jmodel, "p0") || get(*jmodel, "gamma");
    const bool has_jump = get(*jmodel, "theta") || get(*jmodel, "star");
    const bool has_apparatus = get(*jmodel, "apparatus") != nullptr;
    const bool has_runs = get(*jmodel, "runs_dir") != nullptr;
    kinds += has_kernel ? 1 : 0;
    kinds += has_diffusive ? 1 : 0;
    kinds += has_jump ? 1 : 0;
    kinds += has_apparatus ? 1 : 0;
    kinds += has_runs ? 1 : 0;
    if (kinds > 1) errs.add("model", "ambiguous: more than one model section present");
    errs.raise_if_any();

    auto require_kind = [&](bool present, const char* what) {
      if (!present) {
        errs.add("model", std::string("scenario \"") + sname + "\" needs a " + what +
                              " model section");
        errs.raise_if_any();
      }
    };

    switch (cfg.scenario) {
      case Scenario::discrete:
      case Scenario::validate: {
        require_kind(has_kernel, "kernel");
        const json& jk = *get(*jmodel, "kernel");
        auto pl = parse_labels(jk.contains("pointer_labels") ? jk["pointer_labels"] : json(),
                               "model.kernel.pointer_labels", errs);
        auto ol = parse_labels(jk.contains("outcome_labels") ? jk["outcome_labels"] : json(),
                               "model.kernel.outcome_labels", errs);
        Eigen::MatrixXd probs;
        if (const json* jp = get(jk, "probs"))
          probs = parse_matrix(*jp, "model.kernel.probs", errs);
        else
          errs.add("model.kernel.probs", "required matrix field");
        errs.raise_if_any();
        if (static_cast<int>(pl.size()) != probs.rows())
          errs.add("model.kernel.pointer_labels",
                   "label count " + std::to_string(pl.size()) + " does not match probs rows " +
                       std::to_string(probs.rows()));
        if (static_cast<int>(ol.size()) != probs.cols())
          errs.add("model.kernel.outcome_labels",
                   "label count " + std::to_string(ol.size()) + " does not match probs cols " +
                       std::to_string(probs.cols()));
        errs.raise_if_any();
        try {
          cfg.kernel.emplace(pl, ol, probs);
        } catch (const error& e) {
          errs.add("model.kernel", e.what());
        }
        break;
      }
      case Scenario::diffusive: {
        require_kind(has_diffusive, "p0/gamma");
        Eigen::VectorXd p0;
        Eigen::MatrixXd gamma;
        if (const json* jp = get(*jmodel, "p0"))
          p0 = parse_vector(*jp, "model.p0", errs);
        else
          errs.add("model.p0", "required vector field");
        if (const json* jg = get(*jmodel, "gamma"))
          gamma = parse_matrix(*jg, "model.gamma", errs);
        else
          errs.add("model.gamma", "required matrix field");
        errs.raise_if_any();
        try {
          cfg.diffusive.emplace(p0, gamma);
        } catch (const error& e) {
          errs.add("model", e.what());
        }
        break;
      }
      case Scenario::jump: {
        require_kind(has_jump, "star/theta");
        Eigen::MatrixXd theta;
        int star = -1;
        if (const json* js = get(*jmodel, "star")) {
          if (js->is_number_integer())
            star = js->get<int>();
          else
            errs.add("model.star", "expected an integer outcome index");
        } else {
          errs.add("model.star", "required field");
        }
        if (const json* jt = get(*jmodel, "theta"))
          theta = parse_matrix(*jt, "model.theta", errs);
        else
          errs.add("model.theta", "required matrix field");
        errs.raise_if_any();
        try {
          cfg.jump.emplace(star, theta);
        } catch (const error& e) {
          errs.add("model", e.what());
        }
        break;
      }
      case Scenario::quantum:
      case Scenario::belavkin_diffusive:
      case Scenario::belavkin_jump: {
        require_kind(has_apparatus, "apparatus");
        const json& ja = *get(*jmodel, "apparatus");
        Eigen::VectorXd energies;
        if (const json* je = get(ja, "pointer_energies"))
          energies = parse_vector(*je, "model.apparatus.pointer_energies", errs);
        else
          errs.add("model.apparatus.pointer_energies", "required vector field");
        std::vector<CMatrix> blocks;
        if (const json* jb = get(ja, "interaction_blocks")) {
          if (!jb->is_array()) {
            errs.add("model.apparatus.interaction_blocks", "expected an array of matrices");
          } else {
            for (std::size_t k = 0; k < jb->size(); ++k)
              blocks.push_back(parse_cmatrix(
                  (*jb)[k], "model.apparatus.interaction_blocks[" + std::to_string(k) + "]",
                  errs));
          }
        } else {
          errs.add("model.apparatus.interaction_blocks", "required field");
        }
        CMatrix hp;
        if (const json* jh = get(ja, "probe_hamiltonian"))
          hp = parse_cmatrix(*jh, "model.apparatus.probe_hamiltonian", errs);
        CVector psi;
        if (const json* jp = get(ja, "probe_state"))
          psi = parse_cvector(*jp, "model.apparatus.probe_state", errs);
        else
          errs.add("model.apparatus.probe_state", "required field");
        CMatrix basis;
        if (const json* jb = get(ja, "probe_basis"))
          basis = parse_cmatrix(*jb, "model.apparatus.probe_basis", errs);
        double delta = 0.0;
        if (const json* jd = get(ja, "delta")) {
          if (jd->is_number())
            delta = jd->get<double>();
          else
            errs.add("model.apparatus.delta", "expected a number");
        } else {
          errs.add("model.apparatus.delta", "required field");
        }
        errs.raise_if_any();
        if (hp.size() == 0) hp = CMatrix::Zero(psi.size(), psi.size());
        if (basis.size() == 0) basis = CMatrix::Identity(psi.size(), psi.size());
        try {
          cfg.apparatus.emplace(energies, blocks, hp, psi, basis, delta);
        } catch (const error& e) {
          errs.add("model.apparatus", e.what());
        }
        errs.raise_if_any();
        if (const json* jr = get(*jmodel, "rho0"))
          cfg.rho0 = parse_cmatrix(*jr, "model.rho0", errs);
        break;
      }
      case Scenario::calibrate: {
        require_kind(has_runs, "runs_dir");
        const json* jr = get(*jmodel, "runs_dir");
        if (jr->is_string())
          cfg.runs_dir = jr->get<std::string>();
        else
          errs.add("model.runs_dir", "expected a string path");
        break;
      }
    }

    // q0 rides along with any classical-state scenario
    if (const json* jq = get(*jmodel, "q0")) {
      const Eigen::VectorXd w = parse_vector(*jq, "model.q0", errs);
      errs.raise_if_any();
      try {
        cfg.q0.emplace(w);
      } catch (const error& e) {
        errs.add("model.q0", e.what());
      }
    }
  }
  errs.raise_if_any();

  // run section
  if (const json* jrun = get(root, "run")) {
    auto num = [&](const char* key, double lo, double& out) {
      if (const json* j = get(*jrun, key)) {
        if (!j->is_number())
          errs.add(std::string("run.") + key, "expected a number");
        else if (j->get<double>() < lo)
          errs.add(std::string("run.") + key, "out of range");
        else
          out = j->get<double>();
      }
    };
    double steps = 0, traj = cfg.run.trajectories, stride = 1, threads = 0;
    num("steps", 1, steps);
    num("horizon", 0, cfg.run.horizon);
    num("dt", 0, cfg.run.dt);
    num("trajectories", 1, traj);
    num("record_stride", 1, stride);
    num("threads", 0, threads);
    num("collapse_threshold", 0, cfg.run.collapse_threshold);
    cfg.run.steps = static_cast<int>(steps);
    cfg.run.trajectories = static_cast<long>(traj);
    cfg.run.record_stride = static_cast<int>(stride);
    cfg.run.threads = static_cast<int>(threads);
    if (const json* js = get(*jrun, "seed")) {
      if (js->is_number_unsigned())
        cfg.run.seed = js->get<std::uint64_t>();
      else if (js->is_number_integer() && js->get<std::int64_t>() >= 0)
        cfg.run.seed = static_cast<std::uint64_t>(js->get<std::int64_t>());
      else
        errs.add("run.seed", "expected a nonnegative integer");
    }
    if (const json* jm = get(*jrun, "sampling_mode")) {
      const std::string m = jm->is_string() ? jm->get<std::string>() : "";
      if (m == "predictive")
        cfg.run.sampling_mode = SamplingMode::predictive;
      else if (m == "conditioned")
        cfg.run.sampling_mode = SamplingMode::conditioned;
      else
        errs.add("run.sampling_mode", "expected \"predictive\" or \"conditioned\"");
    }
  }

  // scenario-specific run requirements
  const bool discrete_like = cfg.scenario == Scenario::discrete ||
                             cfg.scenario == Scenario::quantum ||
                             cfg.scenario == Scenario::validate;
  const bool continuous = cfg.scenario == Scenario::diffusive || cfg.scenario == Scenario::jump ||
                          cfg.scenario == Scenario::belavkin_diffusive ||
                          cfg.scenario == Scenario::belavkin_jump;
  if (discrete_like && cfg.run.steps < 1) errs.add("run.steps", "required (>= 1)");
  if (continuous) {
    if (!(cfg.run.horizon > 0.0)) errs.add("run.horizon", "required (> 0)");
    if (!(cfg.run.dt > 0.0)) errs.add("run.dt", "required (> 0)");
  }

  // output section
  if (const json* jout = get(root, "output")) {
    auto str = [&](const char* key, std::string& out) {
      if (const json* j = get(*jout, key)) {
        if (j->is_string())
          out = j->get<std::string>();
        else
          errs.add(std::string("output.") + key, "expected a string");
      }
    };
    str("dir", cfg.output.dir);
    str("trajectory_file", cfg.output.trajectory_file);
    str("summary_file", cfg.output.summary_file);
  }

  // cross-checks: q0 / rho0 dimensions against the model
  if (cfg.q0) {
    int na = 0;
    if (cfg.kernel) na = cfg.kernel->n_pointers();
    if (cfg.diffusive) na = cfg.diffusive->n_pointers();
    if (cfg.jump) na = cfg.jump->n_pointers();
    if (cfg.apparatus) na = cfg.apparatus->system_dim();
    if (na > 0 && cfg.q0->size() != na)
      errs.add("model.q0", "dimension " + std::to_string(cfg.q0->size()) +
                               " does not match the model's pointer count " +
                               std::to_string(na));
  }
  if (cfg.rho0 && cfg.apparatus &&
      (cfg.rho0->rows() != cfg.apparatus->system_dim() ||
       cfg.rho0->cols() != cfg.apparatus->system_dim()))
    errs.add("model.rho0", "dimension does not match the system dimension");

  errs.raise_if_any();
  return cfg;
}

}  // namespace ism
