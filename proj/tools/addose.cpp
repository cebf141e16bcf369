// addose: anatomy-conditioned latent-diffusion dose prediction toolkit.
//
// Exit codes: 0 success, 2 flag/usage error, 3 missing or unreadable input,
// 4 incompatible checkpoint, 5 other runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "addose/constraints.hpp"
#include "addose/evaluation.hpp"
#include "addose/phantom.hpp"
#include "addose/training.hpp"
#include "addose/volumes.hpp"

namespace fs = std::filesystem;
using namespace addose;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitMissingInput = 3;
constexpr int kExitBadCheckpoint = 4;
constexpr int kExitRuntime = 5;

void require_dir(const std::string& path) {
  if (!fs::is_directory(path))
    throw std::runtime_error("missing input: directory not found: " + path);
}

std::vector<Case> load_case_dir(const std::string& dir) {
  require_dir(dir);
  std::vector<std::string> subdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "manifest.json"))
      subdirs.push_back(e.path().string());
  std::sort(subdirs.begin(), subdirs.end());
  if (subdirs.empty())
    throw std::runtime_error("missing input: no case directories in " + dir);
  std::vector<Case> cases;
  for (const auto& s : subdirs) cases.push_back(load_case(s));
  return cases;
}

std::vector<ConstraintSpec> resolve_constraints(const std::string& path) {
  if (path.empty()) return builtin_constraint_table();
  if (!fs::exists(path))
    throw std::runtime_error("missing input: constraint table not found: " + path);
  return load_constraint_table(path);
}

// key=value per line, '#' comments; the file wins over flags.
void apply_config_file(TrainConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing input: cannot open config: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": expected key=value");
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "stage")
      cfg.stage = val == "vae" ? TrainConfig::Stage::kVae
                               : TrainConfig::Stage::kDiffusion;
    else if (key == "epochs") cfg.epochs = std::stoll(val);
    else if (key == "batch") cfg.batch = std::stoll(val);
    else if (key == "lr0") cfg.lr0 = std::stod(val);
    else if (key == "lr_min") cfg.lr_min = std::stod(val);
    else if (key == "lambda1") cfg.lambda1 = std::stod(val);
    else if (key == "lambda2") cfg.lambda2 = std::stod(val);
    else if (key == "lambda3") cfg.lambda3 = std::stod(val);
    else if (key == "mixup_alpha") cfg.mixup_alpha = std::stod(val);
    else if (key == "patience") cfg.patience = std::stoll(val);
    else if (key == "kl_warmup_epochs") cfg.kl_warmup_epochs = std::stoll(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "diffusion_steps") cfg.diffusion_steps = std::stoll(val);
    else if (key == "beta_start") cfg.beta_start = std::stod(val);
    else if (key == "beta_end") cfg.beta_end = std::stod(val);
    else if (key == "max_steps") cfg.max_steps = std::stoll(val);
    else if (key == "validate_every") cfg.validate_every = std::stoll(val);
    else
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": unknown config key '" + key + "'");
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Anatomy-conditioned latent-diffusion dose prediction"};
  app.require_subcommand(1);

  // phantom
  auto* sc_phantom = app.add_subcommand("phantom", "Generate synthetic cases");
  std::string ph_site = "lung";
  std::int64_t ph_count = 1;
  std::uint64_t ph_seed = 0;
  std::string ph_out;
  bool ph_desk = false;
  sc_phantom->add_option("--site", ph_site, "Site: lung or head-neck");
  sc_phantom->add_option("--count", ph_count, "Number of cases");
  sc_phantom->add_option("--seed", ph_seed, "Base seed");
  sc_phantom->add_option("--out-dir", ph_out, "Output directory")->required();
  sc_phantom->add_flag("--desk-scale", ph_desk, "Reduced 32x32x32 grid");

  // train / pretrain-vae
  std::string tr_stage = "vae";
  std::string tr_data, tr_config, tr_resume, tr_out, tr_vae;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::int64_t> tr_epochs, tr_batch, tr_max_steps, tr_T,
      tr_validate_every, tr_patience;
  std::optional<double> tr_lambda2, tr_lr0, tr_lr_min;
  bool tr_desk = false;
  auto add_train_flags = [&](CLI::App* sc, bool with_stage) {
    if (with_stage)
      sc->add_option("--stage", tr_stage, "Training stage: vae or diffusion");
    sc->add_option("--data-dir", tr_data, "Directory of case containers")
        ->required();
    sc->add_option("--config", tr_config, "key=value config file (wins over flags)");
    sc->add_option("--resume", tr_resume, "Checkpoint to warm-start from");
    sc->add_option("--out", tr_out, "Output checkpoint directory")->required();
    sc->add_option("--seed", tr_seed, "Training seed (required)")->required();
    sc->add_option("--vae", tr_vae, "Stage-1 checkpoint (diffusion stage)");
    sc->add_option("--epochs", tr_epochs, "Epoch count");
    sc->add_option("--batch", tr_batch, "Batch size");
    sc->add_option("--max-steps", tr_max_steps, "Optimizer-step cap");
    sc->add_option("--steps", tr_T, "Diffusion steps T");
    sc->add_option("--lambda2", tr_lambda2, "Constraint-loss weight");
    sc->add_option("--lr0", tr_lr0, "Initial learning rate");
    sc->add_option("--lr-min", tr_lr_min, "Floor learning rate");
    sc->add_option("--validate-every", tr_validate_every,
                   "Epochs between compliance validations");
    sc->add_option("--patience", tr_patience, "Early-stop patience (epochs)");
    sc->add_flag("--desk-scale", tr_desk, "Reduced grids/ladders, T = 100");
  };
  auto* sc_train = app.add_subcommand("train", "Train a stage");
  add_train_flags(sc_train, true);
  auto* sc_pre = app.add_subcommand("pretrain-vae", "Stage-1 autoencoder training");
  add_train_flags(sc_pre, false);

  // predict
  std::string pr_case, pr_vae, pr_model, pr_out;
  std::optional<std::uint64_t> pr_seed;
  auto* sc_predict = app.add_subcommand("predict", "Sample a dose for a case");
  sc_predict->add_option("--case", pr_case, "Input case directory")->required();
  sc_predict->add_option("--vae", pr_vae, "Stage-1 checkpoint")->required();
  sc_predict->add_option("--model", pr_model, "Stage-2 checkpoint")->required();
  sc_predict->add_option("--seed", pr_seed, "Sampling seed (required)")->required();
  sc_predict->add_option("--out", pr_out, "Output case directory")->required();

  // evaluate
  std::string ev_pred, ev_ref, ev_constraints, ev_out;
  auto* sc_eval = app.add_subcommand("evaluate", "Compare predictions to references");
  sc_eval->add_option("--pred-dir", ev_pred, "Predicted case containers")->required();
  sc_eval->add_option("--ref-dir", ev_ref, "Reference case containers")->required();
  sc_eval->add_option("--constraints", ev_constraints,
                      "Constraint table (default: built-in)");
  sc_eval->add_option("--out", ev_out, "Report directory")->required();

  // dvh
  std::string dv_case, dv_out;
  double dv_bin = 0.1;
  auto* sc_dvh = app.add_subcommand("dvh", "Write DVH CSVs for a case");
  sc_dvh->add_option("--case", dv_case, "Case directory")->required();
  sc_dvh->add_option("--out", dv_out, "Output directory")->required();
  sc_dvh->add_option("--bin-width", dv_bin, "DVH bin width in Gy");

  // report
  std::string rp_case, rp_constraints;
  auto* sc_report = app.add_subcommand("report", "Print a compliance report");
  sc_report->add_option("--case", rp_case, "Case directory")->required();
  sc_report->add_option("--constraints", rp_constraints,
                        "Constraint table (default: built-in)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exits 0
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  }

  if (sc_phantom->parsed()) {
    if (ph_site != "lung" && ph_site != "head-neck" && ph_site != "head_neck")
      throw CLI::ValidationError("--site", "must be lung or head-neck");
    const Site site = site_from_string(ph_site);
    fs::create_directories(ph_out);
    for (std::int64_t i = 0; i < ph_count; ++i) {
      PhantomSpec spec = ph_desk ? desk_phantom_spec(site, ph_seed + i)
                                 : PhantomSpec{};
      if (!ph_desk) {
        spec.site = site;
        spec.seed = ph_seed + static_cast<std::uint64_t>(i);
      }
      Case c = generate_phantom(spec);
      save_case(c, ph_out + "/" + c.id);
      std::cout << "wrote " << ph_out << "/" << c.id << "\n";
    }
    return 0;
  }

  if (sc_train->parsed() || sc_pre->parsed()) {
    if (sc_pre->parsed()) tr_stage = "vae";
    if (tr_stage != "vae" && tr_stage != "diffusion")
      throw CLI::ValidationError("--stage", "must be vae or diffusion");
    const bool vae_stage = tr_stage == "vae";
    TrainConfig cfg = vae_stage ? TrainConfig::vae_defaults()
                                : TrainConfig::diffusion_defaults();
    cfg.seed = *tr_seed;
    cfg.desk = tr_desk;
    if (tr_desk) cfg.diffusion_steps = 100;
    if (tr_epochs) cfg.epochs = *tr_epochs;
    if (tr_batch) cfg.batch = *tr_batch;
    if (tr_max_steps) cfg.max_steps = *tr_max_steps;
    if (tr_T) cfg.diffusion_steps = *tr_T;
    if (tr_lambda2) cfg.lambda2 = *tr_lambda2;
    if (tr_lr0) cfg.lr0 = *tr_lr0;
    if (tr_lr_min) cfg.lr_min = *tr_lr_min;
    if (tr_validate_every) cfg.validate_every = *tr_validate_every;
    if (tr_patience) cfg.patience = *tr_patience;
    if (!tr_config.empty()) apply_config_file(cfg, tr_config);

    const auto cases = load_case_dir(tr_data);
    if (vae_stage) {
      VaeConfig vc = tr_desk ? VaeConfig::desk() : VaeConfig{};
      auto result = pretrain_vae(cases, cfg, vc, tr_out);
      if (!tr_resume.empty())
        std::cerr << "note: --resume is ignored for the vae stage\n";
      std::cout << "final reconstruction L1: " << result.final_metric << "\n";
    } else {
      if (tr_vae.empty())
        throw CLI::RequiredError("--vae (required for the diffusion stage)");
      UNetConfig uc = tr_desk ? UNetConfig::desk() : UNetConfig{};
      LoadedVae lv = load_vae(tr_vae);
      uc.in_channels = lv.model->config().latent_channels;
      auto result = train_diffusion(cases, tr_vae, cfg, uc, tr_out);
      std::cout << "best validation compliance: " << result.final_metric << "\n";
    }
    std::cout << "checkpoint written to " << tr_out << "\n";
    return 0;
  }

  if (sc_predict->parsed()) {
    if (!fs::exists(pr_case + "/manifest.json"))
      throw std::runtime_error("missing input: no case at " + pr_case);
    Case c = load_case(pr_case);
    LoadedVae vae = load_vae(pr_vae);
    LoadedDenoiser den = load_denoiser(pr_model);
    Rng rng(*pr_seed);
    Rng sample_rng = rng.split("predict");
    c.dose = predict_dose(c, *vae.model, den.latent_scale, *den.model,
                          den.schedule, sample_rng);
    c.id += "-pred";
    save_case(c, pr_out);
    std::cout << "wrote " << pr_out << "\n";
    return 0;
  }

  if (sc_eval->parsed()) {
    const auto specs = resolve_constraints(ev_constraints);
    require_dir(ev_pred);
    const auto refs = load_case_dir(ev_ref);
    fs::create_directories(ev_out);
    std::ofstream summary(ev_out + "/summary.tsv");
    summary << "case\tmae\tdice_mean\thd95_mm\tcompliance\tref_compliance\n";
    int evaluated = 0;
    for (const auto& ref : refs) {
      std::string pred_dir;
      for (const auto& e : fs::directory_iterator(ev_pred)) {
        if (!e.is_directory()) continue;
        if (!fs::exists(e.path() / "manifest.json")) continue;
        Case maybe = load_case(e.path().string());
        if (maybe.id == ref.id || maybe.id == ref.id + "-pred") {
          pred_dir = e.path().string();
          break;
        }
      }
      if (pred_dir.empty()) continue;
      Case pred = load_case(pred_dir);
      CaseReport report = evaluate_case(pred, ref, specs);
      write_case_report(report, pred, ev_out + "/" + ref.id);
      summary << ref.id << '\t' << report.mae_normalized << '\t'
              << report.dice.mean << '\t'
              << (report.hd95_mm ? std::to_string(*report.hd95_mm) : "undefined")
              << '\t' << report.compliance_rate << '\t'
              << report.reference_compliance_rate << '\n';
      ++evaluated;
    }
    if (evaluated == 0)
      throw std::runtime_error("missing input: no prediction matched any reference");
    std::cout << "evaluated " << evaluated << " case(s), reports in " << ev_out
              << "\n";
    return 0;
  }

  if (sc_dvh->parsed()) {
    if (!fs::exists(dv_case + "/manifest.json"))
      throw std::runtime_error("missing input: no case at " + dv_case);
    Case c = load_case(dv_case);
    if (!c.dose) throw std::runtime_error("missing input: case has no dose volume");
    fs::create_directories(dv_out);
    const auto gy_f = denormalize_dose(c.dose->values, c.dose->scale);
    const std::vector<double> gy(gy_f.begin(), gy_f.end());
    for (const auto& s : c.structures.structures) {
      bool empty = true;
      for (auto m : s.mask)
        if (m) { empty = false; break; }
      if (empty) continue;
      std::string fname = s.name;
      for (auto& ch : fname)
        if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
      const DVHCurve curve = dvh(gy, s.mask, s.name, dv_bin);
      std::ofstream csv(dv_out + "/dvh_" + fname + ".csv");
      csv << "dose_gy,volume_fraction\n";
      for (std::size_t i = 0; i < curve.edges_gy.size(); ++i)
        csv << curve.edges_gy[i] << "," << curve.volume_fraction[i] << "\n";
    }
    std::cout << "DVH CSVs written to " << dv_out << "\n";
    return 0;
  }

  if (sc_report->parsed()) {
    if (!fs::exists(rp_case + "/manifest.json"))
      throw std::runtime_error("missing input: no case at " + rp_case);
    Case c = load_case(rp_case);
    if (!c.dose) throw std::runtime_error("missing input: case has no dose volume");
    const auto specs = resolve_constraints(rp_constraints);
    const auto gy_f = denormalize_dose(c.dose->values, c.dose->scale);
    const auto report = compliance_report(std::vector<double>(gy_f.begin(), gy_f.end()),
                                          c.structures, specs,
                                          c.context.prescription_gy);
    std::cout << "structure\tkind\tachieved\tlimit\tpass\tmargin\n";
    for (const auto& e : report.entries)
      std::cout << e.structure << '\t' << e.kind << '\t' << e.achieved << '\t'
                << e.limit << '\t' << (e.passed ? "yes" : "no") << '\t' << e.margin
                << '\n';
    std::cout << "compliance_rate\t" << report.rate
              << (report.vacuous ? "\t(no active constraints)" : "") << "\n";
    return 0;
  }

  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    const std::string what = e.what();
    std::cerr << "error: " << what << "\n";
    if (what.starts_with("missing input")) return kExitMissingInput;
    if (what.starts_with("incompatible checkpoint")) return kExitBadCheckpoint;
    return kExitRuntime;
  }
}
