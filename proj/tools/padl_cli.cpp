// Command-line surface: train, protect, verify, eval, attack. Exit codes:
// 0 success, 2 usage/input error, 3 numerical failure during optimization.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "padl/checkpoint.hpp"
#include "padl/config_file.hpp"
#include "padl/plots.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

padl::Tensor load_image_any(const std::string& path) {
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".jpg" || ext == ".jpeg" || ext == ".JPG" || ext == ".JPEG") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return padl::jpeg_decode(bytes);
  }
  return padl::png_read(path);
}

padl::Tensor load_image_for(const padl::ModelConfig& cfg, const std::string& path) {
  return padl::bilinear_resize(load_image_any(path), cfg.image_height, cfg.image_width);
}

padl::Tensor load_folder(const std::string& dir, int H, int W) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".png" || ext == ".PNG" || ext == ".jpg" || ext == ".jpeg")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no images found in " + dir);
  padl::Tensor pool({static_cast<int>(files.size()), 3, H, W});
  for (std::size_t i = 0; i < files.size(); ++i) {
    padl::Tensor img = padl::bilinear_resize(load_image_any(files[i]), H, W);
    std::memcpy(pool.data() + i * static_cast<std::size_t>(3) * H * W, img.data(),
                sizeof(float) * 3 * H * W);
  }
  return pool;
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    const auto comma = csv.find(',', pos);
    const std::string tok =
        csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!tok.empty()) out.push_back(std::stoi(tok));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw std::invalid_argument("empty integer list: " + csv);
  return out;
}

// Defender loaded from either kind of checkpoint.
struct Defender {
  std::optional<padl::PADLModel> padl;
  std::optional<padl::BaselineModel> baseline;
  std::uint64_t protect_seed = 99;

  static Defender load(const std::string& path) {
    Defender d;
    padl::LoadedCheckpoint ckpt = padl::load_checkpoint(path);
    if (ckpt.metadata.value("kind", "padl") == "baseline")
      d.baseline = padl::baseline_from_checkpoint(path);
    else
      d.padl = padl::padl_from_checkpoint(path);
    return d;
  }

  const padl::ModelConfig& config() const {
    return padl ? padl->cfg : baseline->core.cfg;
  }

  padl::ProtectFn protect_fn() {
    if (padl) {
      padl::PADLModel* m = &*padl;
      return [m](const padl::Tensor& x) {
        padl::NoGradGuard off;
        return m->protect(x);
      };
    }
    padl::BaselineModel* m = &*baseline;
    auto rng = std::make_shared<padl::Rng>(protect_seed);
    return [m, rng](const padl::Tensor& x) {
      padl::NoGradGuard off;
      return m->protect(x, *rng);
    };
  }

  padl::DetectFn detect_fn() {
    if (padl) {
      padl::PADLModel* m = &*padl;
      return [m](const padl::Tensor& x) { return m->detect(x); };
    }
    padl::BaselineModel* m = &*baseline;
    return [m](const padl::Tensor& x) { return m->detect(x); };
  }
};

int cmd_train(const std::string& config_path, std::string out_path, std::string log_path,
              std::optional<std::uint64_t> seed_override, const std::string& images_dir) {
  padl::KeyValueConfig file = padl::KeyValueConfig::from_file(config_path);
  padl::ParsedTrainSetup setup = padl::parse_train_setup(file);
  if (seed_override) setup.train.seed = *seed_override;
  if (out_path.empty()) out_path = "padl.ckpt";
  if (log_path.empty()) log_path = out_path + ".log.jsonl";

  const int H = setup.model.image_height, W = setup.model.image_width;
  padl::Tensor pool = images_dir.empty()
                          ? padl::toy_batch(setup.train.seed * 7919 + 1, setup.train.train_pool,
                                            H, W)
                          : load_folder(images_dir, H, W);

  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw std::invalid_argument("cannot open log file " + log_path);
  std::vector<float> loss_tail;
  auto log_line = [&](int iter, const padl::LossBreakdown& lb) {
    json j = {{"iteration", iter}, {"rec", lb.rec}, {"map", lb.map},
              {"div", lb.div},     {"bce", lb.bce}, {"total", lb.total}};
    log << j.dump() << "\n";
    loss_tail.push_back(lb.total);
    if (loss_tail.size() > 20) loss_tail.erase(loss_tail.begin());
  };

  if (setup.model_kind == "baseline") {
    padl::BaselineModel model(setup.model, setup.num_perturbations, setup.train.seed);
    padl::BaselineTrainConfig bcfg;
    bcfg.iterations = setup.train.iterations;
    bcfg.batch_size = setup.train.batch_size;
    bcfg.learning_rate = setup.train.learning_rate;
    bcfg.enable_noise_injection = setup.train.enable_noise_injection;
    bcfg.seed = setup.train.seed;
    padl::train_baseline(model, bcfg, pool,
                         [&](int it, const padl::LossBreakdown& lb) { log_line(it, lb); });
    json meta = {{"iterations", setup.train.iterations},
                 {"seed", setup.train.seed},
                 {"loss_tail", loss_tail}};
    padl::save_baseline(out_path, model, meta);
  } else {
    padl::PADLModel model(setup.model, setup.train.seed);
    padl::Trainer trainer(model, setup.train);
    trainer.run(pool, log_line, [&](int iter) {
      json meta = {{"iterations", iter}, {"seed", setup.train.seed}, {"loss_tail", loss_tail}};
      if (!setup.excluded_degradation.empty())
        meta["excluded_degradation"] = setup.excluded_degradation;
      padl::save_padl(out_path, model, meta);
    });
  }
  std::cout << "checkpoint written to " << out_path << "\n";
  return 0;
}

int cmd_protect(const std::string& ckpt_path, const std::string& in_path,
                const std::string& out_path) {
  padl::PADLModel model = padl::padl_from_checkpoint(ckpt_path);
  padl::Tensor x = load_image_for(model.cfg, in_path);
  padl::NoGradGuard off;
  padl::Tensor tau = model.protect(x);
  float max_delta = 0.0f;
  for (std::size_t i = 0; i < x.numel(); ++i)
    max_delta = std::max(max_delta, std::abs(tau.data()[i] - x.data()[i]));
  const double mse = padl::protection_quality(x, tau);
  padl::png_write_rgb(out_path, tau);
  std::cout << json({{"out", out_path}, {"max_abs_delta", max_delta}, {"mse", mse}}).dump()
            << "\n";
  return 0;
}

int cmd_verify(const std::string& ckpt_path, const std::string& in_path,
               const std::string& map_path, bool as_json) {
  padl::PADLModel model = padl::padl_from_checkpoint(ckpt_path);
  padl::Tensor y = load_image_for(model.cfg, in_path);
  padl::DetectionResult res = model.detect(y);
  json j = {{"protected_intact", res.protected_intact[0] != 0}, {"score", res.scores[0]}};
  if (!map_path.empty()) {
    padl::png_write_gray(map_path, res.maps);
    j["map_path"] = map_path;
  }
  if (as_json)
    std::cout << j.dump() << "\n";
  else
    std::cout << (res.protected_intact[0] ? "protected (intact)" : "not protected / manipulated")
              << "  score=" << res.scores[0]
              << (map_path.empty() ? "" : "  map=" + map_path) << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, int toy_count, const std::string& images_dir,
             const std::string& report_path, const std::string& plots_dir,
             bool noise_sweep, std::uint64_t seed) {
  Defender defender = Defender::load(ckpt_path);
  const padl::ModelConfig& cfg = defender.config();
  padl::Tensor pool = images_dir.empty()
                          ? padl::toy_batch(seed * 31 + 17, toy_count, cfg.image_height,
                                            cfg.image_width)
                          : load_folder(images_dir, cfg.image_height, cfg.image_width);
  if (pool.dim(0) < 2) throw std::invalid_argument("evaluation dataset is empty or too small");

  padl::Rng rng(seed);
  padl::EvalReport report =
      padl::run_full_evaluation(defender.protect_fn(), defender.detect_fn(), pool, rng);
  json j = report.to_json();

  std::vector<float> sigmas = {0.01f, 0.02f, 0.05f, 0.1f};
  std::vector<double> fractions;
  if (noise_sweep) {
    fractions = padl::noise_robustness_sweep(defender.detect_fn(), pool, sigmas, rng);
    for (std::size_t i = 0; i < sigmas.size(); ++i)
      j["noise_sweep"].push_back({{"sigma", sigmas[i]}, {"fraction_protected", fractions[i]}});
  }

  if (!plots_dir.empty()) {
    fs::create_directories(plots_dir);
    // score histogram: protected vs everything else
    padl::Tensor protected_all = defender.protect_fn()(pool);
    padl::DetectionResult dp = defender.detect_fn()(protected_all);
    padl::DetectionResult dr = defender.detect_fn()(pool);
    std::vector<float> pos(dp.scores), negs(dr.scores);
    padl::plot_score_histogram((fs::path(plots_dir) / "score_histogram.png").string(), pos,
                               negs);
    if (noise_sweep)
      padl::plot_curve((fs::path(plots_dir) / "noise_sweep.png").string(), sigmas, fractions);
    // one qualitative overlay
    padl::Rng orng(seed + 1);
    padl::Tensor one = padl::detail::single_image(protected_all, 0);
    padl::ManipulationSpec spec =
        padl::random_manipulation_spec(orng, cfg.image_height, cfg.image_width);
    padl::Tensor manip = padl::toy_manipulate(one, spec);
    padl::Tensor gt = padl::ground_truth_map(one, manip);
    padl::DetectionResult dm = defender.detect_fn()(manip);
    padl::plot_map_overlay((fs::path(plots_dir) / "map_overlay.png").string(), manip, dm.maps,
                           &gt);
    j["plots_dir"] = plots_dir;
  }

  std::ofstream out(report_path, std::ios::trunc);
  if (!out) throw std::invalid_argument("cannot write report " + report_path);
  out << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_attack(const std::string& ckpt_path, const std::string& ks_csv, bool adaptive,
               int trials, int steps, float lr, int pool_size, int fresh_count,
               const std::string& report_path, std::uint64_t seed) {
  Defender defender = Defender::load(ckpt_path);
  const padl::ModelConfig& cfg = defender.config();
  const int H = cfg.image_height, W = cfg.image_width;

  // disjoint sources: attacker's protected pool, unprotected reference pool,
  // and fresh images for scoring
  padl::Tensor protect_pool = padl::toy_batch(seed * 101 + 1, pool_size, H, W);
  padl::Tensor unprotected_pool = padl::toy_batch(seed * 101 + 50021, pool_size, H, W);
  padl::Tensor fresh = padl::toy_batch(seed * 101 + 90001, fresh_count, H, W);

  padl::AttackConfig acfg;
  acfg.adaptive = adaptive;
  acfg.trials = trials;
  acfg.steps = steps;
  acfg.learning_rate = lr;
  acfg.seed = seed;

  std::vector<int> ks = parse_int_list(ks_csv);
  std::vector<padl::AttackSweepRow> rows = padl::run_attack_sweep(
      defender.protect_fn(), defender.detect_fn(), protect_pool, unprotected_pool, fresh, ks,
      acfg);

  json j;
  j["adaptive"] = adaptive;
  j["trials"] = trials;
  j["defender"] = ckpt_path;
  for (const auto& row : rows) {
    json r = {{"k", row.k},
              {"mean_rate", row.mean_rate},
              {"std_rate", row.std_rate},
              {"trial_rates", row.trial_rates}};
    j["rows"].push_back(r);
    std::cout << "K=" << row.k << "  fooled " << row.mean_rate << " +/- " << row.std_rate
              << "\n";
  }
  std::ofstream out(report_path, std::ios::trunc);
  if (!out) throw std::invalid_argument("cannot write report " + report_path);
  out << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PADL: proactive image-manipulation defense"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  bool deterministic = false;
  app.add_option("--seed", seed, "master RNG seed")->capture_default_str();
  app.add_flag("--deterministic", deterministic,
               "deterministic mode (all computation is single-threaded and seeded; "
               "this build is always deterministic)");

  auto* train = app.add_subcommand("train", "train a model from a config file");
  std::string config_path, out_path, log_path, images_dir;
  train->add_option("--config", config_path, "flat key=value config file")->required();
  train->add_option("--out", out_path, "checkpoint output path");
  train->add_option("--log", log_path, "JSON-lines training log path");
  train->add_option("--images", images_dir, "train on a folder of PNG/JPEG images");

  auto* protect = app.add_subcommand("protect", "embed a protective perturbation");
  std::string p_ckpt, p_in, p_out;
  protect->add_option("--checkpoint", p_ckpt)->required();
  protect->add_option("--in", p_in, "input image (PNG or JPEG)")->required();
  protect->add_option("--out", p_out, "output PNG")->required();

  auto* verify = app.add_subcommand("verify", "detect whether an image is protected intact");
  std::string v_ckpt, v_in, v_map;
  bool v_json = false;
  verify->add_option("--checkpoint", v_ckpt)->required();
  verify->add_option("--in", v_in)->required();
  verify->add_option("--emit-map", v_map, "write the manipulation map as grayscale PNG");
  verify->add_flag("--json", v_json, "machine-readable output");

  auto* eval = app.add_subcommand("eval", "full evaluation report");
  std::string e_ckpt, e_images, e_report = "eval_report.json", e_plots;
  int e_toy = 400;
  bool e_sweep = false;
  eval->add_option("--checkpoint", e_ckpt)->required();
  eval->add_option("--toy", e_toy, "held-out toy pool size")->capture_default_str();
  eval->add_option("--images", e_images, "evaluate on a folder of images instead");
  eval->add_option("--report", e_report)->capture_default_str();
  eval->add_option("--plots", e_plots, "directory for PNG panels");
  eval->add_flag("--noise-sweep", e_sweep, "include the noise robustness sweep");

  auto* attack = app.add_subcommand("attack", "reverse-engineering attack sweep");
  std::string a_ckpt, a_ks = "4,8,16,32,64", a_report = "attack_report.json";
  bool a_adaptive = false;
  int a_trials = 10, a_steps = 600, a_pool = 128, a_fresh = 64;
  float a_lr = 3e-3f;
  attack->add_option("--checkpoint", a_ckpt, "defender checkpoint (padl or baseline)")
      ->required();
  attack->add_option("--k", a_ks, "comma-separated protected-image counts")
      ->capture_default_str();
  attack->add_flag("--adaptive", a_adaptive, "one perturbation per protected image");
  attack->add_option("--trials", a_trials)->capture_default_str();
  attack->add_option("--steps", a_steps)->capture_default_str();
  attack->add_option("--lr", a_lr)->capture_default_str();
  attack->add_option("--pool-size", a_pool)->capture_default_str();
  attack->add_option("--fresh", a_fresh)->capture_default_str();
  attack->add_option("--report", a_report)->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  (void)deterministic;

  try {
    if (*train)
      return cmd_train(config_path, out_path, log_path,
                       app.count("--seed") ? std::optional<std::uint64_t>(seed) : std::nullopt,
                       images_dir);
    if (*protect) return cmd_protect(p_ckpt, p_in, p_out);
    if (*verify) return cmd_verify(v_ckpt, v_in, v_map, v_json);
    if (*eval) return cmd_eval(e_ckpt, e_toy, e_images, e_report, e_plots, e_sweep, seed);
    if (*attack)
      return cmd_attack(a_ckpt, a_ks, a_adaptive, a_trials, a_steps, a_lr, a_pool, a_fresh,
                        a_report, seed);
  } catch (const padl::TrainingDivergence& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
