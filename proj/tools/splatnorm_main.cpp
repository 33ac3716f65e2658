// Command-line surface: gen / train / estimate / render / eval / gradcheck.
// Runtime failures exit 1 with a one-line diagnostic; bad usage exits 2.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "splatnorm/camera.hpp"
#include "splatnorm/config.hpp"
#include "splatnorm/gradcheck.hpp"
#include "splatnorm/image.hpp"
#include "splatnorm/metrics.hpp"
#include "splatnorm/pipeline.hpp"

using namespace splatnorm;

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Normal maps travel either as PFM (exact) or as the preview PNG encoding.
Tensor read_normal_map(const std::string& path) {
  if (ends_with(path, ".pfm")) {
    Tensor t = read_pfm(path);
    if (t.rank() != 3 || t.dim(2) != 3)
      throw std::runtime_error(path + ": expected a 3-channel PFM normal map");
    return t;
  }
  return normal_from_preview(read_png(path));
}

void write_normal_map(const std::string& path, const Tensor& nm) {
  if (ends_with(path, ".pfm"))
    write_pfm(path, nm);
  else
    write_png(path, normal_preview(nm));
}

// Zero rows mark empty pixels in both on-disk encodings.
Tensor coverage_of(const Tensor& nm) {
  const int64_t h = nm.dim(0), w = nm.dim(1);
  Tensor cov = Tensor::zeros({h, w});
  double* c = cov.unique_data();
  for (int64_t i = 0; i < h * w; ++i) {
    double n2 = 0;
    for (int k = 0; k < 3; ++k) {
      const double v = nm.at(i * 3 + k);
      n2 += v * v;
    }
    if (std::sqrt(n2) >= 1e-8) c[i] = 1.0;
  }
  return cov;
}

TrainConfig config_or_default(const std::string& path) {
  if (path.empty()) return TrainConfig{};
  return load_config(path);
}

int run_gen(const std::string& config_path, const std::string& out_dir) {
  const TrainConfig cfg = config_or_default(config_path);
  write_dataset(out_dir, cfg);
  std::printf("wrote %d samples (%dx%d) to %s\n", cfg.dataset_size, cfg.image_size,
              cfg.image_size, out_dir.c_str());
  return 0;
}

int run_train(int stage, const std::string& config_path, const std::string& out_path,
              const std::string& init_path, const std::string& data_dir) {
  const TrainConfig cfg = load_config(config_path);
  Pipeline p = init_path.empty() ? Pipeline::init(cfg) : load_pipeline(init_path);
  if (!init_path.empty() && serialize_config(p.config) != serialize_config(cfg))
    throw std::runtime_error("config file disagrees with the checkpoint's embedded config");
  const std::vector<DataSample> data =
      data_dir.empty() ? make_dataset(cfg) : load_dataset(data_dir, cfg);
  const StageReport report = train_stage(p, stage, data, /*verbose=*/true);
  save_pipeline(out_path, p);
  std::printf("stage %d: loss %.6f -> %.6f over %zu steps; checkpoint %s\n", report.stage,
              report.initial_loss, report.final_loss, report.losses.size(), out_path.c_str());
  return 0;
}

int run_estimate(const std::string& ckpt, const std::string& image_path,
                 const std::string& out_normal) {
  Pipeline p = load_pipeline(ckpt);
  const Tensor rgb = to_unit_tensor(read_png(image_path));
  EstimateResult er = estimate(p, rgb);
  write_normal_map(out_normal, er.n_fused);
  int64_t valid = 0;
  for (char v : er.valid) valid += v ? 1 : 0;
  std::printf("estimated %lldx%lld normals (%lld valid px) -> %s\n",
              static_cast<long long>(er.n_fused.dim(0)), static_cast<long long>(er.n_fused.dim(1)),
              static_cast<long long>(valid), out_normal.c_str());
  return 0;
}

int run_render(const std::string& ckpt, const std::vector<double>& cam7,
               const std::string& out_path) {
  Pipeline p = load_pipeline(ckpt);
  const double eye[3] = {cam7[0], cam7[1], cam7[2]};
  const double target[3] = {cam7[3], cam7[4], cam7[5]};
  const double up[3] = {0.0, 1.0, 0.0};
  const int s = p.config.image_size;
  const Camera cam = Camera::look_at(eye, target, up, s, s, cam7[6]);
  const RenderOutput out = render_view(p, p.last_scene, cam);
  write_png(out_path, to_u8(out.rgb, 3));
  std::printf("rendered %dx%d view -> %s\n", s, s, out_path.c_str());
  return 0;
}

int run_eval(const std::string& pred_path, const std::string& gt_path,
             const std::string& report_path) {
  const Tensor pred = read_normal_map(pred_path);
  const Tensor gt = read_normal_map(gt_path);
  if (!shapes_equal(pred.shape(), gt.shape()))
    throw std::runtime_error("prediction and ground truth extents differ (" +
                             shape_str(pred.shape()) + " vs " + shape_str(gt.shape()) + ")");
  const NormalMetrics m = evaluate_normals(pred, gt, coverage_of(pred), coverage_of(gt));
  std::printf("mae_deg = %.4f\nmedae_deg = %.4f\nacc_11_25 = %.4f\nacc_22_5 = %.4f\n"
              "acc_30 = %.4f\nvalid_pixels = %lld\n",
              m.mae, m.medae, m.acc_11, m.acc_22, m.acc_30, static_cast<long long>(m.valid));
  if (!report_path.empty()) {
    nlohmann::json j{{"mae_deg", m.mae},     {"medae_deg", m.medae}, {"acc_11_25", m.acc_11},
                     {"acc_22_5", m.acc_22}, {"acc_30", m.acc_30},   {"valid_pixels", m.valid}};
    std::ofstream f(report_path);
    if (!f.good()) throw std::runtime_error("cannot write report to " + report_path);
    f << j.dump(2) << "\n";
  }
  return 0;
}

int run_gradcheck(uint64_t seed, int seeds_per_check) {
  const auto suite = run_gradient_suite(seed, seeds_per_check);
  int failures = 0;
  std::printf("%-22s %12s %10s %8s %s\n", "check", "max_rel_err", "tolerance", "skipped", "status");
  for (const auto& c : suite) {
    if (!c.passed) ++failures;
    std::printf("%-22s %12.3e %10.0e %8lld %s\n", c.name.c_str(), c.max_rel_error, c.tolerance,
                static_cast<long long>(c.skipped), c.passed ? "ok" : "FAIL");
  }
  return failures;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-splat surface normal estimation pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  CLI::App* gen = app.add_subcommand("gen", "Write a synthetic dataset directory");
  gen->add_option("--config", config_path, "Config file (defaults when omitted)");
  gen->add_option("--out", out_dir, "Output directory")->required();

  int stage = 1;
  std::string train_config, train_out, train_init, train_data;
  CLI::App* train = app.add_subcommand("train", "Run one training stage");
  train->add_option("--stage", stage, "Stage to run")->required()->check(CLI::Range(1, 3));
  train->add_option("--config", train_config, "Config file")->required();
  train->add_option("--out", train_out, "Checkpoint to write")->required();
  train->add_option("--init", train_init, "Checkpoint to start from (required for stages 2, 3)");
  train->add_option("--data", train_data, "Dataset directory (synthesized in memory when omitted)");

  std::string est_ckpt, est_image, est_out;
  CLI::App* est = app.add_subcommand("estimate", "Estimate a normal map for one image");
  est->add_option("--ckpt", est_ckpt, "Trained checkpoint")->required();
  est->add_option("--image", est_image, "Input RGB image (PNG)")->required();
  est->add_option("--out-normal", est_out, "Output normal map (.png preview or .pfm)")->required();

  std::string rnd_ckpt, rnd_out;
  std::vector<double> cam7;
  CLI::App* rnd = app.add_subcommand("render", "Render the checkpoint's scene from a new camera");
  rnd->add_option("--ckpt", rnd_ckpt, "Trained checkpoint")->required();
  rnd->add_option("--camera", cam7, "ex,ey,ez,tx,ty,tz,focal")->required()->delimiter(',')
      ->expected(7);
  rnd->add_option("--out", rnd_out, "Output PNG")->required();

  std::string ev_pred, ev_gt, ev_report;
  CLI::App* ev = app.add_subcommand("eval", "Compare two normal maps");
  ev->add_option("--pred", ev_pred, "Predicted normal map (.png preview or .pfm)")->required();
  ev->add_option("--gt", ev_gt, "Ground-truth normal map")->required();
  ev->add_option("--report", ev_report, "JSON report path (stdout only when omitted)");

  uint64_t gc_seed = 1;
  int gc_reps = 10;
  CLI::App* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  gc->add_option("--seed", gc_seed, "Base seed");
  gc->add_option("--seeds-per-check", gc_reps, "Random restarts per check")->check(CLI::Range(1, 100));

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return run_gen(config_path, out_dir);
    if (train->parsed()) return run_train(stage, train_config, train_out, train_init, train_data);
    if (est->parsed()) return run_estimate(est_ckpt, est_image, est_out);
    if (rnd->parsed()) return run_render(rnd_ckpt, cam7, rnd_out);
    if (ev->parsed()) return run_eval(ev_pred, ev_gt, ev_report);
    if (gc->parsed()) return run_gradcheck(gc_seed, gc_reps);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
