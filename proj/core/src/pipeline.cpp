#include "splatnorm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "splatnorm/image.hpp"
#include "splatnorm/losses.hpp"

namespace splatnorm {

namespace {

Tensor randn(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  double* p = t.unique_data();
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) p[i] = rng.normal();
  return t;
}

// Rounds through float32 so in-memory samples match their PFM round trip.
Tensor round_f32(const Tensor& t) {
  Tensor out = t.clone();
  double* p = out.unique_data();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) p[i] = static_cast<double>(static_cast<float>(p[i]));
  return out;
}

std::string sample_path(const std::string& dir, const char* stem, int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04d.%s", stem, index, ext);
  return dir + "/" + buf;
}

}  // namespace

LightField light_from_config(const TrainConfig& cfg) {
  const double radiance[3] = {cfg.light_r, cfg.light_g, cfg.light_b};
  if (cfg.light == "ambient") return LightField::ambient(radiance);
  double dir[3] = {cfg.light_x, cfg.light_y, cfg.light_z};
  const double n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
  for (double& d : dir) d /= n;
  return LightField::directional(dir, radiance);
}

std::vector<DataSample> make_dataset(const TrainConfig& cfg) {
  const int s = cfg.image_size;
  const Camera cam = Camera::canonical(s, s);
  const LightField light = light_from_config(cfg);
  std::vector<DataSample> out;
  out.reserve(static_cast<size_t>(cfg.dataset_size));
  for (int i = 0; i < cfg.dataset_size; ++i) {
    const uint64_t scene_seed = Rng(cfg.seed).fork(5000 + static_cast<uint64_t>(i)).next_u64();
    SyntheticScene sc = make_synthetic(scene_seed, cfg.max_objects);
    sc.light = light;  // the pipeline shades under one known light
    sc.background[0] = sc.background[1] = sc.background[2] = 0.0;
    const SyntheticRender rr = raytrace(sc, cam);
    DataSample d;
    d.rgb = to_unit_tensor(to_u8(rr.rgb, 3));  // PNG quantization parity
    d.alpha = round_f32(rr.alpha);
    d.normal = round_f32(rr.normal);
    d.depth = round_f32(rr.depth);
    out.push_back(std::move(d));
  }
  return out;
}

void write_dataset(const std::string& dir, const TrainConfig& cfg) {
  std::filesystem::create_directories(dir);
  {
    const std::string manifest = serialize_config(cfg);
    FILE* f = std::fopen((dir + "/manifest.cfg").c_str(), "wb");
    if (!f) throw std::runtime_error("write_dataset: cannot write manifest in " + dir);
    std::fwrite(manifest.data(), 1, manifest.size(), f);
    std::fclose(f);
  }
  const std::vector<DataSample> data = make_dataset(cfg);
  for (int i = 0; i < cfg.dataset_size; ++i) {
    const DataSample& d = data[static_cast<size_t>(i)];
    write_png(sample_path(dir, "rgb", i, "png"), to_u8(d.rgb, 3));
    write_pfm(sample_path(dir, "alpha", i, "pfm"), d.alpha);
    write_pfm(sample_path(dir, "normal", i, "pfm"), d.normal);
    write_pfm(sample_path(dir, "depth", i, "pfm"), d.depth);
    write_png(sample_path(dir, "normal_preview", i, "png"), normal_preview(d.normal));
  }
}

std::vector<DataSample> load_dataset(const std::string& dir, const TrainConfig& cfg) {
  const TrainConfig manifest = load_config(dir + "/manifest.cfg");
  if (manifest.image_size != cfg.image_size || manifest.dataset_size != cfg.dataset_size)
    throw std::runtime_error("load_dataset: manifest geometry differs from the config (" +
                             std::to_string(manifest.image_size) + "px x" +
                             std::to_string(manifest.dataset_size) + " vs " +
                             std::to_string(cfg.image_size) + "px x" +
                             std::to_string(cfg.dataset_size) + ")");
  const int64_t s = cfg.image_size;
  std::vector<DataSample> out;
  out.reserve(static_cast<size_t>(cfg.dataset_size));
  for (int i = 0; i < cfg.dataset_size; ++i) {
    DataSample d;
    d.rgb = to_unit_tensor(read_png(sample_path(dir, "rgb", i, "png")));
    d.alpha = read_pfm(sample_path(dir, "alpha", i, "pfm"));
    d.normal = read_pfm(sample_path(dir, "normal", i, "pfm"));
    d.depth = read_pfm(sample_path(dir, "depth", i, "pfm"));
    if (d.rgb.rank() != 3 || d.rgb.dim(0) != s || d.rgb.dim(1) != s || d.rgb.dim(2) != 3 ||
        d.alpha.rank() != 2 || d.alpha.dim(0) != s || d.normal.rank() != 3 ||
        d.normal.dim(0) != s || d.depth.rank() != 2 || d.depth.dim(0) != s)
      throw std::runtime_error("load_dataset: sample " + std::to_string(i) +
                               " has unexpected extents");
    out.push_back(std::move(d));
  }
  return out;
}

Pipeline Pipeline::init(const TrainConfig& cfg) {
  Pipeline p;
  p.config = cfg;
  const Rng base(cfg.seed);
  Rng r1 = base.fork(1), r2 = base.fork(2), r3 = base.fork(3), r4 = base.fork(4),
      r5 = base.fork(5), r6 = base.fork(6);
  p.encoder = EncoderNet::init(r1, cfg.splat_count);
  p.fpn = FpnNet::init(r2);
  p.tex = TexEncoder::init(r3);
  p.fusion = FusionNet::init(r4);
  p.score = ScoreNet::init(r5);
  p.gate = GateNet::init(r6);
  p.schedule = NoiseSchedule::cosine(cfg.diffusion_steps, cfg.cosine_offset);
  p.last_scene = SceneParams::defaults(cfg.splat_count);
  return p;
}

void visit_encoder_block(Pipeline& p, const ParamVisitor& fn) {
  visit_params(p.encoder, fn);
  visit_params(p.fpn, fn);
}

void visit_diffusion_block(Pipeline& p, const ParamVisitor& fn) {
  visit_params(p.tex, fn);
  visit_params(p.fusion, fn);
  visit_params(p.score, fn);
  visit_params(p.gate, fn);
}

void visit_all_params(Pipeline& p, const ParamVisitor& fn) {
  visit_encoder_block(p, fn);
  visit_diffusion_block(p, fn);
}

uint64_t block_fingerprint(Pipeline& p, int which) {
  uint64_t h = kFnvOffsetBasis;
  const ParamVisitor fn = [&h](const std::string& name, Tensor& t) {
    h = fnv1a64(name.data(), name.size(), h);
    const uint64_t tf = tensor_fingerprint(t);
    h = fnv1a64(&tf, sizeof(tf), h);
  };
  if (which == 1)
    visit_encoder_block(p, fn);
  else if (which == 2)
    visit_diffusion_block(p, fn);
  else
    throw std::invalid_argument("block_fingerprint: which must be 1 or 2");
  return h;
}

namespace {

void visit_scene_blocks(SceneParams& sp, Tensor& bg, const ParamVisitor& fn) {
  fn("scene.mu", sp.mu);
  fn("scene.rot", sp.rot);
  fn("scene.log_scale", sp.log_scale);
  fn("scene.opacity_logit", sp.opacity_logit);
  fn("scene.kd_logit", sp.kd_logit);
  fn("scene.grad_h", sp.grad_h);
  fn("scene.log_xi", sp.log_xi);
  fn("scene.log_lambda", sp.log_lambda);
  fn("scene.background", bg);
}

}  // namespace

Checkpoint to_checkpoint(Pipeline& p) {
  Checkpoint ck;
  ck.config = p.config;
  ck.completed_stage = p.completed_stage;
  visit_all_params(p, [&ck](const std::string& name, Tensor& t) { ck.add(name, t.clone()); });
  Tensor bg({3}, {p.last_scene.background[0], p.last_scene.background[1],
                  p.last_scene.background[2]});
  visit_scene_blocks(p.last_scene, bg,
                     [&ck](const std::string& name, Tensor& t) { ck.add(name, t.clone()); });
  return ck;
}

Pipeline from_checkpoint(const Checkpoint& ck) {
  Pipeline p = Pipeline::init(ck.config);
  p.completed_stage = ck.completed_stage;
  const ParamVisitor restore = [&ck](const std::string& name, Tensor& t) {
    const Tensor* block = ck.find(name);
    if (!block)
      throw CheckpointIoError(CheckpointError::kMalformed,
                              "checkpoint: missing parameter block '" + name + "'");
    if (!shapes_equal(block->shape(), t.shape()))
      throw CheckpointIoError(CheckpointError::kMalformed,
                              "checkpoint: block '" + name + "' has shape " +
                                  shape_str(block->shape()) + ", expected " +
                                  shape_str(t.shape()));
    t = block->clone();
  };
  visit_all_params(p, restore);
  Tensor bg({3});
  visit_scene_blocks(p.last_scene, bg, restore);
  for (int i = 0; i < 3; ++i) p.last_scene.background[i] = bg.at(i);
  return p;
}

void save_pipeline(const std::string& path, Pipeline& p) {
  const Checkpoint ck = to_checkpoint(p);
  save_checkpoint(path, ck);
}

Pipeline load_pipeline(const std::string& path) { return from_checkpoint(load_checkpoint(path)); }

namespace {

struct SceneGraph {
  SceneVars sv;
  ProjVars proj;
  Var rotmat, n_world, n_map;
  ShadeVars shade;
  RenderVars render;
};

SceneGraph build_scene_graph(Tape& tape, const SceneVars& sv, const Camera& cam,
                             const LightField& light, const double bg[3],
                             const RenderOptions& opt) {
  SceneGraph g;
  g.sv = sv;
  Var cov3d = covariance_vars(sv.quat, sv.log_scale);
  g.proj = project_vars(tape, sv.mu, cov3d, cam);
  g.rotmat = quat_rotmat_vars(sv.quat);
  g.n_world = splat_normals_vars(tape, g.rotmat, sv.log_scale, sv.mu, cam);
  g.shade = shade_vars(tape, sv, g.n_world, light);
  g.n_map = normals_to_map_vars(tape, g.n_world, cam);
  g.render = rasterize_vars(tape, g.proj.mean2d, g.proj.cov2d, g.proj.depth, sv.sigma,
                            g.shade.color, g.n_map, g.proj.culled, cam.width, cam.height, bg, opt);
  return g;
}

// Minimal rotation taking each splat's current (camera-facing) normal onto
// the fused normal sampled at its projected pixel. Splats that are culled,
// project outside the image, land on an invalid fused pixel, or are
// antipodal to the target keep the identity.
Var aligned_quats(Tape& tape, const SceneGraph& g, Var n_fused,
                  const std::vector<char>& fused_valid, const Camera& cam) {
  const int64_t k = g.n_world.value().dim(0);
  const int64_t hw = static_cast<int64_t>(cam.height) * cam.width;

  const Tensor mean2d = g.proj.mean2d.value();
  std::vector<int64_t> rows(static_cast<size_t>(k), 0);
  std::vector<char> usable(static_cast<size_t>(k), 0);
  for (int64_t j = 0; j < k; ++j) {
    if (g.proj.culled[static_cast<size_t>(j)]) continue;
    const int64_t px = std::llround(mean2d.at(j * 2 + 0));
    const int64_t py = std::llround(mean2d.at(j * 2 + 1));
    if (px < 0 || px >= cam.width || py < 0 || py >= cam.height) continue;
    const int64_t row = py * cam.width + px;
    if (!fused_valid[static_cast<size_t>(row)]) continue;
    rows[static_cast<size_t>(j)] = row;
    usable[static_cast<size_t>(j)] = 1;
  }

  Var fused_rows = gather_rows(reshape(n_fused, {hw, 3}), rows);  // K x 3, map frame
  // map -> world: n = (F W)^T m with F = diag(1,-1,-1); as a row-vector
  // product that is m_row * (F W).
  Tensor fw({3, 3});
  {
    double* m = fw.unique_data();
    const double f[3] = {1.0, -1.0, -1.0};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m[r * 3 + c] = f[r] * cam.rotation[r * 3 + c];
  }
  Var b = matmul(fused_rows, tape.constant(fw));
  Var a = g.n_world;
  Var dot = sum_axis(mul(a, b), -1, /*keepdim=*/true);  // K x 1

  Tensor mask({k, 1});
  Tensor ident = Tensor::zeros({k, 4});
  {
    const Tensor dv = dot.value();
    double* pm = mask.unique_data();
    double* pi = ident.unique_data();
    for (int64_t j = 0; j < k; ++j) {
      const bool ok = usable[static_cast<size_t>(j)] && (1.0 + dv.at(j)) >= 1e-6;
      pm[j] = ok ? 1.0 : 0.0;
      if (!ok) pi[j * 4] = 1.0;
    }
  }
  Var ax = select(a, 1, 0), ay = select(a, 1, 1), az = select(a, 1, 2);
  Var bx = select(b, 1, 0), by = select(b, 1, 1), bz = select(b, 1, 2);
  Var cx = sub(mul(ay, bz), mul(az, by));
  Var cy = sub(mul(az, bx), mul(ax, bz));
  Var cz = sub(mul(ax, by), mul(ay, bx));
  Var q_raw = concat({add_const(dot, 1.0), stack_last({cx, cy, cz})}, 1);  // K x 4
  Var q = add(mul(q_raw, tape.constant(mask)), tape.constant(ident));
  return normalize_rows(q);
}

struct StageSetup {
  int steps = 0;
  int batch = 0;
  double lr = 0.0;
};

StageSetup stage_setup(const TrainConfig& cfg, int stage) {
  switch (stage) {
    case 1: return {cfg.stage1_steps, cfg.stage1_batch, cfg.stage1_lr};
    case 2: return {cfg.stage2_steps, cfg.stage2_batch, cfg.stage2_lr};
    default: return {cfg.stage3_steps, cfg.stage3_batch, cfg.stage3_lr};
  }
}

}  // namespace

StageReport train_stage(Pipeline& p, int stage, const std::vector<DataSample>& data,
                        bool verbose) {
  if (stage < 1 || stage > 3) throw std::invalid_argument("train_stage: stage must be 1, 2 or 3");
  if (p.completed_stage < stage - 1)
    throw std::runtime_error("train_stage: stage " + std::to_string(stage) +
                             " requires a checkpoint with completed stage " +
                             std::to_string(stage - 1));
  if (data.empty()) throw std::invalid_argument("train_stage: empty dataset");
  const TrainConfig& cfg = p.config;
  const int s = cfg.image_size;
  for (const DataSample& d : data)
    if (d.rgb.rank() != 3 || d.rgb.dim(0) != s || d.rgb.dim(1) != s || d.rgb.dim(2) != 3)
      throw std::invalid_argument("train_stage: sample extents do not match the config");

  const StageSetup setup = stage_setup(cfg, stage);
  const Camera cam = Camera::canonical(s, s);
  const LightField light = light_from_config(cfg);
  const double bg[3] = {0, 0, 0};
  RenderOptions opt;
  opt.tile_size = cfg.tile_size;
  const ReprojectionWeights rw{cfg.w_scale, cfg.w_contour, cfg.w_ssim};
  const int64_t k = cfg.splat_count;
  const int tstar = std::max(1, p.schedule.steps / kOneStepDivisor);
  Rng rng = Rng(cfg.seed).fork(100 + static_cast<uint64_t>(stage));
  SgdMomentum sgd{setup.lr, cfg.momentum, cfg.grad_clip};

  // Stage 2 trains the generator against renders of the frozen regressor;
  // those targets and geometry features never change, so compute them once.
  std::vector<Tensor> pre_n0, pre_fgeo;
  if (stage == 2) {
    pre_n0.reserve(data.size());
    pre_fgeo.reserve(data.size());
    for (const DataSample& d : data) {
      Tape tape;
      Binder frz(tape, /*train=*/false);
      Var heads = forward(frz, p.encoder, {d.rgb}, /*training=*/false);
      SceneVars sv = head_to_scene(tape, reshape(heads, {k, kSplatFeatureDim}));
      SceneGraph g = build_scene_graph(tape, sv, cam, light, bg, opt);
      Var grid = splat_param_grid(tape, sv, g.proj, cam);
      FeaturePyramid pyr = forward(frz, p.fpn, grid);
      pre_n0.push_back(g.render.normal.value().clone());
      pre_fgeo.push_back(pyr.f1.value().clone());
    }
  }

  StageReport rep;
  rep.stage = stage;
  rep.losses.reserve(static_cast<size_t>(setup.steps));
  for (int step = 0; step < setup.steps; ++step) {
    Tape tape;
    Binder bind(tape, /*train=*/true);
    std::vector<size_t> idx(static_cast<size_t>(setup.batch));
    for (size_t& i : idx) i = static_cast<size_t>(rng.next_below(data.size()));
    std::vector<Var> parts;
    parts.reserve(idx.size());

    if (stage == 2) {
      for (const size_t ix : idx) {
        const DataSample& d = data[ix];
        const int t = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(p.schedule.steps)));
        const Tensor eps = randn(rng, pre_n0[ix].shape());
        const Tensor xt = forward_noise(p.schedule, pre_n0[ix], t, eps);
        Var cond;  // null unless the draw keeps the condition
        if (!drop_condition(rng, cfg.condition_dropout)) {
          Var f_tex = forward(bind, p.tex, tape.constant(d.rgb));
          cond = forward(bind, p.fusion, f_tex, tape.constant(pre_fgeo[ix]));
        }
        Var eps_hat = forward(bind, p.score, tape.constant(xt), t, cond);
        parts.push_back(mse_loss(eps_hat, tape.constant(eps)));
      }
    } else {
      std::vector<Tensor> imgs;
      imgs.reserve(idx.size());
      for (const size_t ix : idx) imgs.push_back(data[ix].rgb);
      Var heads = forward(bind, p.encoder, imgs, /*training=*/true);  // [B, K*18]
      for (size_t bi = 0; bi < idx.size(); ++bi) {
        const DataSample& d = data[idx[bi]];
        Var k18 = reshape(slice(heads, 0, static_cast<int64_t>(bi), 1), {k, kSplatFeatureDim});
        SceneVars sv = head_to_scene(tape, k18);
        SceneGraph g1 = build_scene_graph(tape, sv, cam, light, bg, opt);
        Var target_rgb = tape.constant(d.rgb);
        Var target_alpha = tape.constant(d.alpha);
        if (stage == 1) {
          Var li = reprojection_loss(g1.render.rgb, g1.render.alpha, sv.log_scale, target_rgb,
                                     target_alpha, rw);
          li = add(li, scale(energy_loss_vars(g1.shade.color, g1.render.contribution),
                             cfg.w_energy));
          parts.push_back(li);
          continue;
        }
        // stage 3: one-step refinement, gate, orientation write-back, second render
        Var grid = splat_param_grid(tape, sv, g1.proj, cam);
        FeaturePyramid pyr = forward(bind, p.fpn, grid);
        Var f_tex = forward(bind, p.tex, target_rgb);
        Var f_fuse = forward(bind, p.fusion, f_tex, pyr.f1);
        Var x_t = forward_noise_vars(p.schedule, g1.render.normal, tstar,
                                     tape.constant(randn(rng, {s, s, 3})));
        Var eps_hat = forward(bind, p.score, x_t, tstar, f_fuse);
        Var n_diff = normalize_pixels_hwc(predict_x0_vars(p.schedule, x_t, tstar, eps_hat));
        Var gate = forward(bind, p.gate, g1.render.normal, n_diff, g1.render.alpha);
        std::vector<char> fused_valid;
        Var n_fused = gated_fuse_vars(g1.render.normal, n_diff, gate, &fused_valid);
        Var q_align = aligned_quats(tape, g1, n_fused, fused_valid, cam);
        SceneVars sv2 = sv;
        sv2.quat = normalize_rows(quat_mul_vars(q_align, sv.quat));
        SceneGraph g2 = build_scene_graph(tape, sv2, cam, light, bg, opt);
        Var li = reprojection_loss(g2.render.rgb, g2.render.alpha, sv.log_scale, target_rgb,
                                   target_alpha, rw);
        li = add(li, scale(energy_loss_vars(g2.shade.color, g2.render.contribution),
                           cfg.w_energy));
        parts.push_back(li);
      }
    }

    Var total = parts[0];
    for (size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
    total = scale(total, 1.0 / static_cast<double>(parts.size()));
    tape.backward(total);
    sgd.step(tape, bind.bound);

    const double loss = scalar_of(total);
    rep.losses.push_back(loss);
    if (verbose && (step % std::max(1, setup.steps / 20) == 0 || step + 1 == setup.steps))
      std::fprintf(stderr, "stage %d step %d/%d loss %.6f\n", stage, step + 1, setup.steps, loss);
  }

  if (!rep.losses.empty()) {
    rep.initial_loss = rep.losses.front();
    rep.final_loss = rep.losses.back();
  }
  p.completed_stage = std::max(p.completed_stage, stage);

  {  // remember the predicted scene of sample 0 for render-from-checkpoint
    Tape tape;
    Binder frz(tape, /*train=*/false);
    Var heads = forward(frz, p.encoder, {data[0].rgb}, /*training=*/false);
    p.last_scene =
        scene_params_from_head(reshape(heads, {k, kSplatFeatureDim}).value(), bg);
  }
  return rep;
}

EstimateResult estimate(Pipeline& p, const Tensor& rgb) {
  const TrainConfig& cfg = p.config;
  const int s = cfg.image_size;
  if (rgb.rank() != 3 || rgb.dim(0) != s || rgb.dim(1) != s || rgb.dim(2) != 3)
    throw std::invalid_argument("estimate: image must be [" + std::to_string(s) + "," +
                                std::to_string(s) + ",3]");
  const Camera cam = Camera::canonical(s, s);
  const LightField light = light_from_config(cfg);
  const double bg[3] = {0, 0, 0};
  RenderOptions opt;
  opt.tile_size = cfg.tile_size;
  const int64_t k = cfg.splat_count;
  const int tstar = std::max(1, p.schedule.steps / kOneStepDivisor);

  Tape tape;
  Binder frz(tape, /*train=*/false);
  Var heads = forward(frz, p.encoder, {rgb}, /*training=*/false);
  Var k18 = reshape(heads, {k, kSplatFeatureDim});
  EstimateResult er;
  er.scene = scene_params_from_head(k18.value(), bg);
  SceneVars sv = head_to_scene(tape, k18);
  SceneGraph g = build_scene_graph(tape, sv, cam, light, bg, opt);
  Var grid = splat_param_grid(tape, sv, g.proj, cam);
  FeaturePyramid pyr = forward(frz, p.fpn, grid);
  Var f_tex = forward(frz, p.tex, tape.constant(rgb));
  Var f_fuse = forward(frz, p.fusion, f_tex, pyr.f1);
  // deterministic refinement: no injected noise
  Var x_t = forward_noise_vars(p.schedule, g.render.normal, tstar,
                               tape.constant(Tensor::zeros({s, s, 3})));
  Var eps_hat = forward(frz, p.score, x_t, tstar, f_fuse);
  Var n_diff = normalize_pixels_hwc(predict_x0_vars(p.schedule, x_t, tstar, eps_hat));
  Var gate = forward(frz, p.gate, g.render.normal, n_diff, g.render.alpha);
  Var n_fused = gated_fuse_vars(g.render.normal, n_diff, gate, &er.valid);
  er.rgb = g.render.rgb.value().clone();
  er.alpha = g.render.alpha.value().clone();
  er.n_3dgs = g.render.normal.value().clone();
  er.n_diff = n_diff.value().clone();
  er.n_fused = n_fused.value().clone();
  return er;
}

RenderOutput render_view(Pipeline& p, const SceneParams& scene, const Camera& cam) {
  RenderOptions opt;
  opt.tile_size = p.config.tile_size;
  return render(materialize(scene), cam, light_from_config(p.config), opt);
}

}  // namespace splatnorm
