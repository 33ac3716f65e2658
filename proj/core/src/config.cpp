#include "splatnorm/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace splatnorm {
namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for '" + key + "': " + v);
  }
  if (used != v.size()) throw std::invalid_argument("config: bad integer for '" + key + "': " + v);
  return static_cast<int>(x);
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  size_t used = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for '" + key + "': " + v);
  }
  if (used != v.size()) throw std::invalid_argument("config: bad integer for '" + key + "': " + v);
  return static_cast<uint64_t>(x);
}

double parse_double(const std::string& key, const std::string& v) {
  size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for '" + key + "': " + v);
  }
  if (used != v.size()) throw std::invalid_argument("config: bad number for '" + key + "': " + v);
  return x;
}

void validate(const TrainConfig& c) {
  if (c.image_size < 16 || c.image_size % 16 != 0)
    throw std::invalid_argument("config: image_size must be >= 16 and a multiple of 16");
  if (c.light != "directional" && c.light != "ambient")
    throw std::invalid_argument("config: light must be 'directional' or 'ambient'");
  if (c.light == "directional" &&
      c.light_x * c.light_x + c.light_y * c.light_y + c.light_z * c.light_z < 1e-12)
    throw std::invalid_argument("config: light direction must be nonzero");
  if (c.light_r < 0 || c.light_g < 0 || c.light_b < 0)
    throw std::invalid_argument("config: light radiance must be non-negative");
  if (c.dataset_size < 1) throw std::invalid_argument("config: dataset_size must be >= 1");
  if (c.max_objects < 1) throw std::invalid_argument("config: max_objects must be >= 1");
  if (c.splat_count < 1) throw std::invalid_argument("config: splat_count must be >= 1");
  if (c.tile_size < 4) throw std::invalid_argument("config: tile_size must be >= 4");
  if (c.stage1_steps < 0 || c.stage2_steps < 0 || c.stage3_steps < 0)
    throw std::invalid_argument("config: stage steps must be >= 0");
  if (c.stage1_batch < 1 || c.stage2_batch < 1 || c.stage3_batch < 1)
    throw std::invalid_argument("config: batch sizes must be >= 1");
  if (c.stage1_lr <= 0 || c.stage2_lr <= 0 || c.stage3_lr <= 0)
    throw std::invalid_argument("config: learning rates must be positive");
  if (c.momentum < 0 || c.momentum >= 1)
    throw std::invalid_argument("config: momentum must be in [0, 1)");
  if (c.grad_clip <= 0) throw std::invalid_argument("config: grad_clip must be positive");
  if (c.diffusion_steps < 2) throw std::invalid_argument("config: diffusion_steps must be >= 2");
  if (c.cosine_offset <= 0) throw std::invalid_argument("config: cosine_offset must be positive");
  if (c.condition_dropout < 0 || c.condition_dropout >= 1)
    throw std::invalid_argument("config: condition_dropout must be in [0, 1)");
  if (c.w_scale < 0 || c.w_contour < 0 || c.w_ssim < 0 || c.w_energy < 0)
    throw std::invalid_argument("config: loss weights must be non-negative");
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> m = {
      {"image_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.image_size = parse_int(k, v); }},
      {"dataset_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.dataset_size = parse_int(k, v); }},
      {"seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }},
      {"max_objects", [](TrainConfig& c, const std::string& k, const std::string& v) { c.max_objects = parse_int(k, v); }},
      {"light", [](TrainConfig& c, const std::string&, const std::string& v) { c.light = v; }},
      {"light_x", [](TrainConfig& c, const std::string& k, const std::string& v) { c.light_x = parse_double(k, v); }},
      {"light_y", [](TrainConfig& c, const std::string& k, const std::string& v) { c.light_y = parse_double(k, v); }},
      {"light_z", [](TrainConfig& c, const std::string& k, const std::string& v) { c.light_z = parse_double(k, v); }},
      {"light_r", [](TrainConfig& c, const std::string& k, const std::string& v) { c.light_r = parse_double(k, v); }},
      {"light_g", [](TrainConfig& c, const std::string& k, const std::string& v) { c.light_g = parse_double(k, v); }},
      {"light_b", [](TrainConfig& c, const std::string& k, const std::string& v) { c.light_b = parse_double(k, v); }},
      {"splat_count", [](TrainConfig& c, const std::string& k, const std::string& v) { c.splat_count = parse_int(k, v); }},
      {"tile_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.tile_size = parse_int(k, v); }},
      {"stage1_steps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.stage1_steps = parse_int(k, v); }},
      {"stage1_lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.stage1_lr = parse_double(k, v); }},
      {"stage1_batch", [](TrainConfig& c, const std::string& k, const std::string& v) { c.stage1_batch = parse_int(k, v); }},
      {"stage2_steps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.stage2_steps = parse_int(k, v); }},
      {"stage2_lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.stage2_lr = parse_double(k, v); }},
      {"stage2_batch", [](TrainConfig& c, const std::string& k, const std::string& v) { c.stage2_batch = parse_int(k, v); }},
      {"stage3_steps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.stage3_steps = parse_int(k, v); }},
      {"stage3_lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.stage3_lr = parse_double(k, v); }},
      {"stage3_batch", [](TrainConfig& c, const std::string& k, const std::string& v) { c.stage3_batch = parse_int(k, v); }},
      {"momentum", [](TrainConfig& c, const std::string& k, const std::string& v) { c.momentum = parse_double(k, v); }},
      {"grad_clip", [](TrainConfig& c, const std::string& k, const std::string& v) { c.grad_clip = parse_double(k, v); }},
      {"w_scale", [](TrainConfig& c, const std::string& k, const std::string& v) { c.w_scale = parse_double(k, v); }},
      {"w_contour", [](TrainConfig& c, const std::string& k, const std::string& v) { c.w_contour = parse_double(k, v); }},
      {"w_ssim", [](TrainConfig& c, const std::string& k, const std::string& v) { c.w_ssim = parse_double(k, v); }},
      {"w_energy", [](TrainConfig& c, const std::string& k, const std::string& v) { c.w_energy = parse_double(k, v); }},
      {"diffusion_steps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.diffusion_steps = parse_int(k, v); }},
      {"cosine_offset", [](TrainConfig& c, const std::string& k, const std::string& v) { c.cosine_offset = parse_double(k, v); }},
      {"condition_dropout", [](TrainConfig& c, const std::string& k, const std::string& v) { c.condition_dropout = parse_double(k, v); }},
  };
  return m;
}

}  // namespace

TrainConfig parse_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " has an empty key or value");
    const auto it = setters().find(key);
    if (it == setters().end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    it->second(c, key, value);
  }
  validate(c);
  return c;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const TrainConfig& c) {
  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::ostringstream o;
  o << "image_size = " << c.image_size << "\n";
  o << "dataset_size = " << c.dataset_size << "\n";
  o << "seed = " << c.seed << "\n";
  o << "max_objects = " << c.max_objects << "\n";
  o << "light = " << c.light << "\n";
  o << "light_x = " << fmt(c.light_x) << "\n";
  o << "light_y = " << fmt(c.light_y) << "\n";
  o << "light_z = " << fmt(c.light_z) << "\n";
  o << "light_r = " << fmt(c.light_r) << "\n";
  o << "light_g = " << fmt(c.light_g) << "\n";
  o << "light_b = " << fmt(c.light_b) << "\n";
  o << "splat_count = " << c.splat_count << "\n";
  o << "tile_size = " << c.tile_size << "\n";
  o << "stage1_steps = " << c.stage1_steps << "\n";
  o << "stage1_lr = " << fmt(c.stage1_lr) << "\n";
  o << "stage1_batch = " << c.stage1_batch << "\n";
  o << "stage2_steps = " << c.stage2_steps << "\n";
  o << "stage2_lr = " << fmt(c.stage2_lr) << "\n";
  o << "stage2_batch = " << c.stage2_batch << "\n";
  o << "stage3_steps = " << c.stage3_steps << "\n";
  o << "stage3_lr = " << fmt(c.stage3_lr) << "\n";
  o << "stage3_batch = " << c.stage3_batch << "\n";
  o << "momentum = " << fmt(c.momentum) << "\n";
  o << "grad_clip = " << fmt(c.grad_clip) << "\n";
  o << "w_scale = " << fmt(c.w_scale) << "\n";
  o << "w_contour = " << fmt(c.w_contour) << "\n";
  o << "w_ssim = " << fmt(c.w_ssim) << "\n";
  o << "w_energy = " << fmt(c.w_energy) << "\n";
  o << "diffusion_steps = " << c.diffusion_steps << "\n";
  o << "cosine_offset = " << fmt(c.cosine_offset) << "\n";
  o << "condition_dropout = " << fmt(c.condition_dropout) << "\n";
  return o.str();
}

}  // namespace splatnorm
