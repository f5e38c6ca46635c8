#include "binsplat/synth.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include "binsplat/errors.hpp"
#include "binsplat/parallel.hpp"
#include "binsplat/rng.hpp"

namespace binsplat {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  int out = 0;
  try {
    out = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw FormatError("synth spec '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw FormatError("synth spec '" + key + "': expected a number, got '" + v + "'");
  return out;
}

// Geometry is kept f32-representable so that BGS1 files reproduce it exactly.
double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

std::vector<std::vector<int>> parse_tree(const std::string& text) {
  std::vector<std::vector<int>> tree;
  for (const std::string& level : split(trim(text), '/')) {
    std::vector<int> counts;
    for (const std::string& c : split(level, ',')) {
      const int k = to_int("tree", c);
      if (k < 1) throw FormatError("tree: every node needs at least one child, got " + c);
      counts.push_back(k);
    }
    tree.push_back(std::move(counts));
  }
  if (tree.empty()) throw FormatError("tree: empty");
  if (tree[0].size() != 1) throw FormatError("tree: the first level lists the root's child count only");
  for (std::size_t l = 1; l < tree.size(); ++l) {
    int nodes = 0;
    for (int k : tree[l - 1]) nodes += k;
    if (static_cast<int>(tree[l].size()) != nodes)
      throw FormatError("tree: level " + std::to_string(l + 1) + " lists " + std::to_string(tree[l].size()) +
                        " child counts but level " + std::to_string(l) + " has " + std::to_string(nodes) + " nodes");
  }
  return tree;
}

std::string format_tree(const std::vector<std::vector<int>>& tree) {
  std::string out;
  for (std::size_t l = 0; l < tree.size(); ++l) {
    if (l) out += '/';
    for (std::size_t i = 0; i < tree[l].size(); ++i) {
      if (i) out += ',';
      out += std::to_string(tree[l][i]);
    }
  }
  return out;
}

SynthSpec parse_synth_spec(const std::string& text) {
  SynthSpec s;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("synth spec line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    if (key == "fixture") {
      if (v == "hierarchy")
        s.fixture = SynthFixture::Hierarchy;
      else if (v == "semi_transparent")
        s.fixture = SynthFixture::SemiTransparent;
      else if (v == "small_masks")
        s.fixture = SynthFixture::SmallMasks;
      else
        throw FormatError("synth spec 'fixture': expected hierarchy, semi_transparent or small_masks");
    } else if (key == "tree") {
      s.tree = parse_tree(v);
    } else if (key == "level_dims") {
      try {
        s.layout = LevelLayout::parse(v);
      } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("synth spec 'level_dims': ") + e.what());
      }
    } else if (key == "gaussians_per_leaf") {
      s.gaussians_per_leaf = to_int(key, v);
    } else if (key == "views") {
      s.views = to_int(key, v);
    } else if (key == "width") {
      s.width = to_int(key, v);
    } else if (key == "height") {
      s.height = to_int(key, v);
    } else if (key == "ring_radius") {
      s.ring_radius = to_double(key, v);
    } else if (key == "elevation_deg") {
      s.elevation_deg = to_double(key, v);
    } else if (key == "fov_deg") {
      s.fov_deg = to_double(key, v);
    } else if (key == "object_height") {
      s.object_height = to_double(key, v);
    } else if (key == "opacity") {
      s.opacity = to_double(key, v);
    } else if (key == "foreground_opacity") {
      s.foreground_opacity = to_double(key, v);
    } else if (key == "small_objects") {
      s.small_objects = to_int(key, v);
    } else if (key == "feature_init_std") {
      s.feature_init_std = to_double(key, v);
    } else if (key == "seed") {
      try {
        s.seed = std::stoull(v);
      } catch (const std::exception&) {
        throw FormatError("synth spec 'seed': expected a non-negative integer");
      }
    } else {
      throw FormatError("unknown synth spec key '" + key + "' on line " + std::to_string(lineno));
    }
  }
  return s;
}

SynthSpec load_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open synth spec '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_synth_spec(ss.str());
}

namespace {

void validate(const SynthSpec& s) {
  require_valid(s.views >= 1, "synth: views must be >= 1");
  require_valid(s.width >= 1 && s.height >= 1, "synth: image size must be positive");
  require_valid(s.gaussians_per_leaf >= 1, "synth: every leaf needs at least one Gaussian");
  require_valid(s.opacity > 0.0 && s.opacity < 1.0, "synth: opacity must lie in (0, 1)");
  require_valid(s.foreground_opacity > 0.0 && s.foreground_opacity < 1.0,
                "synth: foreground_opacity must lie in (0, 1)");
  require_valid(s.ring_radius > 0.0 && s.fov_deg > 0.0 && s.fov_deg < 180.0, "synth: bad camera ring");
  require_valid(s.object_height >= 0.0, "synth: object_height must be >= 0");
  require_valid(s.small_objects >= 0, "synth: small_objects must be >= 0");
  if (s.fixture == SynthFixture::Hierarchy)
    require_valid(static_cast<int>(s.tree.size()) == s.layout.levels(),
                  "synth: tree depth " + std::to_string(s.tree.size()) + " != layout levels " +
                      std::to_string(s.layout.levels()));
}

// Child counts for a chain of single children below `roots` top-level nodes.
std::vector<std::vector<int>> chain_tree(int roots, int levels) {
  std::vector<std::vector<int>> tree{{roots}};
  for (int l = 1; l < levels; ++l) tree.push_back(std::vector<int>(roots, 1));
  return tree;
}

std::vector<TreeNode> build_nodes(const std::vector<std::vector<int>>& tree) {
  std::vector<TreeNode> nodes;
  std::vector<uint32_t> previous{0};  // the root
  for (std::size_t l = 0; l < tree.size(); ++l) {
    std::vector<uint32_t> current;
    for (std::size_t p = 0; p < previous.size(); ++p) {
      for (int c = 0; c < tree[l][p]; ++c) {
        TreeNode n;
        n.id = static_cast<uint32_t>(nodes.size() + 1);
        n.level = static_cast<int>(l + 1);
        n.parent = previous[p];
        if (n.parent) nodes[n.parent - 1].children.push_back(n.id);
        current.push_back(n.id);
        nodes.push_back(n);
      }
    }
    previous = std::move(current);
  }
  return nodes;
}

struct Box {
  double x0, y0, x1, y1;
  double w() const { return x1 - x0; }
  double h() const { return y1 - y0; }
};

// Splits a box into k equal slabs across its longer side, leaving a gap.
std::vector<Box> split_box(const Box& b, int k, double gap) {
  std::vector<Box> out;
  if (k == 1) return {b};
  const bool along_x = b.w() >= b.h();
  const double len = along_x ? b.w() : b.h();
  const double slab = len / k;
  for (int i = 0; i < k; ++i) {
    const double lo = i * slab + (i > 0 ? gap / 2 : 0.0);
    const double hi = (i + 1) * slab - (i + 1 < k ? gap / 2 : 0.0);
    out.push_back(along_x ? Box{b.x0 + lo, b.y0, b.x0 + hi, b.y1} : Box{b.x0, b.y0 + lo, b.x1, b.y0 + hi});
  }
  return out;
}

Eigen::Quaterniond random_rotation(CounterRng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return Eigen::Quaterniond(f32(q.w()), f32(q.x()), f32(q.y()), f32(q.z()));
}

Eigen::Vector3d random_color(CounterRng& rng) {
  return {f32(0.15 + 0.7 * rng.uniform()), f32(0.15 + 0.7 * rng.uniform()), f32(0.15 + 0.7 * rng.uniform())};
}

// Fills a box on the ground with a blob of Gaussians, `height` tall.
void fill_box(GaussianScene& scene, std::vector<uint32_t>& leaf_of, const Box& b, double z0, double height, int count,
              double opacity, uint32_t leaf, CounterRng& rng) {
  const Eigen::Vector3d color = random_color(rng);
  const double side = std::sqrt(b.w() * b.h() / count);
  const double sigma = std::clamp(0.55 * side, 0.02, 0.45 * std::min(b.w(), b.h()));
  const double margin = std::min(1.2 * sigma, 0.3 * std::min(b.w(), b.h()));
  for (int i = 0; i < count; ++i) {
    Gaussian g;
    g.position = {f32(b.x0 + margin + (b.w() - 2 * margin) * rng.uniform()),
                  f32(b.y0 + margin + (b.h() - 2 * margin) * rng.uniform()), f32(z0 + height * rng.uniform())};
    const double s = sigma * (0.8 + 0.4 * rng.uniform());
    const double sz = height > 0.0 ? s : 0.15 * s;
    g.log_scale = {f32(std::log(s)), f32(std::log(s * (0.8 + 0.4 * rng.uniform()))), f32(std::log(sz))};
    g.rotation = height > 0.0 ? random_rotation(rng) : Eigen::Quaterniond::Identity();
    g.opacity_logit = f32(logit(opacity));
    g.color = color;
    scene.add(g);
    leaf_of.push_back(leaf);
  }
}

struct Layout3d {
  double extent;  // half-width of the square scene footprint
};

Layout3d footprint(const SynthSpec& s) {
  const double half_fov = 0.5 * s.fov_deg * std::numbers::pi / 180.0;
  const double aspect = std::min(1.0, static_cast<double>(s.width) / s.height);
  return {0.82 * s.ring_radius * std::tan(half_fov) * aspect};
}

void place_hierarchy(const SynthSpec& s, const std::vector<TreeNode>& nodes, GaussianScene& scene,
                     std::vector<uint32_t>& leaf_of, CounterRng& rng) {
  const double r = footprint(s).extent;
  const double gap = 0.06 * r;
  std::map<uint32_t, Box> box;
  std::vector<uint32_t> level1;
  for (const TreeNode& n : nodes)
    if (n.level == 1) level1.push_back(n.id);
  const auto top = split_box({-r, -r, r, r}, static_cast<int>(level1.size()), gap);
  for (std::size_t i = 0; i < level1.size(); ++i) box[level1[i]] = top[i];
  for (const TreeNode& n : nodes) {
    if (n.children.empty()) continue;
    const auto parts = split_box(box[n.id], static_cast<int>(n.children.size()), gap);
    for (std::size_t i = 0; i < n.children.size(); ++i) box[n.children[i]] = parts[i];
  }
  for (const TreeNode& n : nodes)
    if (n.children.empty()) fill_box(scene, leaf_of, box[n.id], 0.0, s.object_height, s.gaussians_per_leaf,
                                     s.opacity, n.id, rng);
}

uint32_t leaf_below(const std::vector<TreeNode>& nodes, uint32_t id) {
  while (!nodes[id - 1].children.empty()) id = nodes[id - 1].children.front();
  return id;
}

void place_semi_transparent(const SynthSpec& s, const std::vector<TreeNode>& nodes, GaussianScene& scene,
                            std::vector<uint32_t>& leaf_of, CounterRng& rng) {
  const double r = footprint(s).extent;
  // Ground plane: flat, opaque, four times a leaf's budget.
  fill_box(scene, leaf_of, {-r, -r, r, r}, 0.0, 0.0, 4 * s.gaussians_per_leaf, s.opacity, leaf_below(nodes, 1), rng);
  // Sheet: one regular layer of flat splats, lifted above the plane.
  const uint32_t sheet = leaf_below(nodes, 2);
  const Box b{-0.5 * r, -0.5 * r, 0.5 * r, 0.5 * r};
  const int side = std::max(2, static_cast<int>(std::lround(std::sqrt(static_cast<double>(s.gaussians_per_leaf)))));
  const double step = b.w() / side;
  const Eigen::Vector3d color = random_color(rng);
  for (int iy = 0; iy < side; ++iy) {
    for (int ix = 0; ix < side; ++ix) {
      Gaussian g;
      g.position = {f32(b.x0 + (ix + 0.5) * step), f32(b.y0 + (iy + 0.5) * step), f32(0.35 * r)};
      const double sigma = 0.5 * step;
      g.log_scale = {f32(std::log(sigma)), f32(std::log(sigma)), f32(std::log(0.05 * sigma))};
      g.opacity_logit = f32(logit(s.foreground_opacity));
      g.color = color;
      scene.add(g);
      leaf_of.push_back(sheet);
    }
  }
}

void place_small_masks(const SynthSpec& s, const std::vector<TreeNode>& nodes, GaussianScene& scene,
                       std::vector<uint32_t>& leaf_of, CounterRng& rng) {
  const double r = footprint(s).extent;
  const double big = 0.55 * r;
  fill_box(scene, leaf_of, {-big, -big, big, big}, 0.0, 0.1 * r, 4 * s.gaussians_per_leaf, s.opacity,
           leaf_below(nodes, 1), rng);
  const double small = 0.09 * r;
  const int per_small = std::max(4, s.gaussians_per_leaf / 6);
  for (int k = 0; k < s.small_objects; ++k) {
    const double angle = 2.0 * std::numbers::pi * (k + 0.5) / s.small_objects;
    const double cx = 0.82 * r * std::cos(angle), cy = 0.82 * r * std::sin(angle);
    fill_box(scene, leaf_of, {cx - small, cy - small, cx + small, cy + small}, 0.0, 0.1 * r, per_small, s.opacity,
             leaf_below(nodes, static_cast<uint32_t>(k + 2)), rng);
  }
}

struct Projected {
  uint32_t gaussian;
  double depth, opacity;
  Eigen::Vector2d mean;
  double a, b, c;  // conic
};

// Straightforward EWA projection: only the depth window culls.
std::vector<Projected> project_all(const GaussianScene& scene, const Camera& cam) {
  std::vector<Projected> out;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const Gaussian& g = scene[i];
    const Eigen::Vector3d pc = cam.rotation * g.position + cam.translation;
    const double z = pc.z();
    if (!(z > cam.near_clip && z < cam.far_clip)) continue;
    const Eigen::Matrix3d rot = g.rotation.normalized().toRotationMatrix();
    const Eigen::Vector3d sc = g.log_scale.array().exp();
    const Eigen::Matrix3d m = rot * sc.asDiagonal();
    const Eigen::Matrix3d world_cov = m * m.transpose();
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx / z, 0.0, -cam.fx * pc.x() / (z * z), 0.0, cam.fy / z, -cam.fy * pc.y() / (z * z);
    const Eigen::Matrix<double, 2, 3> jw = j * cam.rotation;
    const Eigen::Matrix2d cov = jw * world_cov * jw.transpose() + kCovarianceBlur * Eigen::Matrix2d::Identity();
    const double off = 0.5 * (cov(0, 1) + cov(1, 0));
    const double det = cov(0, 0) * cov(1, 1) - off * off;
    if (!(det > 0.0)) continue;
    out.push_back({static_cast<uint32_t>(i), z, g.opacity(),
                   {cam.fx * pc.x() / z + cam.cx, cam.fy * pc.y() / z + cam.cy},
                   cov(1, 1) / det,
                   -off / det,
                   cov(0, 0) / det});
  }
  std::stable_sort(out.begin(), out.end(), [](const Projected& x, const Projected& y) { return x.depth < y.depth; });
  return out;
}

// Calls visit(splat, weight) front to back for every contributing splat at
// the pixel center and returns the final transmittance.
template <class Visit>
double walk_pixel(const std::vector<Projected>& splats, PixelCoord px, Visit&& visit) {
  double t = 1.0;
  for (const Projected& s : splats) {
    const double dx = px.x + 0.5 - s.mean.x(), dy = px.y + 0.5 - s.mean.y();
    const double q = s.a * dx * dx + 2.0 * s.b * dx * dy + s.c * dy * dy;
    const double alpha = std::min(kAlphaMax, s.opacity * std::exp(-0.5 * q));
    if (alpha < kAlphaMin) continue;
    visit(s, alpha * t);
    t *= 1.0 - alpha;
    if (t < kTransmittanceStop) break;
  }
  return t;
}

}  // namespace

RenderedFeatureMap brute_force_render(const GaussianScene& scene, const Camera& camera,
                                      std::span<const PixelCoord> pixels) {
  const int d = scene.dims();
  RenderedFeatureMap map;
  map.dims = d;
  map.pixels.assign(pixels.begin(), pixels.end());
  map.features.assign(pixels.size() * d, 0.0);
  map.binary.assign(pixels.size() * d, 0);
  map.transmittance.assign(pixels.size(), 1.0);
  map.grad.assign(pixels.size() * d, 0.0);
  const auto splats = project_all(scene, camera);
  for (std::size_t p = 0; p < pixels.size(); ++p) {
    double* out = map.features.data() + p * d;
    map.transmittance[p] = walk_pixel(splats, pixels[p], [&](const Projected& s, double w) {
      const auto logits = scene.features(s.gaussian);
      for (int j = 0; j < d; ++j) out[j] += w * logistic(logits[j]);
    });
    for (int j = 0; j < d; ++j) map.binary[p * d + j] = out[j] > 0.5 ? 1 : 0;
  }
  return map;
}

SynthScene generate(const SynthSpec& spec) {
  validate(spec);
  const int levels = spec.layout.levels();
  SynthScene out;
  std::vector<std::vector<int>> tree = spec.tree;
  if (spec.fixture == SynthFixture::SemiTransparent) tree = chain_tree(2, levels);
  if (spec.fixture == SynthFixture::SmallMasks) tree = chain_tree(1 + spec.small_objects, levels);
  out.tree = build_nodes(tree);

  CounterRng rng(spec.seed, 1);
  out.scene = GaussianScene(spec.layout);
  switch (spec.fixture) {
    case SynthFixture::Hierarchy:
      place_hierarchy(spec, out.tree, out.scene, out.gaussian_leaf, rng);
      break;
    case SynthFixture::SemiTransparent:
      place_semi_transparent(spec, out.tree, out.scene, out.gaussian_leaf, rng);
      break;
    case SynthFixture::SmallMasks:
      place_small_masks(spec, out.tree, out.scene, out.gaussian_leaf, rng);
      break;
  }
  if (spec.feature_init_std > 0.0) init_feature_logits(out.scene, spec.feature_init_std, spec.seed);

  const double elevation = spec.elevation_deg * std::numbers::pi / 180.0;
  for (int v = 0; v < spec.views; ++v) {
    const double az = 2.0 * std::numbers::pi * v / spec.views;
    const Eigen::Vector3d eye(spec.ring_radius * std::cos(elevation) * std::cos(az),
                              spec.ring_radius * std::cos(elevation) * std::sin(az),
                              spec.ring_radius * std::sin(elevation));
    out.cameras.push_back(
        Camera::look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ(), spec.fov_deg, spec.width, spec.height));
  }

  // Truth is defined with every object at the nominal opacity.
  GaussianScene truth_scene = out.scene;
  for (std::size_t i = 0; i < truth_scene.size(); ++i) truth_scene[i].opacity_logit = f32(logit(spec.opacity));

  // ancestor[l][leaf id] = node id at level l + 1
  std::vector<std::vector<uint32_t>> ancestor(levels, std::vector<uint32_t>(out.tree.size() + 1, 0));
  for (const TreeNode& n : out.tree) {
    if (!n.children.empty()) continue;
    uint32_t id = n.id;
    while (id) {
      ancestor[out.tree[id - 1].level - 1][n.id] = id;
      id = out.tree[id - 1].parent;
    }
  }

  out.masks.resize(spec.views);
  parallel_for(
      0, static_cast<std::size_t>(spec.views),
      [&](std::size_t v) {
        const auto splats = project_all(truth_scene, out.cameras[v]);
        MaskImage& m = out.masks[v];
        m.width = static_cast<uint32_t>(spec.width);
        m.height = static_cast<uint32_t>(spec.height);
        m.levels.assign(levels, std::vector<uint32_t>(m.width * m.height, 0));
        for (uint32_t y = 0; y < m.height; ++y) {
          for (uint32_t x = 0; x < m.width; ++x) {
            double best = -1.0;
            uint32_t best_gaussian = 0;
            const double t = walk_pixel(splats, {x, y}, [&](const Projected& s, double w) {
              if (w > best) {
                best = w;
                best_gaussian = s.gaussian;
              }
            });
            if (t > 0.5 || best < 0.0) continue;
            const uint32_t leaf = out.gaussian_leaf[best_gaussian];
            for (int l = 0; l < levels; ++l) m.levels[l][y * m.width + x] = ancestor[l][leaf];
          }
        }
      },
      1);
  out.pyramid = MaskPyramid::build(out.masks, levels);
  return out;
}

std::string format_tree_file(const std::vector<TreeNode>& tree, uint64_t seed) {
  std::ostringstream out;
  out << "# seed=" << seed << "\n# id level parent children...\n";
  for (const TreeNode& n : tree) {
    out << n.id << " " << n.level << " " << n.parent;
    for (uint32_t c : n.children) out << " " << c;
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------

double LevelEval::miou_below(uint64_t max_area) const {
  double sum = 0.0;
  std::size_t count = 0;
  for (const MaskIoU& m : masks) {
    if (m.area > max_area) continue;
    sum += m.iou;
    ++count;
  }
  return count ? 100.0 * sum / count : std::numeric_limits<double>::quiet_NaN();
}

LevelEval eval_miou(const std::vector<MaskImage>& predicted, const MaskPyramid& truth, int level) {
  require(predicted.size() == truth.view_count(), "eval_miou: predicted view count != truth view count");
  require(level >= 1 && level <= truth.levels(), "eval_miou: level out of range");
  LevelEval out;
  out.level = level;
  std::map<std::pair<uint32_t, uint32_t>, uint64_t> pooled;
  auto choose2 = [](double n) { return 0.5 * n * (n - 1.0); };

  for (std::size_t v = 0; v < predicted.size(); ++v) {
    const MaskImage& pred = predicted[v];
    const MaskImage& gt = truth.view(v).labels;
    require(pred.width == gt.width && pred.height == gt.height, "eval_miou: image size mismatch");
    require(pred.level_count() == 1 || pred.level_count() >= level, "eval_miou: predicted image lacks this level");
    const auto& pl = pred.level_count() == 1 ? pred.levels[0] : pred.levels[level - 1];
    const auto& tl = gt.levels[level - 1];

    std::map<std::pair<uint32_t, uint32_t>, uint64_t> inter;
    std::map<uint32_t, uint64_t> truth_area, pred_area;
    for (std::size_t p = 0; p < tl.size(); ++p) {
      if (tl[p] == 0) continue;
      ++inter[{tl[p], pl[p]}];
      ++truth_area[tl[p]];
      ++pred_area[pl[p]];
    }

    std::vector<std::pair<std::pair<uint32_t, uint32_t>, uint64_t>> cand(inter.begin(), inter.end());
    std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::map<uint32_t, MaskIoU> result;
    for (const auto& [id, area] : truth_area) result[id] = MaskIoU{v, id, 0, false, area, 0.0};
    std::map<uint32_t, bool> pred_used;
    for (const auto& [key, n] : cand) {
      MaskIoU& m = result[key.first];
      if (m.matched || pred_used[key.second]) continue;
      m.matched = true;
      m.predicted = key.second;
      m.iou = static_cast<double>(n) / static_cast<double>(truth_area[key.first] + pred_area[key.second] - n);
      pred_used[key.second] = true;
    }
    for (auto& [id, m] : result) out.masks.push_back(m);

    for (const auto& [key, n] : inter) pooled[key] += n;
  }

  // Rand index over all labeled pixel pairs, across views: truth ids and
  // codes are both global, so a label must mean the same object everywhere.
  std::map<uint32_t, uint64_t> truth_total, pred_total;
  uint64_t labeled_total = 0;
  double same_both = 0.0;
  for (const auto& [key, n] : pooled) {
    same_both += choose2(static_cast<double>(n));
    truth_total[key.first] += n;
    pred_total[key.second] += n;
    labeled_total += n;
  }
  double same_truth = 0.0, same_pred = 0.0;
  for (const auto& [id, n] : truth_total) same_truth += choose2(static_cast<double>(n));
  for (const auto& [id, n] : pred_total) same_pred += choose2(static_cast<double>(n));
  const double pairs = choose2(static_cast<double>(labeled_total));
  const double agree = pairs + 2.0 * same_both - same_truth - same_pred;

  double sum = 0.0;
  for (const MaskIoU& m : out.masks) sum += m.iou;
  out.miou = out.masks.empty() ? 100.0 : 100.0 * sum / static_cast<double>(out.masks.size());
  out.consistency = pairs > 0.0 ? 100.0 * agree / pairs : 100.0;
  return out;
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << "level  mIoU(%)  consistency(%)  masks\n";
  for (const LevelEval& l : levels)
    out << std::setw(5) << l.level << "  " << std::setw(7) << l.miou << "  " << std::setw(14) << l.consistency << "  "
        << std::setw(5) << l.masks.size() << "\n";
  if (code_bytes) out << "code table: " << code_bytes << " bytes\n";
  if (class_map_seconds > 0.0) out << "class-map render: " << std::setprecision(4) << class_map_seconds << " s\n";
  out << "\nlevel  view  truth  predicted  area  IoU\n";
  for (const LevelEval& l : levels)
    for (const MaskIoU& m : l.masks)
      out << std::setw(5) << l.level << "  " << std::setw(4) << m.view << "  " << std::setw(5) << m.truth << "  "
          << std::setw(9) << (m.matched ? std::to_string(m.predicted) : std::string("-")) << "  " << std::setw(4)
          << m.area << "  " << std::setprecision(4) << m.iou << std::setprecision(2) << "\n";
  return out.str();
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "level,view,truth,predicted,matched,area,iou\n";
  for (const LevelEval& l : levels)
    for (const MaskIoU& m : l.masks)
      out << l.level << "," << m.view << "," << m.truth << "," << m.predicted << "," << (m.matched ? 1 : 0) << ","
          << m.area << "," << m.iou << "\n";
  out << "# level,miou,consistency\n";
  for (const LevelEval& l : levels) out << "# " << l.level << "," << l.miou << "," << l.consistency << "\n";
  return out.str();
}

RenderTiming time_renders(const GaussianScene& scene, const std::vector<Camera>& cameras, const CodeTable& codes,
                          int views, int level) {
  require(views >= 1 && static_cast<std::size_t>(views) <= cameras.size(), "time_renders: bad view count");
  using clock = std::chrono::steady_clock;
  RenderTiming t;
  t.views = views;
  for (int v = 0; v < views; ++v) {
    const Camera& cam = cameras[v];
    const auto t0 = clock::now();
    const SplatList splats = project(scene, cam);
    const RenderedFeatureMap map = composite_forward(splats, all_pixels(cam.width, cam.height));
    const auto t1 = clock::now();
    const MaskImage labels = render_class_map(scene, cam, codes, level);
    const auto t2 = clock::now();
    if (map.size() != labels.levels[0].size()) throw std::logic_error("time_renders: size mismatch");
    t.feature_seconds += std::chrono::duration<double>(t1 - t0).count();
    t.class_map_seconds += std::chrono::duration<double>(t2 - t1).count();
  }
  return t;
}

}  // namespace binsplat
