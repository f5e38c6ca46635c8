#include "binsplat/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "binsplat/errors.hpp"
#include "byte_io.hpp"

namespace binsplat {
namespace {

using detail::Reader;
using detail::slurp;
using detail::Writer;

constexpr double kShC0 = 0.28209479177387814;

void write_layout(Writer& w, const LevelLayout& layout) {
  w.u8(static_cast<uint8_t>(layout.levels()));
  for (int d : layout.level_dims()) w.u8(static_cast<uint8_t>(d));
}

LevelLayout read_layout(Reader& r) {
  const int levels = r.u8();
  std::vector<int> dims(levels);
  for (int& d : dims) d = r.u8();
  try {
    return LevelLayout(std::move(dims));
  } catch (const std::invalid_argument& e) {
    throw FormatError("'" + r.path() + "': " + e.what());
  }
}

// Unit quaternions pass through untouched so float round trips are stable.
Eigen::Quaterniond tidy_rotation(Eigen::Quaterniond q, const std::string& path) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw FormatError("'" + path + "': zero or non-finite rotation");
  if (std::abs(n - 1.0) > 1e-6) q.coeffs() /= n;
  return q;
}

}  // namespace

void write_scene(const std::string& path, const GaussianScene& scene) {
  Writer w;
  w.bytes("BGS1", 4);
  w.u32(static_cast<uint32_t>(scene.size()));
  write_layout(w, scene.layout());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const Gaussian& g = scene[i];
    for (int k = 0; k < 3; ++k) w.f32(g.position[k]);
    for (int k = 0; k < 3; ++k) w.f32(g.log_scale[k]);
    w.f32(g.rotation.w());
    w.f32(g.rotation.x());
    w.f32(g.rotation.y());
    w.f32(g.rotation.z());
    w.f32(g.opacity_logit);
    for (int k = 0; k < 3; ++k) w.f32(g.color[k]);
    for (double v : scene.features(i)) w.f32(v);
  }
  w.save(path);
}

GaussianScene read_scene(const std::string& path) {
  Reader r(slurp(path), path);
  r.expect_magic("BGS1");
  const uint32_t n = r.u32();
  GaussianScene scene(read_layout(r));
  const std::size_t record = 4u * (14u + static_cast<std::size_t>(scene.dims()));
  if (r.remaining() != record * n) throw FormatError("'" + path + "': payload size does not match header");
  std::vector<double> logits(static_cast<std::size_t>(scene.dims()));
  for (uint32_t i = 0; i < n; ++i) {
    Gaussian g;
    for (int k = 0; k < 3; ++k) g.position[k] = r.f32();
    for (int k = 0; k < 3; ++k) g.log_scale[k] = r.f32();
    const double w = r.f32(), x = r.f32(), y = r.f32(), z = r.f32();
    g.rotation = tidy_rotation(Eigen::Quaterniond(w, x, y, z), path);
    g.opacity_logit = r.f32();
    for (int k = 0; k < 3; ++k) g.color[k] = r.f32();
    for (double& v : logits) v = r.f32();
    scene.add(g, logits);
  }
  r.expect_end();
  return scene;
}

void write_mask_image(const std::string& path, const MaskImage& masks) {
  require(masks.level_count() >= 1 && masks.level_count() <= 255, "mask image needs 1..255 levels");
  const std::size_t pixels = static_cast<std::size_t>(masks.width) * masks.height;
  Writer w;
  w.bytes("BGM1", 4);
  w.u32(masks.width);
  w.u32(masks.height);
  w.u8(static_cast<uint8_t>(masks.level_count()));
  for (const auto& grid : masks.levels) {
    require(grid.size() == pixels, "mask grid size != width * height");
    for (uint32_t v : grid) w.u32(v);
  }
  w.save(path);
}

MaskImage read_mask_image(const std::string& path) {
  Reader r(slurp(path), path);
  r.expect_magic("BGM1");
  MaskImage m;
  m.width = r.u32();
  m.height = r.u32();
  const int levels = r.u8();
  if (m.width == 0 || m.height == 0 || levels == 0) throw FormatError("'" + path + "': empty mask image");
  const std::size_t pixels = static_cast<std::size_t>(m.width) * m.height;
  if (r.remaining() != pixels * 4u * levels)
    throw FormatError("'" + path + "': label payload does not match " + std::to_string(m.width) + "x" +
                      std::to_string(m.height) + "x" + std::to_string(levels));
  m.levels.assign(levels, std::vector<uint32_t>(pixels));
  for (auto& grid : m.levels)
    for (uint32_t& v : grid) v = r.u32();
  return m;
}

std::size_t codes_header_bytes(const LevelLayout& layout) { return 4 + 4 + 1 + layout.levels(); }

void write_codes(const std::string& path, const CodeTable& table) {
  Writer w;
  w.bytes("BGC1", 4);
  w.u32(static_cast<uint32_t>(table.codes.size()));
  write_layout(w, table.layout);
  for (uint32_t c : table.codes) w.u32(c);
  w.save(path);
}

CodeTable read_codes(const std::string& path) {
  Reader r(slurp(path), path);
  r.expect_magic("BGC1");
  const uint32_t n = r.u32();
  CodeTable table{read_layout(r), {}};
  if (r.remaining() != 4u * static_cast<std::size_t>(n))
    throw FormatError("'" + path + "': payload is not 4 bytes per Gaussian");
  const int d = table.layout.total_dims();
  table.codes.resize(n);
  for (uint32_t& c : table.codes) {
    c = r.u32();
    if (d < 32 && (c >> d) != 0) throw FormatError("'" + path + "': code has bits above position D-1");
  }
  return table;
}

namespace {

struct PlyProperty {
  std::string name;
  std::string type;
  std::string list_count_type;  // non-empty for list properties
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

std::size_t ply_type_size(const std::string& t, const std::string& path) {
  static const std::unordered_map<std::string, std::size_t> sizes = {
      {"char", 1},  {"int8", 1},   {"uchar", 1}, {"uint8", 1},   {"short", 2},   {"int16", 2},
      {"ushort", 2}, {"uint16", 2}, {"int", 4},   {"int32", 4},   {"uint", 4},    {"uint32", 4},
      {"float", 4}, {"float32", 4}, {"double", 8}, {"float64", 8}};
  const auto it = sizes.find(t);
  if (it == sizes.end()) throw FormatError("'" + path + "': unsupported PLY type '" + t + "'");
  return it->second;
}

double ply_read_scalar(const char* p, const std::string& t) {
  auto load = [p](auto v) {
    std::memcpy(&v, p, sizeof(v));
    return static_cast<double>(v);
  };
  if (t == "char" || t == "int8") return load(int8_t{});
  if (t == "uchar" || t == "uint8") return load(uint8_t{});
  if (t == "short" || t == "int16") return load(int16_t{});
  if (t == "ushort" || t == "uint16") return load(uint16_t{});
  if (t == "int" || t == "int32") return load(int32_t{});
  if (t == "uint" || t == "uint32") return load(uint32_t{});
  if (t == "float" || t == "float32") return load(float{});
  return load(double{});
}

double import_color(double f_dc) {
  return static_cast<double>(static_cast<float>(std::clamp(kShC0 * f_dc + 0.5, 0.0, 1.0)));
}

float export_color(double c) {
  float f = static_cast<float>((c - 0.5) / kShC0);
  for (int step = 0; step < 64 && import_color(f) != c; ++step) {
    f = std::nextafter(f, import_color(f) < c ? std::numeric_limits<float>::infinity()
                                              : -std::numeric_limits<float>::infinity());
  }
  return import_color(f) == c ? f : static_cast<float>((c - 0.5) / kShC0);
}

}  // namespace

GaussianScene import_ply(const std::string& path, const LevelLayout& layout, double feature_init_std, uint64_t seed) {
  const std::vector<char> data = slurp(path);
  const std::string marker = "end_header\n";
  const auto header_end = std::search(data.begin(), data.end(), marker.begin(), marker.end());
  if (header_end == data.end()) throw FormatError("'" + path + "': missing end_header");
  std::istringstream header(std::string(data.begin(), header_end));
  std::string line;
  std::getline(header, line);
  if (line != "ply") throw FormatError("'" + path + "': not a PLY file");

  std::vector<PlyElement> elements;
  bool format_ok = false;
  while (std::getline(header, line)) {
    std::istringstream tok(line);
    std::string kw;
    tok >> kw;
    if (kw == "format") {
      std::string fmt;
      tok >> fmt;
      if (fmt != "binary_little_endian")
        throw FormatError("'" + path + "': only binary_little_endian PLY is supported, got " + fmt);
      format_ok = true;
    } else if (kw == "element") {
      PlyElement e;
      tok >> e.name >> e.count;
      elements.push_back(e);
    } else if (kw == "property") {
      if (elements.empty()) throw FormatError("'" + path + "': property before element");
      PlyProperty p;
      tok >> p.type;
      if (p.type == "list") tok >> p.list_count_type >> p.type;
      tok >> p.name;
      elements.back().properties.push_back(p);
    }
  }
  if (!format_ok) throw FormatError("'" + path + "': missing format line");

  std::size_t pos = static_cast<std::size_t>(header_end - data.begin()) + marker.size();
  auto need = [&](std::size_t n) {
    if (pos + n > data.size()) throw FormatError("'" + path + "': truncated PLY body");
  };

  for (const PlyElement& e : elements) {
    if (e.name != "vertex") {
      for (std::size_t i = 0; i < e.count; ++i) {
        for (const PlyProperty& p : e.properties) {
          if (p.list_count_type.empty()) {
            need(ply_type_size(p.type, path));
            pos += ply_type_size(p.type, path);
          } else {
            const std::size_t cs = ply_type_size(p.list_count_type, path);
            need(cs);
            const auto n = static_cast<std::size_t>(ply_read_scalar(data.data() + pos, p.list_count_type));
            pos += cs + n * ply_type_size(p.type, path);
          }
        }
      }
      continue;
    }

    std::unordered_map<std::string, std::pair<std::size_t, std::string>> columns;
    std::size_t stride = 0;
    for (const PlyProperty& p : e.properties) {
      if (!p.list_count_type.empty()) throw FormatError("'" + path + "': list property in vertex element");
      columns[p.name] = {stride, p.type};
      stride += ply_type_size(p.type, path);
    }
    static const char* required[] = {"x",       "y",       "z",       "opacity", "scale_0", "scale_1", "scale_2",
                                     "rot_0",   "rot_1",   "rot_2",   "rot_3",   "f_dc_0",  "f_dc_1",  "f_dc_2"};
    for (const char* name : required)
      if (!columns.count(name)) throw FormatError("'" + path + "': missing vertex property '" + name + "'");
    if (e.count == 0) throw ValidationError("'" + path + "': empty scene (zero vertices)");
    need(stride * e.count);

    GaussianScene scene(layout);
    for (std::size_t i = 0; i < e.count; ++i) {
      const char* row = data.data() + pos + i * stride;
      auto get = [&](const char* name) {
        const auto& [off, type] = columns.at(name);
        return ply_read_scalar(row + off, type);
      };
      Gaussian g;
      g.position = {get("x"), get("y"), get("z")};
      g.log_scale = {get("scale_0"), get("scale_1"), get("scale_2")};
      g.rotation = tidy_rotation(Eigen::Quaterniond(get("rot_0"), get("rot_1"), get("rot_2"), get("rot_3")), path);
      g.opacity_logit = get("opacity");
      g.color = {import_color(get("f_dc_0")), import_color(get("f_dc_1")), import_color(get("f_dc_2"))};
      scene.add(g);
    }
    init_feature_logits(scene, feature_init_std, seed);
    return scene;
  }
  throw FormatError("'" + path + "': no vertex element");
}

void export_ply(const std::string& path, const GaussianScene& scene) {
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\n";
  header << "element vertex " << scene.size() << "\n";
  for (const char* name : {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
                           "rot_0", "rot_1", "rot_2", "rot_3"})
    header << "property float " << name << "\n";
  header << "end_header\n";
  const std::string h = header.str();
  Writer w;
  w.bytes(h.data(), h.size());
  for (const Gaussian& g : scene.gaussians()) {
    for (int k = 0; k < 3; ++k) w.f32(g.position[k]);
    for (int k = 0; k < 3; ++k) w.u32(std::bit_cast<uint32_t>(export_color(g.color[k])));
    w.f32(g.opacity_logit);
    for (int k = 0; k < 3; ++k) w.f32(g.log_scale[k]);
    w.f32(g.rotation.w());
    w.f32(g.rotation.x());
    w.f32(g.rotation.y());
    w.f32(g.rotation.z());
  }
  w.save(path);
}

void write_cameras(const std::string& path, const std::vector<Camera>& cameras) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out << std::setprecision(17);
  out << "# binsplat cameras: width height fx fy cx cy near far, then 3x4 world-to-camera\n";
  out << cameras.size() << "\n";
  for (const Camera& c : cameras) {
    out << c.width << " " << c.height << " " << c.fx << " " << c.fy << " " << c.cx << " " << c.cy << " "
        << c.near_clip << " " << c.far_clip << "\n";
    for (int r = 0; r < 3; ++r)
      out << c.rotation(r, 0) << " " << c.rotation(r, 1) << " " << c.rotation(r, 2) << " " << c.translation[r]
          << "\n";
  }
}

std::vector<Camera> read_cameras(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::stringstream body;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    body << (hash == std::string::npos ? line : line.substr(0, hash)) << "\n";
  }
  std::size_t count = 0;
  if (!(body >> count)) throw FormatError("'" + path + "': missing camera count");
  std::vector<Camera> cams(count);
  for (std::size_t i = 0; i < count; ++i) {
    Camera& c = cams[i];
    if (!(body >> c.width >> c.height >> c.fx >> c.fy >> c.cx >> c.cy >> c.near_clip >> c.far_clip))
      throw FormatError("'" + path + "': bad intrinsics for camera " + std::to_string(i));
    for (int r = 0; r < 3; ++r)
      if (!(body >> c.rotation(r, 0) >> c.rotation(r, 1) >> c.rotation(r, 2) >> c.translation[r]))
        throw FormatError("'" + path + "': bad extrinsics for camera " + std::to_string(i));
    c.validate();
  }
  return cams;
}

std::string read_magic(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  char m[4] = {};
  in.read(m, 4);
  return in.gcount() == 4 ? std::string(m, 4) : std::string();
}

}  // namespace binsplat
