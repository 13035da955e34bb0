#include "trikit/io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace trikit {

namespace {

void put_u16(std::ostream& out, uint16_t v) {
  const unsigned char buf[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(buf), 2);
}

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

void put_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

uint16_t get_u16(std::istream& in) {
  unsigned char buf[2];
  in.read(reinterpret_cast<char*>(buf), 2);
  return static_cast<uint16_t>(buf[0] | (buf[1] << 8));
}

uint32_t get_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}

uint64_t get_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}

float get_f32(std::istream& in) {
  const uint32_t bits = get_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void check_stream(const std::ios& s, const std::filesystem::path& path, const char* what) {
  if (!s) throw std::runtime_error(std::string(what) + ": I/O failure for " + path.string());
}

}  // namespace

void write_tspg(const TspgGrid& grid, const std::filesystem::path& path) {
  require(grid.values.size() ==
              static_cast<size_t>(grid.rows) * grid.cols * grid.channels,
          "write_tspg: payload size mismatch");
  std::ofstream out(path, std::ios::binary);
  check_stream(out, path, "write_tspg");
  out.write("TSPG", 4);
  put_u16(out, 1);
  put_u32(out, static_cast<uint32_t>(grid.rows));
  put_u32(out, static_cast<uint32_t>(grid.cols));
  put_u16(out, static_cast<uint16_t>(grid.channels));
  put_u16(out, 0);  // dtype f32
  for (float v : grid.values) put_f32(out, v);
  check_stream(out, path, "write_tspg");
}

TspgGrid read_tspg(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check_stream(in, path, "read_tspg");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TSPG", 4) != 0)
    throw std::runtime_error("read_tspg: bad magic in " + path.string());
  const uint16_t version = get_u16(in);
  if (version != 1) throw std::runtime_error("read_tspg: unsupported version");
  TspgGrid grid;
  grid.rows = static_cast<int>(get_u32(in));
  grid.cols = static_cast<int>(get_u32(in));
  grid.channels = static_cast<int>(get_u16(in));
  const uint16_t dtype = get_u16(in);
  if (dtype != 0) throw std::runtime_error("read_tspg: unsupported dtype");
  const size_t count = static_cast<size_t>(grid.rows) * grid.cols * grid.channels;
  grid.values.resize(count);
  for (size_t i = 0; i < count; ++i) grid.values[i] = get_f32(in);
  check_stream(in, path, "read_tspg");
  return grid;
}

TspgGrid tspg_from_scalar(const ScalarGrid& g) {
  TspgGrid out;
  out.rows = g.rows;
  out.cols = g.cols;
  out.channels = 1;
  out.values.reserve(g.size());
  for (double v : g.data) out.values.push_back(static_cast<float>(v));
  return out;
}

TspgGrid tspg_from_vec3(const Vec3Grid& g) {
  TspgGrid out;
  out.rows = g.rows;
  out.cols = g.cols;
  out.channels = 3;
  out.values.reserve(g.size() * 3);
  for (const Vec3& v : g.data) {
    out.values.push_back(static_cast<float>(v.x()));
    out.values.push_back(static_cast<float>(v.y()));
    out.values.push_back(static_cast<float>(v.z()));
  }
  return out;
}

TspgGrid tspg_from_mask(const MaskGrid& g) {
  TspgGrid out;
  out.rows = g.rows;
  out.cols = g.cols;
  out.channels = 1;
  out.values.reserve(g.size());
  for (uint8_t v : g.data) out.values.push_back(v ? 1.0f : 0.0f);
  return out;
}

ScalarGrid scalar_from_tspg(const TspgGrid& g) {
  require(g.channels == 1, "scalar_from_tspg: expected one channel");
  ScalarGrid out(g.rows, g.cols, 0.0);
  for (size_t i = 0; i < out.size(); ++i) out.data[i] = g.values[i];
  return out;
}

Vec3Grid vec3_from_tspg(const TspgGrid& g) {
  require(g.channels == 3, "vec3_from_tspg: expected three channels");
  Vec3Grid out(g.rows, g.cols, Vec3::Zero());
  for (size_t i = 0; i < out.size(); ++i) {
    out.data[i] = Vec3(g.values[3 * i], g.values[3 * i + 1], g.values[3 * i + 2]);
  }
  return out;
}

MaskGrid mask_from_tspg(const TspgGrid& g, float threshold) {
  require(g.channels == 1, "mask_from_tspg: expected one channel");
  MaskGrid out(g.rows, g.cols, 0);
  for (size_t i = 0; i < out.size(); ++i) out.data[i] = g.values[i] > threshold ? 1 : 0;
  return out;
}

void write_ppm(const ImageRGB& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  check_stream(out, path, "write_ppm");
  out << "P6\n" << image.cols() << " " << image.rows() << "\n255\n";
  std::vector<unsigned char> buf;
  buf.reserve(image.pixels.size() * 3);
  for (const Vec3& px : image.pixels.data) {
    for (int ch = 0; ch < 3; ++ch) {
      const double v = std::clamp(px[ch], 0.0, 1.0);
      buf.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  check_stream(out, path, "write_ppm");
}

ImageRGB read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check_stream(in, path, "read_ppm");
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path.string());
  auto next_int = [&in]() {
    int v;
    while (true) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      if (!(in >> v)) throw std::runtime_error("read_ppm: malformed header");
      return v;
    }
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw std::runtime_error("read_ppm: only 8-bit PPM supported");
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> buf(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  check_stream(in, path, "read_ppm");
  ImageRGB img;
  img.pixels = Vec3Grid(h, w, Vec3::Zero());
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels.data[i] =
        Vec3(buf[3 * i] / 255.0, buf[3 * i + 1] / 255.0, buf[3 * i + 2] / 255.0);
  }
  return img;
}

void write_tspt(const TriangleSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  check_stream(out, path, "write_tspt");
  out.write("TSPT", 4);
  put_u16(out, 1);
  put_f32(out, static_cast<float>(set.s_min));
  put_f32(out, static_cast<float>(set.s_max));
  put_u32(out, static_cast<uint32_t>(set.source_poses.size()));
  for (const CameraPose& pose : set.source_poses) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) put_f32(out, static_cast<float>(pose.rotation(r, c)));
    for (int k = 0; k < 3; ++k) put_f32(out, static_cast<float>(pose.translation[k]));
  }
  put_u64(out, set.size());
  for (size_t i = 0; i < set.size(); ++i) {
    for (int k = 0; k < 3; ++k) put_f32(out, static_cast<float>(set.centers[i][k]));
    for (int k = 0; k < 3; ++k) put_f32(out, static_cast<float>(set.scale_logits[i][k]));
    for (int k = 0; k < 4; ++k) put_f32(out, static_cast<float>(set.quats[i].coeffs()[k]));
    for (int k = 0; k < 3; ++k) put_f32(out, static_cast<float>(set.sh0[i][k]));
    put_f32(out, static_cast<float>(set.density_logits[i]));
    put_f32(out, static_cast<float>(set.blur_raws[i]));
    for (int k = 0; k < 3; ++k) put_f32(out, static_cast<float>(set.scale_refs[i][k]));
    for (int k = 0; k < 3; ++k) put_f32(out, static_cast<float>(set.ref_normals[i][k]));
    put_u32(out, set.source_pixels[i].view);
    put_u32(out, set.source_pixels[i].row);
    put_u32(out, set.source_pixels[i].col);
    put_u32(out, set.flags[i]);
  }
  check_stream(out, path, "write_tspt");
}

TriangleSet read_tspt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check_stream(in, path, "read_tspt");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TSPT", 4) != 0)
    throw std::runtime_error("read_tspt: bad magic in " + path.string());
  const uint16_t version = get_u16(in);
  if (version != 1) throw std::runtime_error("read_tspt: unsupported version");
  TriangleSet set;
  set.s_min = get_f32(in);
  set.s_max = get_f32(in);
  const uint32_t n_views = get_u32(in);
  set.source_poses.resize(n_views);
  for (CameraPose& pose : set.source_poses) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) pose.rotation(r, c) = get_f32(in);
    for (int k = 0; k < 3; ++k) pose.translation[k] = get_f32(in);
    pose.rotation = project_to_so3(pose.rotation);  // f32 storage round-off
  }
  const uint64_t count = get_u64(in);
  for (uint64_t i = 0; i < count; ++i) {
    Vec3 center, scale, sh0, scale_ref, ref_normal;
    for (int k = 0; k < 3; ++k) center[k] = get_f32(in);
    for (int k = 0; k < 3; ++k) scale[k] = get_f32(in);
    Vec4 qc;
    for (int k = 0; k < 4; ++k) qc[k] = get_f32(in);
    for (int k = 0; k < 3; ++k) sh0[k] = get_f32(in);
    const double density = get_f32(in);
    const double blur = get_f32(in);
    for (int k = 0; k < 3; ++k) scale_ref[k] = get_f32(in);
    for (int k = 0; k < 3; ++k) ref_normal[k] = get_f32(in);
    SourcePixel sp;
    sp.view = get_u32(in);
    sp.row = get_u32(in);
    sp.col = get_u32(in);
    const uint32_t flags = get_u32(in);
    if (!in) throw std::runtime_error("read_tspt: truncated file " + path.string());
    if (sp.view >= n_views) throw std::runtime_error("read_tspt: view index out of range");

    set.centers.push_back(center);
    set.scale_logits.push_back(scale);
    Quat q(qc[3], qc[0], qc[1], qc[2]);
    set.quats.push_back(q.normalized());
    set.sh0.push_back(sh0);
    set.density_logits.push_back(density);
    set.blur_raws.push_back(blur);
    set.scale_refs.push_back(scale_ref);
    set.ref_normals.push_back(ref_normal);
    set.source_pixels.push_back(sp);
    set.flags.push_back(static_cast<uint8_t>(flags));
  }
  check_stream(in, path, "read_tspt");
  return set;
}

namespace {

struct KeyValue {
  std::string key;
  std::string value;
  size_t line = 0;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const KeyValue& kv) {
  try {
    size_t idx = 0;
    const double v = std::stod(kv.value, &idx);
    if (idx != kv.value.size()) throw std::invalid_argument("");
    return v;
  } catch (...) {
    throw std::invalid_argument("manifest: bad number for '" + kv.key + "' at line " +
                                std::to_string(kv.line));
  }
}

int to_int(const KeyValue& kv) { return static_cast<int>(std::llround(to_double(kv))); }

bool to_bool(const KeyValue& kv) {
  if (kv.value == "true" || kv.value == "1") return true;
  if (kv.value == "false" || kv.value == "0") return false;
  throw std::invalid_argument("manifest: bad boolean for '" + kv.key + "' at line " +
                              std::to_string(kv.line));
}

std::vector<double> to_doubles(const KeyValue& kv, size_t expected) {
  std::istringstream ss(kv.value);
  std::vector<double> out;
  double v;
  while (ss >> v) out.push_back(v);
  if (out.size() != expected) {
    throw std::invalid_argument("manifest: '" + kv.key + "' at line " + std::to_string(kv.line) +
                                " needs " + std::to_string(expected) + " numbers");
  }
  return out;
}

}  // namespace

SceneManifest parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("parse_config: cannot open " + path.string());
  const std::filesystem::path base = path.parent_path();

  SceneManifest m;
  std::vector<std::vector<KeyValue>> view_sections;
  std::vector<KeyValue>* section = nullptr;  // null = global
  std::vector<KeyValue> global;

  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line == "[view]") {
      view_sections.emplace_back();
      section = &view_sections.back();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("parse_config: malformed line " + std::to_string(line_no) +
                                  " in " + path.string() + " (expected key = value)");
    }
    KeyValue kv{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
    if (kv.key.empty()) {
      throw std::invalid_argument("parse_config: empty key at line " + std::to_string(line_no));
    }
    (section ? *section : global).push_back(kv);
  }

  for (const KeyValue& kv : global) {
    const std::string& k = kv.key;
    auto& fit = m.fit;
    auto& sched = m.schedule;
    auto& w = m.weights;
    if (k == "steps") fit.steps = to_int(kv);
    else if (k == "lr_center") fit.lr_center = to_double(kv);
    else if (k == "lr_scale") fit.lr_scale = to_double(kv);
    else if (k == "lr_sh0") fit.lr_sh0 = to_double(kv);
    else if (k == "lr_density") fit.lr_density = to_double(kv);
    else if (k == "lr_blur") fit.lr_blur = to_double(kv);
    else if (k == "lr_quat") fit.lr_quat = to_double(kv);
    else if (k == "e_init") sched.e_init = to_double(kv);
    else if (k == "e_final") sched.e_final = to_double(kv);
    else if (k == "e_steps") sched.e_steps = to_int(kv);
    else if (k == "tau_init") sched.tau_init = to_double(kv);
    else if (k == "tau_final") sched.tau_final = to_double(kv);
    else if (k == "tau_steps") sched.tau_steps = to_int(kv);
    else if (k == "beta_init") sched.beta_init = to_double(kv);
    else if (k == "beta_final") sched.beta_final = to_double(kv);
    else if (k == "beta_steps") sched.beta_steps = to_int(kv);
    else if (k == "t_tk") sched.bootstrap.t_tk = to_int(kv);
    else if (k == "t_bl") sched.bootstrap.t_bl = to_int(kv);
    else if (k == "blur_eps") sched.blur_eps = to_double(kv);
    else if (k == "alpha_floor") sched.alpha_floor_value = to_double(kv);
    else if (k == "coverage_threshold") sched.coverage_threshold = to_double(kv);
    else if (k == "coverage_gain") sched.coverage_gain = to_double(kv);
    else if (k == "lambda_photo") w.lambda_photo = to_double(kv);
    else if (k == "lambda_mse") w.lambda_mse = to_double(kv);
    else if (k == "lambda_cam") w.lambda_cam = to_double(kv);
    else if (k == "lambda_normal") w.lambda_normal = to_double(kv);
    else if (k == "omega_t") w.omega_t = to_double(kv);
    else if (k == "omega_r") w.omega_r = to_double(kv);
    else if (k == "huber_delta") w.huber_delta = to_double(kv);
    else if (k == "filter_total") fit.filter_total = to_double(kv);
    else if (k == "filter_mse") fit.filter_mse = to_double(kv);
    else if (k == "filter_pose") fit.filter_pose = to_double(kv);
    else if (k == "filter_activation_step") fit.filter_activation_step = to_int(kv);
    else if (k == "filter_factor") fit.filter_factor = to_double(kv);
    else if (k == "smooth_window") fit.normals.smooth_window = to_int(kv);
    else if (k == "filter_window") fit.normals.filter_window = to_int(kv);
    else if (k == "detach_points") fit.normals.detach_points = to_bool(kv);
    else if (k == "free_rotations") fit.free_rotations = to_bool(kv);
    else if (k == "frame_recompute_displacement") fit.frame_recompute_displacement = to_double(kv);
    else if (k == "stride") m.assembly_stride = to_int(kv);
    else if (k == "s_min") m.s_min = to_double(kv);
    else if (k == "s_max") m.s_max = to_double(kv);
    else if (k == "init_density_logit") m.init_density_logit = to_double(kv);
    else if (k == "init_blur_raw") m.init_blur_raw = to_double(kv);
    else if (k == "init_scale_logit") m.init_scale_logit = to_double(kv);
    else if (k == "init_color_from_image") m.init_color_from_image = to_bool(kv);
    else if (k == "seed") m.seed = static_cast<uint64_t>(to_double(kv));
    else if (k == "tile_size") fit.raster.tile_size = to_int(kv);
    else if (k == "kappa") fit.raster.kappa = to_double(kv);
    else m.warnings.push_back("unknown global key '" + k + "' at line " +
                              std::to_string(kv.line));
  }
  m.fit.schedule = m.schedule;

  std::vector<std::string> missing;
  std::vector<std::string> missing_files;
  for (size_t vi = 0; vi < view_sections.size(); ++vi) {
    ManifestView view;
    bool has_image = false, has_points = false, has_pose = false;
    bool has_fx = false, has_fy = false, has_cx = false, has_cy = false;
    bool has_w = false, has_h = false;
    for (const KeyValue& kv : view_sections[vi]) {
      const std::string& k = kv.key;
      if (k == "image") {
        view.image = base / kv.value;
        has_image = true;
      } else if (k == "points") {
        view.points = base / kv.value;
        has_points = true;
      } else if (k == "points_mask") {
        view.points_mask = base / kv.value;
      } else if (k == "teacher") {
        view.teacher = base / kv.value;
      } else if (k == "teacher_mask") {
        view.teacher_mask = base / kv.value;
      } else if (k == "pose") {
        const auto vals = to_doubles(kv, 12);
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) view.pose.rotation(r, c) = vals[3 * r + c];
        view.pose.translation = Vec3(vals[9], vals[10], vals[11]);
        const Mat3 snapped = project_to_so3(view.pose.rotation);
        const double err = (snapped - view.pose.rotation).cwiseAbs().maxCoeff();
        if (err > 1e-3) {
          m.warnings.push_back("view " + std::to_string(vi) + ": pose rotation corrected by " +
                               std::to_string(err));
        }
        view.pose.rotation = snapped;
        has_pose = true;
      } else if (k == "fx") {
        view.intr.fx = to_double(kv);
        has_fx = true;
      } else if (k == "fy") {
        view.intr.fy = to_double(kv);
        has_fy = true;
      } else if (k == "cx") {
        view.intr.cx = to_double(kv);
        has_cx = true;
      } else if (k == "cy") {
        view.intr.cy = to_double(kv);
        has_cy = true;
      } else if (k == "width") {
        view.intr.width = to_int(kv);
        has_w = true;
      } else if (k == "height") {
        view.intr.height = to_int(kv);
        has_h = true;
      } else {
        m.warnings.push_back("unknown view key '" + k + "' at line " + std::to_string(kv.line));
      }
    }
    auto need = [&](bool ok, const char* name) {
      if (!ok) missing.push_back("view " + std::to_string(vi) + ": " + name);
    };
    need(has_image, "image");
    need(has_points, "points");
    need(has_pose, "pose");
    need(has_fx, "fx");
    need(has_fy, "fy");
    need(has_cx, "cx");
    need(has_cy, "cy");
    need(has_w, "width");
    need(has_h, "height");
    for (const auto* p : {&view.image, &view.points, &view.points_mask, &view.teacher,
                          &view.teacher_mask}) {
      if (!p->empty() && !std::filesystem::exists(*p)) missing_files.push_back(p->string());
    }
    m.views.push_back(view);
  }

  if (!missing.empty() || !missing_files.empty()) {
    std::string msg = "parse_config: ";
    if (!missing.empty()) {
      msg += "missing required keys: ";
      for (size_t i = 0; i < missing.size(); ++i) msg += (i ? ", " : "") + missing[i];
    }
    if (!missing_files.empty()) {
      if (!missing.empty()) msg += "; ";
      msg += "missing files: ";
      for (size_t i = 0; i < missing_files.size(); ++i)
        msg += (i ? ", " : "") + missing_files[i];
    }
    throw std::invalid_argument(msg);
  }
  return m;
}

std::vector<FitView> load_views(const SceneManifest& manifest) {
  std::vector<FitView> views;
  for (const ManifestView& mv : manifest.views) {
    FitView view;
    view.pose = mv.pose;
    view.intr = mv.intr;
    view.intr.validate();
    view.pose.validate();

    view.image = read_ppm(mv.image);
    require(view.image.rows() == mv.intr.height && view.image.cols() == mv.intr.width,
            "load_views: image size disagrees with intrinsics");

    const TspgGrid pts = read_tspg(mv.points);
    view.point_map.points = vec3_from_tspg(pts);
    require(view.point_map.points.same_shape(view.image.pixels),
            "load_views: point map size disagrees with image");
    view.point_map.mask = MaskGrid(pts.rows, pts.cols, 0);
    for (int r = 0; r < pts.rows; ++r)
      for (int c = 0; c < pts.cols; ++c)
        view.point_map.mask(r, c) = view.point_map.points(r, c).z() > 0.0 ? 1 : 0;
    if (!mv.points_mask.empty()) {
      const MaskGrid extra = mask_from_tspg(read_tspg(mv.points_mask));
      require(extra.same_shape(view.point_map.mask), "load_views: point mask size mismatch");
      for (size_t i = 0; i < extra.size(); ++i)
        view.point_map.mask.data[i] &= extra.data[i];
    }

    if (!mv.teacher.empty()) {
      const TspgGrid tg = read_tspg(mv.teacher);
      NormalField teacher;
      teacher.normals = vec3_from_tspg(tg);
      teacher.mask = MaskGrid(tg.rows, tg.cols, 1);
      if (!mv.teacher_mask.empty()) {
        teacher.mask = mask_from_tspg(read_tspg(mv.teacher_mask));
        require(teacher.mask.same_shape(teacher.normals), "load_views: teacher mask mismatch");
      }
      for (int r = 0; r < tg.rows; ++r) {
        for (int c = 0; c < tg.cols; ++c) {
          const double len = teacher.normals(r, c).norm();
          if (len < 1e-6) {
            teacher.mask(r, c) = 0;
          } else {
            teacher.normals(r, c) /= len;
          }
        }
      }
      view.teacher = resize_normal_field(teacher, view.intr.height, view.intr.width);
    }
    views.push_back(std::move(view));
  }
  return views;
}

}  // namespace trikit
