#pragma once

// Reading and writing of scenes, plane stacks, images and run records.
//
// Scene files are JSON:
//   {layers: [{z, rect: [x0, y0, x1, y1], texture: {kind, seed}}, ...],
//    background: [r, g, b], z_min, z_max,
//    rig: {height, width, focal}                       (optional)
//    motion: {baseline, views, forward, eval_forward}} (optional)
// A stack directory holds stack.json (metadata), stack.bin.gz (rgb then sigma
// as little-endian doubles, gzip-compressed) and one 16-bit ASCII PPM per
// plane for inspection.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "planesynth/errors.hpp"
#include "planesynth/fit.hpp"
#include "planesynth/mpi_render.hpp"
#include "planesynth/scene_lab.hpp"
#include "planesynth/tensor.hpp"

namespace planesynth {

using Json = nlohmann::ordered_json;

inline constexpr int kSummarySchemaVersion = 1;
inline constexpr int kStackSchemaVersion = 1;

// JSON has no infinity; +-inf and NaN are written as the strings "inf",
// "-inf" and "nan".
inline Json json_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double number_from_json(const Json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw IoError("expected a number, got string '" + s + "'");
  }
  return j.get<double>();
}

// Decimal text for CSV cells; stable across runs of the same binary.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline Json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Scenes

struct SceneFile {
  SyntheticScene scene;
  Rig rig{};
  CameraMotion motion{};
};

inline Json scene_to_json(const SceneFile& f) {
  Json j;
  Json layers = Json::array();
  for (const Layer& l : f.scene.layers)
    layers.push_back({{"z", l.z},
                      {"rect", {l.rect[0], l.rect[1], l.rect[2], l.rect[3]}},
                      {"texture", {{"kind", l.texture.kind}, {"seed", l.texture.seed}}}});
  j["layers"] = layers;
  j["background"] = {f.scene.background[0], f.scene.background[1], f.scene.background[2]};
  j["z_min"] = f.scene.z_min;
  j["z_max"] = f.scene.z_max;
  j["rig"] = {{"height", f.rig.height}, {"width", f.rig.width}, {"focal", f.rig.focal}};
  j["motion"] = {{"baseline", f.motion.baseline},
                 {"views", f.motion.views},
                 {"forward", f.motion.forward},
                 {"eval_forward", f.motion.eval_forward}};
  return j;
}

inline SceneFile scene_from_json(const Json& j) {
  SceneFile f;
  try {
    for (const auto& jl : j.at("layers")) {
      Layer l;
      l.z = jl.at("z").get<double>();
      const auto r = jl.at("rect").get<std::vector<double>>();
      if (r.size() != 4) throw IoError("layer rect needs 4 numbers");
      std::copy(r.begin(), r.end(), l.rect.begin());
      if (jl.contains("texture")) {
        l.texture.kind = jl["texture"].value("kind", std::string("noise"));
        l.texture.seed = jl["texture"].value("seed", std::uint64_t{0});
      }
      if (l.texture.kind != "noise" && l.texture.kind != "solid")
        throw IoError("unknown texture kind '" + l.texture.kind + "'");
      f.scene.layers.push_back(l);
    }
    if (j.contains("background")) {
      const auto b = j["background"].get<std::vector<double>>();
      if (b.size() != 3) throw IoError("background needs 3 numbers");
      std::copy(b.begin(), b.end(), f.scene.background.begin());
    }
    f.scene.z_min = j.value("z_min", f.scene.z_min);
    f.scene.z_max = j.value("z_max", f.scene.z_max);
    if (j.contains("rig")) {
      const auto& r = j["rig"];
      f.rig.height = r.value("height", f.rig.height);
      f.rig.width = r.value("width", f.rig.width);
      f.rig.focal = r.value("focal", f.rig.focal);
    }
    if (j.contains("motion")) {
      const auto& m = j["motion"];
      f.motion.baseline = m.value("baseline", f.motion.baseline);
      f.motion.views = m.value("views", f.motion.views);
      f.motion.forward = m.value("forward", f.motion.forward);
      f.motion.eval_forward = m.value("eval_forward", f.motion.eval_forward);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed scene JSON: ") + e.what());
  }
  f.scene.sort_layers();
  f.scene.validate();
  if (f.rig.height < 1 || f.rig.width < 1 || !(f.rig.focal > 0.0)) throw InvalidArgument("rig needs positive dims and focal");
  if (f.motion.views < 1) throw InvalidArgument("motion needs at least one training view");
  return f;
}

inline SceneFile load_scene_file(const std::filesystem::path& path) { return scene_from_json(read_json_file(path)); }

inline void save_scene_file(const std::filesystem::path& path, const SceneFile& f) {
  write_text_file(path, scene_to_json(f).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Images

namespace detail {

inline std::uint32_t quantize(double v, std::uint32_t maxval) {
  const double c = std::clamp(v, 0.0, 1.0);
  return std::uint32_t(std::lround(c * double(maxval)));
}

inline void image_dims(const Tensor& image, std::size_t& h, std::size_t& w, std::size_t& ch) {
  if (image.rank() == 2) {
    h = image.dim(0), w = image.dim(1), ch = 1;
  } else if (image.rank() == 3 && (image.dim(2) == 1 || image.dim(2) == 3)) {
    h = image.dim(0), w = image.dim(1), ch = image.dim(2);
  } else {
    throw DimensionMismatch("images must be {H, W}, {H, W, 1} or {H, W, 3}, got " + shape_string(image.shape()));
  }
}

inline void put_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>((v >> s) & 0xFF));
}

inline void png_chunk(std::vector<unsigned char>& out, const char* type, const std::vector<unsigned char>& data) {
  put_u32_be(out, std::uint32_t(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, uInt(out.size() - start));
  put_u32_be(out, std::uint32_t(crc));
}

}  // namespace detail

// PNG with 8- or 16-bit samples; grey for single-channel images, RGB otherwise.
// Values are clamped to [0, 1]. No ancillary chunks, so equal pixels give
// equal files.
inline std::vector<unsigned char> encode_png(const Tensor& image, int bit_depth = 8) {
  if (bit_depth != 8 && bit_depth != 16) throw InvalidArgument("PNG bit depth must be 8 or 16");
  std::size_t h, w, ch;
  detail::image_dims(image, h, w, ch);
  const std::uint32_t maxval = bit_depth == 8 ? 255u : 65535u;
  const std::size_t bps = std::size_t(bit_depth / 8);
  std::vector<unsigned char> raw;
  raw.reserve(h * (1 + w * ch * bps));
  for (std::size_t y = 0; y < h; ++y) {
    raw.push_back(0);  // filter: none
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < ch; ++c) {
        const std::uint32_t q = detail::quantize(image[(y * w + x) * ch + c], maxval);
        if (bps == 2) raw.push_back(static_cast<unsigned char>(q >> 8));
        raw.push_back(static_cast<unsigned char>(q & 0xFF));
      }
  }
  uLongf zlen = compressBound(uLong(raw.size()));
  std::vector<unsigned char> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), uLong(raw.size()), 9) != Z_OK) throw IoError("PNG compression failed");
  z.resize(zlen);

  std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  std::vector<unsigned char> ihdr;
  detail::put_u32_be(ihdr, std::uint32_t(w));
  detail::put_u32_be(ihdr, std::uint32_t(h));
  ihdr.push_back(static_cast<unsigned char>(bit_depth));
  ihdr.push_back(ch == 1 ? 0 : 2);  // colour type: grey or RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", z);
  detail::png_chunk(out, "IEND", {});
  return out;
}

inline void write_png(const std::filesystem::path& path, const Tensor& image, int bit_depth = 8) {
  const auto bytes = encode_png(image, bit_depth);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

// Decodes the PNGs written by encode_png (8/16-bit grey or RGB, no interlace,
// filter type 0 on every row).
inline Tensor decode_png(const std::vector<unsigned char>& bytes) {
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0) throw IoError("not a PNG file");
  auto be32 = [&](std::size_t at) {
    if (at + 4 > bytes.size()) throw IoError("truncated PNG");
    return (std::uint32_t(bytes[at]) << 24) | (std::uint32_t(bytes[at + 1]) << 16) |
           (std::uint32_t(bytes[at + 2]) << 8) | std::uint32_t(bytes[at + 3]);
  };
  std::size_t pos = 8, w = 0, h = 0, ch = 0;
  int depth = 0;
  std::vector<unsigned char> z;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = be32(pos);
    const std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
    const std::size_t data = pos + 8;
    if (data + len + 4 > bytes.size()) throw IoError("truncated PNG chunk");
    if (type == "IHDR") {
      w = be32(data);
      h = be32(data + 4);
      depth = bytes[data + 8];
      const int ct = bytes[data + 9];
      if (ct != 0 && ct != 2) throw IoError("unsupported PNG colour type");
      if (bytes[data + 12] != 0) throw IoError("interlaced PNG is not supported");
      ch = ct == 0 ? 1 : 3;
    } else if (type == "IDAT") {
      z.insert(z.end(), bytes.begin() + std::ptrdiff_t(data), bytes.begin() + std::ptrdiff_t(data + len));
    } else if (type == "IEND") {
      break;
    }
    pos = data + len + 4;
  }
  if (w == 0 || h == 0 || (depth != 8 && depth != 16)) throw IoError("unsupported or missing PNG header");
  const std::size_t bps = std::size_t(depth / 8), stride = 1 + w * ch * bps;
  std::vector<unsigned char> raw(h * stride);
  uLongf rawlen = uLongf(raw.size());
  if (uncompress(raw.data(), &rawlen, z.data(), uLong(z.size())) != Z_OK || rawlen != raw.size())
    throw IoError("PNG image data is corrupt");
  const double maxval = depth == 8 ? 255.0 : 65535.0;
  Tensor img({h, w, ch});
  for (std::size_t y = 0; y < h; ++y) {
    if (raw[y * stride] != 0) throw IoError("unsupported PNG row filter");
    for (std::size_t k = 0; k < w * ch; ++k) {
      const unsigned char* p = &raw[y * stride + 1 + k * bps];
      const std::uint32_t q = bps == 2 ? (std::uint32_t(p[0]) << 8) | p[1] : p[0];
      img[y * w * ch + k] = double(q) / maxval;
    }
  }
  return img;
}

inline Tensor read_png(const std::filesystem::path& path) {
  const std::string s = read_text_file(path);
  return decode_png(std::vector<unsigned char>(s.begin(), s.end()));
}

// ASCII PPM (P3) for RGB images or PGM (P2) for single-channel ones.
inline std::string encode_pnm(const Tensor& image, std::uint32_t maxval = 65535) {
  std::size_t h, w, ch;
  detail::image_dims(image, h, w, ch);
  std::ostringstream s;
  s << (ch == 3 ? "P3" : "P2") << "\n" << w << " " << h << "\n" << maxval << "\n";
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t k = 0; k < w * ch; ++k) s << (k ? " " : "") << detail::quantize(image[y * w * ch + k], maxval);
    s << "\n";
  }
  return s.str();
}

inline void write_pnm(const std::filesystem::path& path, const Tensor& image, std::uint32_t maxval = 65535) {
  write_text_file(path, encode_pnm(image, maxval));
}

inline Tensor read_pnm(const std::filesystem::path& path) {
  std::istringstream s(read_text_file(path));
  std::string magic;
  std::size_t w = 0, h = 0;
  double maxval = 0;
  s >> magic >> w >> h >> maxval;
  if ((magic != "P3" && magic != "P2") || !s || !(maxval > 0)) throw IoError("'" + path.string() + "' is not an ASCII PPM/PGM");
  const std::size_t ch = magic == "P3" ? 3 : 1;
  Tensor img({h, w, ch});
  for (double& v : img.raw()) {
    double q;
    if (!(s >> q)) throw IoError("'" + path.string() + "' is truncated");
    v = q / maxval;
  }
  return img;
}

// ---------------------------------------------------------------------------
// Plane stacks

namespace detail {

inline std::vector<unsigned char> gzip_bytes(const std::vector<unsigned char>& in) {
  z_stream zs{};
  if (deflateInit2(&zs, 9, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK) throw IoError("deflateInit failed");
  std::vector<unsigned char> out(deflateBound(&zs, uLong(in.size())) + 32);
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = uInt(in.size());
  zs.next_out = out.data();
  zs.avail_out = uInt(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  const std::size_t n = zs.total_out;
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw IoError("gzip compression failed");
  out.resize(n);
  return out;
}

inline std::vector<unsigned char> gunzip_bytes(const std::vector<unsigned char>& in, std::size_t expected) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 16) != Z_OK) throw IoError("inflateInit failed");
  std::vector<unsigned char> out(expected);
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = uInt(in.size());
  zs.next_out = out.data();
  zs.avail_out = uInt(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  const std::size_t n = zs.total_out;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || n != expected) throw IoError("stack data is corrupt or has the wrong size");
  return out;
}

inline void append_doubles(std::vector<unsigned char>& out, std::span<const double> v) {
  static_assert(std::endian::native == std::endian::little, "stack files assume a little-endian host");
  const auto* p = reinterpret_cast<const unsigned char*>(v.data());
  out.insert(out.end(), p, p + v.size() * sizeof(double));
}

}  // namespace detail

inline void save_stack(const std::filesystem::path& dir, const PlaneStack& stack) {
  stack.validate();
  std::filesystem::create_directories(dir);
  const std::size_t n = stack.planes(), h = stack.height(), w = stack.width();
  Json j;
  j["schema_version"] = kStackSchemaVersion;
  j["planes"] = n;
  j["height"] = h;
  j["width"] = w;
  j["disparity"] = stack.disparity;
  j["K"] = {{"fx", stack.K.fx}, {"fy", stack.K.fy}, {"cx", stack.K.cx}, {"cy", stack.K.cy}};
  j["scale"] = stack.scale;
  j["data"] = "stack.bin.gz";
  write_text_file(dir / "stack.json", j.dump(2) + "\n");

  std::vector<unsigned char> raw;
  detail::append_doubles(raw, stack.rgb.data());
  detail::append_doubles(raw, stack.sigma.data());
  const auto gz = detail::gzip_bytes(raw);
  std::ofstream out(dir / "stack.bin.gz", std::ios::binary);
  if (!out) throw IoError("cannot write '" + (dir / "stack.bin.gz").string() + "'");
  out.write(reinterpret_cast<const char*>(gz.data()), std::streamsize(gz.size()));

  const std::size_t per = h * w * 3;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor plane({h, w, 3});
    std::copy_n(stack.rgb.data().begin() + std::ptrdiff_t(i * per), per, plane.raw().begin());
    char name[32];
    std::snprintf(name, sizeof name, "plane_%02zu.ppm", i + 1);
    write_pnm(dir / name, plane);
  }
}

inline PlaneStack load_stack(const std::filesystem::path& dir) {
  const Json j = read_json_file(dir / "stack.json");
  PlaneStack s;
  std::size_t n, h, w;
  try {
    if (j.at("schema_version").get<int>() != kStackSchemaVersion) throw IoError("unsupported stack schema version");
    n = j.at("planes").get<std::size_t>();
    h = j.at("height").get<std::size_t>();
    w = j.at("width").get<std::size_t>();
    s.disparity = j.at("disparity").get<std::vector<double>>();
    const auto& k = j.at("K");
    s.K = {k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(), k.at("cy").get<double>()};
    s.scale = j.value("scale", 1.0);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed '" + (dir / "stack.json").string() + "': " + e.what());
  }
  if (s.disparity.size() != n) throw IoError("stack.json disparity count does not match plane count");
  const std::string blob = read_text_file(dir / "stack.bin.gz");
  const std::size_t count = n * h * w * 4;
  const auto raw = detail::gunzip_bytes(std::vector<unsigned char>(blob.begin(), blob.end()), count * sizeof(double));
  s.rgb = Tensor({n, h, w, 3});
  s.sigma = Tensor({n, h, w});
  std::memcpy(s.rgb.raw().data(), raw.data(), n * h * w * 3 * sizeof(double));
  std::memcpy(s.sigma.raw().data(), raw.data() + n * h * w * 3 * sizeof(double), n * h * w * sizeof(double));
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Run records

inline std::string history_csv_header(std::size_t planes) {
  std::string s = "step,l1,smooth,rep,total,rv,psnr,ssim";
  for (std::size_t i = 1; i <= planes; ++i) s += ",d_" + std::to_string(i);
  return s;
}

inline std::string history_csv(const std::vector<HistoryRow>& rows, std::size_t planes) {
  std::string s = history_csv_header(planes) + "\n";
  for (const HistoryRow& r : rows) {
    if (r.disparity.size() != planes) throw DimensionMismatch("history row has the wrong number of disparities");
    s += std::to_string(r.step);
    for (double v : {r.l1, r.smooth, r.rep, r.total, r.rv, r.psnr, r.ssim}) s += "," + format_number(v);
    for (double d : r.disparity) s += "," + format_number(d);
    s += "\n";
  }
  return s;
}

struct RunInfo {
  std::string command{"fit"};
  std::string scene;
  std::string placement;
  std::string schedule;
  std::size_t planes{0};
  std::size_t steps{0};
  std::uint64_t seed{0};
  LossConfig loss{};
};

inline Json summary_json(const RunInfo& info, const FitResult& res) {
  Json j;
  j["schema_version"] = kSummarySchemaVersion;
  j["command"] = info.command;
  j["scene"] = info.scene;
  j["placement"] = info.placement;
  j["schedule"] = info.schedule;
  j["planes"] = info.planes;
  j["steps"] = info.steps;
  j["seed"] = info.seed;
  j["loss_config"] = {{"lambda", info.loss.lambda},
                      {"beta", info.loss.beta},
                      {"occ_c", info.loss.occ_c},
                      {"scale", info.loss.scale},
                      {"mask", info.loss.mask == MaskMode::On ? "on" : "off"}};
  j["final"] = {{"l1", json_number(res.final_loss.l1)},
                {"smooth", json_number(res.final_loss.smooth)},
                {"rep", json_number(res.final_loss.rep)},
                {"total", json_number(res.final_loss.total)}};
  j["rv"] = json_number(res.final_rv);
  j["psnr"] = json_number(res.final_psnr);
  j["ssim"] = json_number(res.final_ssim);
  j["source_psnr"] = json_number(res.final_source_psnr);
  j["disparity"] = res.stack.disparity;
  return j;
}

inline Json offsets_json(const std::string& placement, const FitResult& res) {
  Json j;
  j["placement"] = placement;
  j["disparity"] = res.stack.disparity;
  j["offsets"] = res.offsets;
  j["global_logits"] = res.global_logits;
  return j;
}

}  // namespace planesynth
