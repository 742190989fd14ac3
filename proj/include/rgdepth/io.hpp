#pragma once

// File formats:
//   PFM   "Pf" (1 channel) / "PF" (3 channels), "W H", scale (< 0: little-endian),
//         then float32 rows from bottom to top. Feature stacks with other channel
//         counts are written as one PFM per channel.
//   PNG   8-bit grayscale or RGB, mapped to [0, 1].
//   Scene manifest  JSON (manifest.json) listing intrinsics, poses, file paths,
//         depth bounds and the texture spec.

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rgdepth/errors.hpp"
#include "rgdepth/geometry.hpp"
#include "rgdepth/scenes.hpp"
#include "rgdepth/tensors.hpp"

namespace rgdepth::io {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// PFM

namespace detail {

inline std::uint32_t byteswap32(std::uint32_t x) {
  return (x >> 24) | ((x >> 8) & 0xff00u) | ((x << 8) & 0xff0000u) | (x << 24);
}

class PfmHeaderParser {
 public:
  explicit PfmHeaderParser(const std::string& bytes) : b_(bytes) {}

  std::string token() {
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < b_.size() && !std::isspace(static_cast<unsigned char>(b_[pos_]))) ++pos_;
    if (pos_ == start) throw FormatError("PFM: truncated header", pos_);
    return b_.substr(start, pos_ - start);
  }

  long integer() {
    const std::size_t at = peek_offset();
    const std::string t = token();
    char* end = nullptr;
    const long v = std::strtol(t.c_str(), &end, 10);
    if (*end != '\0' || v <= 0) throw FormatError("PFM: expected positive integer, got '" + t + "'", at);
    return v;
  }

  double real() {
    const std::size_t at = peek_offset();
    const std::string t = token();
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (*end != '\0' || !std::isfinite(v) || v == 0.0) throw FormatError("PFM: invalid scale '" + t + "'", at);
    return v;
  }

  /// Exactly one whitespace byte separates the scale from the raster.
  std::size_t data_start() {
    if (pos_ >= b_.size() || !std::isspace(static_cast<unsigned char>(b_[pos_]))) {
      throw FormatError("PFM: missing separator before raster", pos_);
    }
    return pos_ + 1;
  }

  std::size_t peek_offset() {
    skip_space();
    return pos_;
  }

 private:
  void skip_space() {
    while (pos_ < b_.size() && std::isspace(static_cast<unsigned char>(b_[pos_]))) ++pos_;
  }

  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Serialises a 1- or 3-channel buffer as little-endian PFM. Values are
/// rounded to float32.
inline std::string encode_pfm(const ImageBuffer& img) {
  if (img.channels() != 1 && img.channels() != 3) {
    throw DimensionError("PFM holds 1 or 3 channels, got " + std::to_string(img.channels()));
  }
  std::string out = (img.channels() == 1 ? "Pf\n" : "PF\n") + std::to_string(img.width()) + " " +
                    std::to_string(img.height()) + "\n-1.0\n";
  const std::size_t header = out.size();
  out.resize(header + img.size() * 4);
  char* dst = out.data() + header;
  for (int r = img.height() - 1; r >= 0; --r) {
    for (int c = 0; c < img.width(); ++c) {
      for (int k = 0; k < img.channels(); ++k) {
        const float f = static_cast<float>(img.at(r, c, k));
        if (!std::isfinite(f)) throw DomainError("encode_pfm: value does not fit in float32");
        std::uint32_t u = std::bit_cast<std::uint32_t>(f);
        if constexpr (std::endian::native == std::endian::big) u = detail::byteswap32(u);
        std::memcpy(dst, &u, 4);
        dst += 4;
      }
    }
  }
  return out;
}

inline ImageBuffer decode_pfm(const std::string& bytes) {
  detail::PfmHeaderParser p(bytes);
  const std::string magic = p.token();
  int channels = 0;
  if (magic == "Pf") {
    channels = 1;
  } else if (magic == "PF") {
    channels = 3;
  } else {
    throw FormatError("PFM: bad magic '" + magic + "'", 0);
  }
  const long width = p.integer();
  const long height = p.integer();
  const double scale = p.real();
  const std::size_t start = p.data_start();
  if (width > (1L << 20) || height > (1L << 20)) throw FormatError("PFM: implausible dimensions", 3);
  const std::size_t need = std::size_t(width) * std::size_t(height) * std::size_t(channels) * 4;
  if (bytes.size() - start != need) {
    throw FormatError("PFM: raster has " + std::to_string(bytes.size() - start) + " bytes, expected " +
                          std::to_string(need),
                      std::min(bytes.size(), start + need));
  }
  const bool little = scale < 0.0;
  const bool swap = little != (std::endian::native == std::endian::little);
  std::vector<Real> data(std::size_t(width) * std::size_t(height) * std::size_t(channels));
  const char* src = bytes.data() + start;
  for (long r = height - 1; r >= 0; --r) {
    for (long c = 0; c < width; ++c) {
      for (int k = 0; k < channels; ++k) {
        std::uint32_t u = 0;
        std::memcpy(&u, src, 4);
        if (swap) u = detail::byteswap32(u);
        const float f = std::bit_cast<float>(u);
        if (!std::isfinite(f)) {
          throw FormatError("PFM: non-finite sample", std::size_t(src - bytes.data()));
        }
        data[(std::size_t(r) * std::size_t(width) + std::size_t(c)) * std::size_t(channels) + std::size_t(k)] = f;
        src += 4;
      }
    }
  }
  return ImageBuffer(int(height), int(width), channels, std::move(data));
}

inline void write_pfm(const fs::path& path, const ImageBuffer& img) { write_file(path, encode_pfm(img)); }
inline ImageBuffer read_pfm(const fs::path& path) { return decode_pfm(read_file(path)); }

inline void write_depth_pfm(const fs::path& path, const DepthMap& d) { write_pfm(path, d.as_image()); }
inline DepthMap read_depth_pfm(const fs::path& path, Real floor = DepthMap::kDefaultFloor) {
  return DepthMap::from_image(read_pfm(path), floor);
}

/// One single-channel PFM per channel, named `<stem>_c<k>.pfm`. Returns the
/// file names (relative to `dir`).
inline std::vector<std::string> write_feature_stack(const fs::path& dir, const std::string& stem,
                                                    const ImageBuffer& img) {
  std::vector<std::string> names;
  for (int k = 0; k < img.channels(); ++k) {
    names.push_back(stem + "_c" + std::to_string(k) + ".pfm");
    write_pfm(dir / names.back(), img.channel(k));
  }
  return names;
}

inline ImageBuffer read_feature_stack(const fs::path& dir, const std::vector<std::string>& names) {
  if (names.empty()) throw FormatError("feature stack lists no channels", 0);
  std::vector<ImageBuffer> chans;
  for (const auto& n : names) {
    chans.push_back(read_pfm(dir / n));
    if (chans.back().channels() != 1) throw FormatError("feature channel file must be single-channel: " + n, 0);
    if (!chans.back().same_shape(chans.front())) throw DimensionError("feature channel sizes differ: " + n);
  }
  const int h = chans[0].height(), w = chans[0].width(), ch = int(chans.size());
  ImageBuffer out(h, w, ch);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (int k = 0; k < ch; ++k) out.at(r, c, k) = chans[std::size_t(k)].at(r, c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNG

inline void write_png(const fs::path& path, const ImageBuffer& img) {
  if (img.channels() != 1 && img.channels() != 3) throw DimensionError("PNG holds 1 or 3 channels");
  std::vector<png_byte> pixels(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    pixels[i] = png_byte(std::lround(std::clamp(img.data()[i], 0.0, 1.0) * 255.0));
  }
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = png_uint_32(img.width());
  image.height = png_uint_32(img.height());
  image.format = img.channels() == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw IoError("write_png " + path.string() + ": " + msg);
  }
}

/// Grayscale files give one channel, everything else is converted to RGB.
inline ImageBuffer read_png(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("cannot open " + path.string());
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("PNG " + path.string() + ": " + msg, 0);
  }
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("PNG " + path.string() + ": " + msg, 0);
  }
  std::vector<Real> data(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) data[i] = Real(buf[i]) / 255.0;
  return ImageBuffer(int(image.height), int(image.width), gray ? 1 : 3, std::move(data));
}

// ---------------------------------------------------------------------------
// Scene manifest

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kManifestFormat = "rgdepth-scene";

inline json pose_to_json(const PoseSE3& p) {
  json r = json::array();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r.push_back(p.rotation()(i, j));
  }
  return {{"rotation", r},
          {"translation", {p.translation().x(), p.translation().y(), p.translation().z()}}};
}

inline PoseSE3 pose_from_json(const json& j) {
  const auto& r = j.at("rotation");
  const auto& t = j.at("translation");
  if (r.size() != 9 || t.size() != 3) throw FormatError("manifest: pose needs 9 rotation and 3 translation values", 0);
  Mat3 m;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) m(i, k) = r.at(std::size_t(i * 3 + k)).get<Real>();
  }
  return PoseSE3(m, Vec3{t[0].get<Real>(), t[1].get<Real>(), t[2].get<Real>()});
}

namespace detail {

inline json feature_set_to_json(const fs::path& dir, const std::string& stem, const FeatureSet& f) {
  json j;
  j["target"] = write_feature_stack(dir, stem + "_target", f.target);
  j["sources"] = json::array();
  for (std::size_t s = 0; s < f.sources.size(); ++s) {
    j["sources"].push_back(write_feature_stack(dir, stem + "_source" + std::to_string(s), f.sources[s]));
  }
  return j;
}

inline FeatureSet feature_set_from_json(const fs::path& dir, const json& j) {
  FeatureSet f{read_feature_stack(dir, j.at("target").get<std::vector<std::string>>()), {}};
  for (const auto& s : j.at("sources")) f.sources.push_back(read_feature_stack(dir, s.get<std::vector<std::string>>()));
  return f;
}

}  // namespace detail

/// Writes images (PFM, plus PNG previews), ground-truth depth, optional
/// feature stacks and manifest.json into `dir` (created if needed).
inline void write_bundle(const fs::path& dir, const SceneBundle& b) {
  fs::create_directories(dir);
  const SceneSpec& s = b.spec;
  json m;
  m["format"] = kManifestFormat;
  m["version"] = 1;
  m["width"] = s.width;
  m["height"] = s.height;
  m["intrinsics"] = {{"fx", s.intrinsics.fx}, {"fy", s.intrinsics.fy}, {"cx", s.intrinsics.cx}, {"cy", s.intrinsics.cy}};
  m["d_min"] = s.d_min;
  m["d_max"] = s.d_max;
  m["plane"] = {{"normal", {s.plane_normal.x(), s.plane_normal.y(), s.plane_normal.z()}}, {"offset", s.plane_offset}};
  m["texture"] = {{"seed", s.texture_seed}, {"frequency", s.texture_frequency}};

  write_pfm(dir / "target.pfm", b.target);
  write_png(dir / "target.png", b.target);
  m["target"] = {{"image", "target.pfm"}, {"preview", "target.png"}};
  write_depth_pfm(dir / "depth_gt.pfm", b.gt_depth);
  m["depth"] = "depth_gt.pfm";

  m["sources"] = json::array();
  for (std::size_t i = 0; i < b.sources.size(); ++i) {
    const std::string stem = "source_" + std::to_string(i);
    write_pfm(dir / (stem + ".pfm"), b.sources[i]);
    write_png(dir / (stem + ".png"), b.sources[i]);
    json src = pose_to_json(s.sources[i]);
    src["image"] = stem + ".pfm";
    src["preview"] = stem + ".png";
    m["sources"].push_back(src);
  }
  if (b.phi || b.feat) {
    m["features"] = json::object();
    if (b.phi) m["features"]["phi"] = detail::feature_set_to_json(dir, "phi", *b.phi);
    if (b.feat) m["features"]["feat"] = detail::feature_set_to_json(dir, "feat", *b.feat);
  }
  write_file(dir / kManifestName, m.dump(2) + "\n");
}

inline SceneBundle read_bundle(const fs::path& dir) {
  const fs::path manifest = dir / kManifestName;
  const std::string text = read_file(manifest);
  json m;
  try {
    m = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest: ") + e.what(), e.byte);
  }
  try {
    if (m.at("format").get<std::string>() != kManifestFormat) throw FormatError("manifest: unknown format tag", 0);
    SceneSpec s;
    s.width = m.at("width").get<int>();
    s.height = m.at("height").get<int>();
    const auto& k = m.at("intrinsics");
    s.intrinsics = {k.at("fx").get<Real>(), k.at("fy").get<Real>(), k.at("cx").get<Real>(), k.at("cy").get<Real>()};
    s.d_min = m.at("d_min").get<Real>();
    s.d_max = m.at("d_max").get<Real>();
    const auto& n = m.at("plane").at("normal");
    s.plane_normal = {n.at(0).get<Real>(), n.at(1).get<Real>(), n.at(2).get<Real>()};
    s.plane_offset = m.at("plane").at("offset").get<Real>();
    s.texture_seed = m.at("texture").at("seed").get<std::uint64_t>();
    s.texture_frequency = m.at("texture").at("frequency").get<Real>();

    SceneBundle b;
    b.target = read_pfm(dir / m.at("target").at("image").get<std::string>());
    b.gt_depth = read_depth_pfm(dir / m.at("depth").get<std::string>(), s.d_min);
    s.sources.clear();
    for (const auto& src : m.at("sources")) {
      s.sources.push_back(pose_from_json(src));
      b.sources.push_back(read_pfm(dir / src.at("image").get<std::string>()));
    }
    s.validate();
    for (const auto& img : b.sources) {
      if (!img.same_shape(b.target)) throw DimensionError("manifest: source image size differs from target");
    }
    if (!b.target.same_grid(s.height, s.width) || !b.gt_depth.same_grid(s.height, s.width)) {
      throw DimensionError("manifest: image sizes disagree with width/height");
    }
    if (m.contains("features")) {
      const auto& f = m.at("features");
      if (f.contains("phi")) b.phi = detail::feature_set_from_json(dir, f.at("phi"));
      if (f.contains("feat")) b.feat = detail::feature_set_from_json(dir, f.at("feat"));
    }
    b.spec = std::move(s);
    return b;
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what(), 0);
  }
}

}  // namespace rgdepth::io
