#include "voxelinst/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"
#include "voxelinst/errors.hpp"

namespace voxelinst {

namespace fs = std::filesystem;
using nlohmann::json;

Volume3D::Volume3D(Shape3 s, int c, float fill)
    : shape(s), channels(c), data(s.voxels() * static_cast<std::size_t>(c), fill) {}

LabelVolume::LabelVolume(Shape3 s, std::uint16_t fill) : shape(s), labels(s.voxels(), fill) {}

void Dataset::validate() const {
  if (class_count < 2) throw ContractError("class_count must be >= 2");
  for (const auto& st : stacks) {
    if (st.labels && !(st.labels->shape == st.image.shape)) {
      throw ContractError("stack '" + st.name + "': label volume shape differs from image");
    }
    for (const auto& a : st.annotations) {
      if (a.object_class < 1 || a.object_class >= class_count) {
        throw ContractError("stack '" + st.name + "': annotation " + std::to_string(a.id) +
                            " has class " + std::to_string(a.object_class) + " outside [1, " +
                            std::to_string(class_count) + ")");
      }
      if (!a.box.valid()) {
        throw ContractError("stack '" + st.name + "': annotation " + std::to_string(a.id) +
                            " has a non-positive box size");
      }
      if (a.has_mask && !st.labels) {
        throw ContractError("stack '" + st.name + "': annotation " + std::to_string(a.id) +
                            " claims a mask but the stack has no label volume");
      }
    }
  }
}

BBox3D voxel_range_box(const std::array<int, 3>& lo, const std::array<int, 3>& hi) {
  return BBox3D::from_bounds({double(lo[0]), double(lo[1]), double(lo[2])},
                             {hi[0] + 1.0, hi[1] + 1.0, hi[2] + 1.0});
}

std::size_t VoxelRange::count() const {
  if (empty()) return 0;
  return static_cast<std::size_t>(hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]);
}

VoxelRange box_voxels(const BBox3D& box, const Shape3& shape) {
  VoxelRange r;
  for (int a = 0; a < 3; ++a) {
    const int lo = static_cast<int>(std::ceil(box.lo(a) - 0.5));
    const int hi = static_cast<int>(std::floor(box.hi(a) - 0.5)) + 1;
    r.lo[a] = std::clamp(lo, 0, shape[a]);
    r.hi[a] = std::clamp(hi, 0, shape[a]);
  }
  return r;
}

// --- raw formats ------------------------------------------------------------

namespace {

fs::path with_suffix(const fs::path& stem, const char* suffix) {
  return fs::path(stem.string() + suffix);
}

// Accept either a bare stem or a path carrying one of our extensions.
fs::path normalize_stem(const fs::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".f32" || ext == ".u16" || ext == ".json") return p.parent_path() / p.stem();
  return p;
}

template <typename T>
void write_le(const std::vector<T>& values, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(T)));
  } else {
    for (T v : values) {
      auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      out.write(bytes.data(), sizeof(T));
    }
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

template <typename T>
std::vector<T> read_le(const fs::path& path, std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError("cannot open payload '" + path.string() + "'");
  const auto actual = static_cast<std::size_t>(in.tellg());
  const std::size_t expected = expected_count * sizeof(T);
  if (actual != expected) {
    throw FormatError("payload '" + path.string() + "' has " + std::to_string(actual) +
                      " bytes, expected " + std::to_string(expected));
  }
  in.seekg(0);
  std::vector<T> values(expected_count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(expected));
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : values) {
      auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
      std::reverse(bytes.begin(), bytes.end());
      v = std::bit_cast<T>(bytes);
    }
  }
  return values;
}

void write_sidecar(const fs::path& path, const Shape3& shape, int channels, const char* dtype,
                   const Vec3& spacing) {
  json j;
  j["shape"] = {shape.depth, shape.height, shape.width};
  j["channels"] = channels;
  j["dtype"] = dtype;
  j["spacing"] = {spacing[0], spacing[1], spacing[2]};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

struct Sidecar {
  Shape3 shape;
  int channels = 1;
  std::string dtype;
  Vec3 spacing{1.0, 1.0, 1.0};
};

Sidecar read_sidecar(const fs::path& path) {
  if (!fs::exists(path)) throw MissingSidecarError("missing sidecar '" + path.string() + "'");
  std::ifstream in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("sidecar '" + path.string() + "' is not valid JSON: " + e.what());
  }
  Sidecar s;
  try {
    const auto& sh = j.at("shape");
    if (!sh.is_array() || sh.size() != 3) throw FormatError("shape must have 3 entries");
    s.shape = {sh[0].get<int>(), sh[1].get<int>(), sh[2].get<int>()};
    s.channels = j.value("channels", 1);
    s.dtype = j.at("dtype").get<std::string>();
    if (j.contains("spacing")) {
      const auto& sp = j["spacing"];
      s.spacing = {sp.at(0).get<double>(), sp.at(1).get<double>(), sp.at(2).get<double>()};
    }
  } catch (const json::exception& e) {
    throw FormatError("sidecar '" + path.string() + "': " + e.what());
  }
  if (s.shape.depth < 1 || s.shape.height < 1 || s.shape.width < 1 || s.channels < 1) {
    throw FormatError("sidecar '" + path.string() + "' declares a non-positive dimension");
  }
  return s;
}

}  // namespace

void save_volume(const Volume3D& v, const fs::path& stem_in) {
  const auto stem = normalize_stem(stem_in);
  if (v.data.size() != v.shape.voxels() * static_cast<std::size_t>(v.channels)) {
    throw ContractError("volume data length does not match its shape");
  }
  write_le(v.data, with_suffix(stem, ".f32"));
  write_sidecar(with_suffix(stem, ".json"), v.shape, v.channels, "f32le", v.spacing);
}

Volume3D load_volume(const fs::path& stem_in) {
  const auto stem = normalize_stem(stem_in);
  const Sidecar s = read_sidecar(with_suffix(stem, ".json"));
  if (s.dtype != "f32le") throw FormatError("expected dtype f32le, sidecar says " + s.dtype);
  Volume3D v;
  v.shape = s.shape;
  v.channels = s.channels;
  v.spacing = s.spacing;
  v.data = read_le<float>(with_suffix(stem, ".f32"), s.shape.voxels() * s.channels);
  return v;
}

void save_labels(const LabelVolume& v, const fs::path& stem_in) {
  const auto stem = normalize_stem(stem_in);
  if (v.labels.size() != v.shape.voxels()) {
    throw ContractError("label data length does not match its shape");
  }
  write_le(v.labels, with_suffix(stem, ".u16"));
  write_sidecar(with_suffix(stem, ".json"), v.shape, 1, "u16le", {1.0, 1.0, 1.0});
}

LabelVolume load_labels(const fs::path& stem_in) {
  const auto stem = normalize_stem(stem_in);
  const Sidecar s = read_sidecar(with_suffix(stem, ".json"));
  if (s.dtype != "u16le") throw FormatError("expected dtype u16le, sidecar says " + s.dtype);
  if (s.channels != 1) throw FormatError("label volumes must have one channel");
  LabelVolume v;
  v.shape = s.shape;
  v.labels = read_le<std::uint16_t>(with_suffix(stem, ".u16"), s.shape.voxels());
  return v;
}

void save_annotations(const std::vector<InstanceAnnotation>& annos, const fs::path& path) {
  json arr = json::array();
  for (const auto& a : annos) {
    json j;
    j["id"] = a.id;
    j["class"] = a.object_class;
    j["box"] = {{"cz", a.box.center[0]}, {"cy", a.box.center[1]}, {"cx", a.box.center[2]},
                {"d", a.box.size[0]},    {"h", a.box.size[1]},    {"w", a.box.size[2]}};
    j["has_mask"] = a.has_mask;
    if (a.box.score != 0.0) j["score"] = a.box.score;
    arr.push_back(std::move(j));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << arr.dump(2) << '\n';
}

std::vector<InstanceAnnotation> load_annotations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open annotations '" + path.string() + "'");
  std::vector<InstanceAnnotation> annos;
  try {
    const json arr = json::parse(in);
    if (!arr.is_array()) throw FormatError("annotations file must hold a JSON array");
    for (const auto& j : arr) {
      InstanceAnnotation a;
      a.id = j.at("id").get<int>();
      a.object_class = j.at("class").get<int>();
      const auto& b = j.at("box");
      a.box.center = {b.at("cz").get<double>(), b.at("cy").get<double>(), b.at("cx").get<double>()};
      a.box.size = {b.at("d").get<double>(), b.at("h").get<double>(), b.at("w").get<double>()};
      a.box.object_class = a.object_class;
      a.box.score = j.value("score", 0.0);
      a.has_mask = j.at("has_mask").get<bool>();
      if (a.id < 1) throw FormatError("annotation ids must be positive");
      if (!a.box.valid()) throw FormatError("annotation " + std::to_string(a.id) + " has an invalid box");
      annos.push_back(a);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("annotations '" + path.string() + "': " + e.what());
  }
  return annos;
}

// --- synthesis --------------------------------------------------------------

void SynthConfig::validate() const {
  if (shape.depth < 1 || shape.height < 1 || shape.width < 1) {
    throw ContractError("synth shape components must be >= 1");
  }
  if (min_count < 0 || max_count < min_count) throw ContractError("synth count range is invalid");
  for (int a = 0; a < 3; ++a) {
    if (!(radius_min[a] > 0.0) || radius_max[a] < radius_min[a]) {
      throw ContractError("synth radius range is invalid");
    }
  }
  if (!(min_separation > 0.0)) throw ContractError("synth min_separation must be positive");
  if (noise_sigma < 0.0) throw ContractError("synth noise_sigma must be non-negative");
  if (class_count < 2) throw ContractError("synth class_count must be >= 2");
  if (max_count > 65535) throw ContractError("synth max_count exceeds the u16 label range");
}

SynthSample synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const int count = std::uniform_int_distribution<int>(cfg.min_count, cfg.max_count)(rng);

  struct Placed {
    Vec3 center;
    Vec3 radius;
    int object_class;
  };
  std::vector<Placed> placed;
  const std::size_t max_attempts = 10 * static_cast<std::size_t>(count);
  std::size_t attempts = 0;
  while (static_cast<int>(placed.size()) < count) {
    Vec3 radius;
    for (int a = 0; a < 3; ++a) {
      radius[a] = std::uniform_real_distribution<double>(cfg.radius_min[a], cfg.radius_max[a])(rng);
    }
    const int cls = std::uniform_int_distribution<int>(1, cfg.class_count - 1)(rng);
    if (placed.size() < cfg.fixed_centers.size()) {
      placed.push_back({cfg.fixed_centers[placed.size()], radius, cls});
      continue;
    }
    if (attempts++ >= max_attempts) {
      throw GenerationError("placed " + std::to_string(placed.size()) + " of " +
                                std::to_string(count) + " instances within " +
                                std::to_string(max_attempts) + " attempts",
                            placed.size());
    }
    // Centers sit on voxel centers, keeping the ellipsoid inside the stack where possible.
    Vec3 center;
    for (int a = 0; a < 3; ++a) {
      const int margin = std::min(static_cast<int>(std::ceil(radius[a])), (cfg.shape[a] - 1) / 2);
      center[a] = std::uniform_int_distribution<int>(margin, cfg.shape[a] - 1 - margin)(rng) + 0.5;
    }
    bool ok = true;
    for (const auto& p : placed) {
      double d2 = 0.0;
      for (int a = 0; a < 3; ++a) d2 += (p.center[a] - center[a]) * (p.center[a] - center[a]);
      if (d2 < cfg.min_separation * cfg.min_separation) {
        ok = false;
        break;
      }
    }
    if (ok) placed.push_back({center, radius, cls});
  }

  SynthSample out;
  out.labels = LabelVolume(cfg.shape);
  std::vector<double> best_dist(cfg.shape.voxels(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < placed.size(); ++i) {
    const auto& p = placed[i];
    const auto id = static_cast<std::uint16_t>(i + 1);
    std::array<int, 3> lo, hi;
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::max(0, static_cast<int>(std::floor(p.center[a] - p.radius[a])) - 1);
      hi[a] = std::min(cfg.shape[a] - 1, static_cast<int>(std::ceil(p.center[a] + p.radius[a])) + 1);
    }
    for (int z = lo[0]; z <= hi[0]; ++z) {
      for (int y = lo[1]; y <= hi[1]; ++y) {
        for (int x = lo[2]; x <= hi[2]; ++x) {
          const Vec3 d{z + 0.5 - p.center[0], y + 0.5 - p.center[1], x + 0.5 - p.center[2]};
          double q = 0.0;
          for (int a = 0; a < 3; ++a) q += (d[a] / p.radius[a]) * (d[a] / p.radius[a]);
          if (q > 1.0) continue;
          const double dist = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
          const auto idx = out.labels.index(z, y, x);
          // Strict comparison: on ties the earlier (lower) id keeps the voxel.
          if (dist < best_dist[idx]) {
            best_dist[idx] = dist;
            out.labels.labels[idx] = id;
          }
        }
      }
    }
  }

  // Tight boxes from the resolved rasterization.
  std::vector<std::array<int, 3>> lo(placed.size(), {INT32_MAX, INT32_MAX, INT32_MAX});
  std::vector<std::array<int, 3>> hi(placed.size(), {-1, -1, -1});
  for (int z = 0; z < cfg.shape.depth; ++z) {
    for (int y = 0; y < cfg.shape.height; ++y) {
      for (int x = 0; x < cfg.shape.width; ++x) {
        const int id = out.labels.at(z, y, x);
        if (id == 0) continue;
        const std::array<int, 3> v{z, y, x};
        for (int a = 0; a < 3; ++a) {
          lo[id - 1][a] = std::min(lo[id - 1][a], v[a]);
          hi[id - 1][a] = std::max(hi[id - 1][a], v[a]);
        }
      }
    }
  }
  for (std::size_t i = 0; i < placed.size(); ++i) {
    if (hi[i][0] < 0) {
      throw GenerationError("instance " + std::to_string(i + 1) + " rasterized to no voxels", i);
    }
    InstanceAnnotation a;
    a.id = static_cast<int>(i + 1);
    a.object_class = placed[i].object_class;
    a.box = voxel_range_box(lo[i], hi[i]);
    a.box.object_class = a.object_class;
    a.has_mask = true;
    out.annotations.push_back(a);
  }

  out.image = Volume3D(cfg.shape, 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double contrast = cfg.foreground_mean - cfg.background_mean;
  for (std::size_t i = 0; i < out.image.data.size(); ++i) {
    const double fg = out.labels.labels[i] != 0 ? 1.0 : 0.0;
    const double n = cfg.noise_sigma > 0.0 ? cfg.noise_sigma * noise(rng) : 0.0;
    out.image.data[i] = static_cast<float>(cfg.background_mean + contrast * fg + n);
  }
  return out;
}

std::vector<InstanceAnnotation> subsample_masks(std::vector<InstanceAnnotation> annos,
                                                double fraction, std::uint64_t seed) {
  fraction = std::clamp(fraction, 0.0, 1.0);
  const std::size_t n = annos.size();
  const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> chosen(n, false);
  for (std::size_t i = 0; i < keep; ++i) chosen[order[i]] = true;
  for (std::size_t i = 0; i < n; ++i) annos[i].has_mask = annos[i].has_mask && chosen[i];
  return annos;
}

}  // namespace voxelinst
