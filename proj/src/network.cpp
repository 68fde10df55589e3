#include "voxelinst/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"
#include "voxelinst/errors.hpp"

namespace voxelinst {

namespace fs = std::filesystem;
using nlohmann::json;

void NetworkConfig::validate() const {
  if (in_channels < 1) throw ContractError("in_channels must be >= 1");
  for (int w : widths) {
    if (w < 1) throw ContractError("backbone widths must be >= 1");
  }
  if (blocks_per_stage < 0) throw ContractError("blocks_per_stage must be >= 0");
  if (class_count < 2) throw ContractError("class_count must be >= 2");
  if (anchor_templates.empty()) throw ContractError("at least one anchor template is required");
  for (const auto& t : anchor_templates) {
    if (!(t[0] > 0 && t[1] > 0 && t[2] > 0)) throw ContractError("anchor template sizes must be positive");
  }
  if (roi_size < 1) throw ContractError("roi_size must be >= 1");
  if (mask_hidden < 1) throw ContractError("mask_hidden must be >= 1");
}

namespace {

std::string block_prefix(int stage, int block) {
  return "stage" + std::to_string(stage) + ".block" + std::to_string(block);
}

}  // namespace

Model::Model(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.init_seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto conv = [&](const std::string& name, int cout, int cin, int k, double gain) {
    Parameter w{name + ".w", Tensor({cout, cin, k, k, k})};
    const double std = gain * std::sqrt(2.0 / (cin * k * k * k));
    for (auto& v : w.value.values()) v = std * normal(rng);
    params_.push_back(std::move(w));
    params_.push_back(Parameter{name + ".b", Tensor({cout})});
  };
  auto upconv = [&](const std::string& name, int cin, int cout, int k) {
    Parameter w{name + ".w", Tensor({cin, cout, k, k, k})};
    const double std = std::sqrt(2.0 / cin);
    for (auto& v : w.value.values()) v = std * normal(rng);
    params_.push_back(std::move(w));
    params_.push_back(Parameter{name + ".b", Tensor({cout})});
  };
  auto norm = [&](const std::string& name, int channels) {
    params_.push_back(Parameter{name + ".gamma", Tensor({channels}, 1.0)});
    params_.push_back(Parameter{name + ".beta", Tensor({channels})});
  };

  const auto& w = cfg_.widths;
  conv("stem", w[0], cfg_.in_channels, 3, 1.0);
  for (int s = 0; s < 3; ++s) {
    if (s > 0) conv("down" + std::to_string(s), w[s], w[s - 1], 3, 1.0);
    for (int b = 0; b < cfg_.blocks_per_stage; ++b) {
      const auto p = block_prefix(s, b);
      norm(p + ".norm1", w[s]);
      conv(p + ".conv1", w[s], w[s], 3, 1.0);
      norm(p + ".norm2", w[s]);
      conv(p + ".conv2", w[s], w[s], 3, 0.5);
    }
  }
  const int c = cfg_.class_count;
  const int r = cfg_.anchors_per_cell();
  conv("head.cls", c * r, w[2], 3, 0.1);
  conv("head.reg", 6 * r, w[2], 3, 0.1);
  // Start with a low object prior so early training is not swamped by false positives.
  for (auto& p : params_) {
    if (p.name == "head.cls.b") {
      for (int t = 0; t < r; ++t) {
        for (int k = 1; k < c; ++k) p.value[static_cast<std::size_t>(t * c + k)] = -std::log(99.0 * (c - 1));
      }
    }
  }
  upconv("mask.up1", cfg_.aligned_channels(), cfg_.mask_hidden, 2);
  upconv("mask.up2", cfg_.mask_hidden, 1, 2);
}

const Parameter& Model::param(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ContractError("no parameter named '" + name + "'");
}

Parameter& Model::param(const std::string& name) {
  return const_cast<Parameter&>(static_cast<const Model&>(*this).param(name));
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

bool Model::is_mask_parameter(const Parameter& p) { return p.name.rfind("mask.", 0) == 0; }

RegressionTarget DetectionOutput::offsets_of(std::size_t anchor) const {
  RegressionTarget t{};
  std::copy_n(box_offsets.begin() + static_cast<std::ptrdiff_t>(anchor * 6), 6, t.begin());
  return t;
}

Graph::Node voxres_block(Graph& g, Graph::Node x, const Model& model, const std::string& prefix) {
  auto h = g.instance_norm(x, model.param(prefix + ".norm1.gamma"), model.param(prefix + ".norm1.beta"));
  h = g.relu(h);
  h = g.conv3d(h, model.param(prefix + ".conv1.w"), model.param(prefix + ".conv1.b"), 1, 1);
  h = g.instance_norm(h, model.param(prefix + ".norm2.gamma"), model.param(prefix + ".norm2.beta"));
  h = g.relu(h);
  h = g.conv3d(h, model.param(prefix + ".conv2.w"), model.param(prefix + ".conv2.b"), 1, 1);
  return g.add(x, h);
}

Tensor pad_to_multiple(const Tensor& t, int multiple) {
  if (t.rank() != 4) throw ContractError("pad_to_multiple expects (C, D, H, W)");
  std::array<int, 3> padded{};
  for (int a = 0; a < 3; ++a) {
    const int d = t.dim(static_cast<std::size_t>(a) + 1);
    padded[a] = (d + multiple - 1) / multiple * multiple;
  }
  if (padded[0] == t.dim(1) && padded[1] == t.dim(2) && padded[2] == t.dim(3)) return t;
  Tensor out({t.dim(0), padded[0], padded[1], padded[2]});
  for (int c = 0; c < t.dim(0); ++c) {
    for (int z = 0; z < t.dim(1); ++z) {
      for (int y = 0; y < t.dim(2); ++y) {
        const double* src = t.data() + ((static_cast<std::size_t>(c) * t.dim(1) + z) * t.dim(2) + y) * t.dim(3);
        double* dst = out.data() + ((static_cast<std::size_t>(c) * padded[0] + z) * padded[1] + y) * padded[2];
        std::copy(src, src + t.dim(3), dst);
      }
    }
  }
  return out;
}

Tensor volume_to_tensor(const Volume3D& v) {
  Tensor t({v.channels, v.shape.depth, v.shape.height, v.shape.width});
  const std::size_t slab = v.shape.voxels();
  for (std::size_t i = 0; i < slab; ++i) {
    for (int c = 0; c < v.channels; ++c) {
      t[static_cast<std::size_t>(c) * slab + i] = v.data[i * static_cast<std::size_t>(v.channels) + c];
    }
  }
  return t;
}

DetectNodes forward_detect(Graph& g, const Model& model, const Tensor& input) {
  const auto& cfg = model.config();
  if (input.rank() != 4 || input.dim(0) != cfg.in_channels) {
    throw ContractError("detector input must be (" + std::to_string(cfg.in_channels) +
                        ", D, H, W), got " + Tensor::shape_string(input.shape()));
  }
  for (int a = 1; a <= 3; ++a) {
    if (input.dim(static_cast<std::size_t>(a)) % NetworkConfig::kTotalStride != 0) {
      throw ContractError("detector input must be padded to a multiple of the total stride");
    }
  }
  DetectNodes out;
  out.input = g.input(input);
  auto h = g.conv3d(out.input, model.param("stem.w"), model.param("stem.b"), 1, 1);
  for (int s = 0; s < 3; ++s) {
    if (s > 0) {
      const auto name = "down" + std::to_string(s);
      h = g.conv3d(h, model.param(name + ".w"), model.param(name + ".b"), 2, 1);
    }
    for (int b = 0; b < cfg.blocks_per_stage; ++b) h = voxres_block(g, h, model, block_prefix(s, b));
    if (s == 1) out.tap_stride2 = h;
  }
  out.tap_stride4 = h;
  const auto logits = g.conv3d(h, model.param("head.cls.w"), model.param("head.cls.b"), 1, 1);
  out.class_probs = g.group_softmax(logits, cfg.class_count);
  out.box_offsets = g.conv3d(h, model.param("head.reg.w"), model.param("head.reg.b"), 1, 1);
  const auto& v = g.value(out.tap_stride4);
  out.grid = GridShape{v.dim(1), v.dim(2), v.dim(3)};
  return out;
}

DetectionOutput to_detection_output(const Graph& g, const DetectNodes& nodes, const NetworkConfig& cfg) {
  DetectionOutput out;
  out.grid = nodes.grid;
  out.classes = cfg.class_count;
  out.anchors_per_cell = cfg.anchors_per_cell();
  const std::size_t cells = nodes.grid.cells();
  const auto to_last = [cells](const Tensor& t) {
    const std::size_t channels = static_cast<std::size_t>(t.dim(0));
    std::vector<double> v(t.size());
    for (std::size_t ch = 0; ch < channels; ++ch) {
      for (std::size_t cell = 0; cell < cells; ++cell) v[cell * channels + ch] = t[ch * cells + cell];
    }
    return v;
  };
  out.class_scores = to_last(g.value(nodes.class_probs));
  out.box_offsets = to_last(g.value(nodes.box_offsets));
  return out;
}

DetectionOutput forward_detect(const Model& model, const Volume3D& stack) {
  Graph g;
  const auto nodes = forward_detect(g, model, pad_to_multiple(volume_to_tensor(stack), NetworkConfig::kTotalStride));
  return to_detection_output(g, nodes, model.config());
}

Tensor channel_last_to_major(std::span<const double> values, int channels, const GridShape& grid) {
  const std::size_t cells = grid.cells();
  const auto ch = static_cast<std::size_t>(channels);
  if (values.size() != cells * ch) throw ContractError("channel_last_to_major: size mismatch");
  Tensor t({channels, grid.m, grid.n, grid.k});
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t cell = 0; cell < cells; ++cell) t[c * cells + cell] = values[cell * ch + c];
  }
  return t;
}

Graph::Node forward_mask(Graph& g, const Model& model, Graph::Node aligned) {
  auto h = g.conv_transpose3d(aligned, model.param("mask.up1.w"), model.param("mask.up1.b"), 2);
  h = g.relu(h);
  h = g.conv_transpose3d(h, model.param("mask.up2.w"), model.param("mask.up2.b"), 2);
  return g.sigmoid(h);
}

// --- checkpoints --------------------------------------------------------------

namespace {

json config_to_json(const NetworkConfig& cfg) {
  json templates = json::array();
  for (const auto& t : cfg.anchor_templates) templates.push_back({t[0], t[1], t[2]});
  return json{{"in_channels", cfg.in_channels},
              {"widths", {cfg.widths[0], cfg.widths[1], cfg.widths[2]}},
              {"blocks_per_stage", cfg.blocks_per_stage},
              {"class_count", cfg.class_count},
              {"anchor_templates", templates},
              {"roi_size", cfg.roi_size},
              {"mask_hidden", cfg.mask_hidden},
              {"init_seed", cfg.init_seed}};
}

NetworkConfig config_from_json(const json& j) {
  NetworkConfig cfg;
  cfg.in_channels = j.at("in_channels").get<int>();
  const auto& w = j.at("widths");
  cfg.widths = {w.at(0).get<int>(), w.at(1).get<int>(), w.at(2).get<int>()};
  cfg.blocks_per_stage = j.at("blocks_per_stage").get<int>();
  cfg.class_count = j.at("class_count").get<int>();
  cfg.anchor_templates.clear();
  for (const auto& t : j.at("anchor_templates")) {
    cfg.anchor_templates.push_back({t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()});
  }
  cfg.roi_size = j.at("roi_size").get<int>();
  cfg.mask_hidden = j.at("mask_hidden").get<int>();
  cfg.init_seed = j.at("init_seed").get<std::uint64_t>();
  return cfg;
}

fs::path normalize_stem(const fs::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".f32" || ext == ".json") return p.parent_path() / p.stem();
  return p;
}

}  // namespace

void save_checkpoint(const Model& model, const fs::path& stem_in) {
  const auto stem = normalize_stem(stem_in);
  json manifest;
  manifest["format"] = "voxelinst-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "f32le";
  manifest["architecture"] = config_to_json(model.config());
  json params = json::array();
  std::vector<float> payload;
  payload.reserve(model.parameter_count());
  for (const auto& p : model.parameters()) {
    params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", payload.size()}});
    for (double v : p.value.values()) payload.push_back(static_cast<float>(v));
  }
  manifest["parameters"] = params;
  manifest["count"] = payload.size();
  {
    std::ofstream out(fs::path(stem.string() + ".json"));
    if (!out) throw std::runtime_error("cannot write checkpoint manifest for '" + stem.string() + "'");
    out << manifest.dump(2) << '\n';
  }
  std::ofstream out(fs::path(stem.string() + ".f32"), std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint payload for '" + stem.string() + "'");
  for (float f : payload) {
    auto bytes = std::bit_cast<std::array<char, 4>>(f);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), 4);
  }
}

Model load_checkpoint(const fs::path& stem_in) {
  const auto stem = normalize_stem(stem_in);
  const fs::path manifest_path(stem.string() + ".json");
  if (!fs::exists(manifest_path)) throw MissingSidecarError("missing checkpoint manifest '" + manifest_path.string() + "'");
  json manifest;
  try {
    std::ifstream in(manifest_path);
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("checkpoint manifest '" + manifest_path.string() + "': " + e.what());
  }
  Model model = [&] {
    try {
      return Model(config_from_json(manifest.at("architecture")));
    } catch (const json::exception& e) {
      throw FormatError(std::string("checkpoint architecture: ") + e.what());
    }
  }();
  const std::size_t count = manifest.at("count").get<std::size_t>();
  const fs::path payload_path(stem.string() + ".f32");
  std::ifstream in(payload_path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError("cannot open checkpoint payload '" + payload_path.string() + "'");
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != count * 4) {
    throw FormatError("checkpoint payload has " + std::to_string(bytes) + " bytes, expected " +
                      std::to_string(count * 4));
  }
  in.seekg(0);
  std::vector<float> payload(count);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(bytes));
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& f : payload) {
      auto b = std::bit_cast<std::array<char, 4>>(f);
      std::reverse(b.begin(), b.end());
      f = std::bit_cast<float>(b);
    }
  }
  const auto& entries = manifest.at("parameters");
  if (entries.size() != model.parameters().size()) throw FormatError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& p = model.parameters()[i];
    const auto& e = entries[i];
    if (e.at("name").get<std::string>() != p.name ||
        e.at("shape").get<std::vector<int>>() != p.value.shape()) {
      throw FormatError("checkpoint entry " + std::to_string(i) + " does not match parameter '" + p.name + "'");
    }
    const auto offset = e.at("offset").get<std::size_t>();
    if (offset + p.value.size() > count) throw FormatError("checkpoint entry '" + p.name + "' overruns payload");
    for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] = payload[offset + k];
  }
  return model;
}

// --- gradient verification ------------------------------------------------------

GradCheckResult grad_check(std::span<Parameter* const> params, const std::function<double()>& loss,
                           const std::function<std::vector<Tensor>()>& analytic, double epsilon,
                           std::size_t samples, std::uint64_t seed, double denom_floor) {
  const auto grads = analytic();
  if (grads.size() != params.size()) throw ContractError("grad_check: gradient list size mismatch");
  std::vector<std::pair<std::size_t, std::size_t>> entries;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t k = 0; k < params[i]->value.size(); ++k) entries.emplace_back(i, k);
  }
  if (entries.size() > samples) {
    std::mt19937_64 rng(seed);
    std::shuffle(entries.begin(), entries.end(), rng);
    entries.resize(samples);
  }
  GradCheckResult result;
  for (const auto& [pi, k] : entries) {
    double& v = params[pi]->value[k];
    const double orig = v;
    v = orig + epsilon;
    const double up = loss();
    v = orig - epsilon;
    const double down = loss();
    v = orig;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = grads[pi][k];
    const double diff = std::abs(a - numeric);
    const double denom = std::max({std::abs(a), std::abs(numeric), denom_floor});
    result.max_absolute = std::max(result.max_absolute, diff);
    result.max_relative = std::max(result.max_relative, diff / denom);
    ++result.checked;
  }
  return result;
}

}  // namespace voxelinst
