#include "ridgealign/weights.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include "json.hpp"

namespace ridgealign {

namespace {

constexpr char kMagic[4] = {'R', 'W', 'A', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void add_conv(std::vector<TensorSpec>& out, const std::string& name, Index k, Index cin, Index cout) {
  out.push_back({name, {k, k, cin, cout}});
}

void add_norm(std::vector<TensorSpec>& out, const std::string& prefix, Index c) {
  out.push_back({prefix + ".g", {c}});
  out.push_back({prefix + ".b", {c}});
}

void add_attention(std::vector<TensorSpec>& out, const std::string& prefix, Index c) {
  for (const char* p : {".q", ".k", ".v", ".o"}) out.push_back({prefix + p, {c, c}});
}

void add_stage(std::vector<TensorSpec>& out, const std::string& prefix, Index cin, Index cout, bool project) {
  add_conv(out, prefix + ".conv1.w", 3, cin, cout);
  add_norm(out, prefix + ".ln1", cout);
  add_conv(out, prefix + ".conv2.w", 3, cout, cout);
  add_norm(out, prefix + ".ln2", cout);
  if (project) add_conv(out, prefix + ".proj.w", 1, cin, cout);
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"c_coarse", c.c_coarse},       {"c_fine", c.c_fine},           {"coarse_blocks", c.coarse_blocks},
          {"fine_rounds", c.fine_rounds}, {"block_side", c.block_side},   {"sample_side", c.sample_side},
          {"span_sigmas", c.span_sigmas}, {"heads", c.heads},             {"theta", c.theta},
          {"window", c.window},           {"train_window", c.train_window}, {"lambda", c.lambda},
          {"alpha", c.alpha}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.c_coarse = j.at("c_coarse").get<int>();
  c.c_fine = j.at("c_fine").get<int>();
  c.coarse_blocks = j.at("coarse_blocks").get<int>();
  c.fine_rounds = j.at("fine_rounds").get<int>();
  c.block_side = j.at("block_side").get<int>();
  c.sample_side = j.at("sample_side").get<int>();
  c.span_sigmas = j.at("span_sigmas").get<double>();
  c.heads = j.at("heads").get<int>();
  c.theta = j.at("theta").get<double>();
  c.window = j.at("window").get<int>();
  c.train_window = j.at("train_window").get<int>();
  c.lambda = j.at("lambda").get<double>();
  c.alpha = j.at("alpha").get<double>();
  return c;
}

std::string shape_string(const std::vector<Index>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

}  // namespace

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.c_coarse = 8;
  c.c_fine = 8;
  c.coarse_blocks = 2;
  c.fine_rounds = 1;
  c.block_side = 2;
  c.sample_side = 4;
  c.span_sigmas = 3;
  c.heads = 2;
  c.window = 5;
  c.train_window = 5;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (c_coarse <= 0 || c_fine <= 0) fail("channel counts must be positive");
  if (c_coarse % 2 != 0) fail("c_coarse must be even for the positional encoding");
  if (heads <= 0 || c_coarse % heads != 0) fail("heads must divide c_coarse");
  if (4 * heads > c_coarse) fail("flow head needs 4*heads <= c_coarse channels");
  if (coarse_blocks < 0 || fine_rounds < 0) fail("layer counts must be non-negative");
  if (block_side != 1 && block_side != 2 && block_side != 4) fail("block_side (S1) must be 1, 2 or 4");
  if (sample_side < 1) fail("sample_side (S2) must be >= 1");
  if (!(span_sigmas > 0)) fail("span_sigmas (r) must be > 0");
  if (!(theta > 0 && theta < 1)) fail("theta must lie in (0,1)");
  if (window < 3 || window % 2 == 0) fail("window must be odd and >= 3");
  if (train_window < 3 || train_window % 2 == 0) fail("train_window must be odd and >= 3");
  if (!(lambda >= 0)) fail("lambda must be >= 0");
  if (!(alpha >= 0)) fail("alpha must be >= 0");
}

std::vector<TensorSpec> required_tensors(const ModelConfig& config) {
  const Index cf = config.c_fine, cc = config.c_coarse;
  std::vector<TensorSpec> out;
  add_conv(out, "backbone.stem.w", 3, 1, cf);
  add_norm(out, "backbone.stem.ln", cf);
  add_stage(out, "backbone.s1", cf, cf, false);
  add_stage(out, "backbone.s2", cf, 2 * cf, true);
  add_stage(out, "backbone.s3", 2 * cf, cc, true);
  add_conv(out, "fpn.out8.w", 1, cc, cc);
  out.push_back({"fpn.out8.b", {cc}});
  add_conv(out, "fpn.lat4.w", 1, 2 * cf, cc);
  add_norm(out, "fpn.ln4", cc);
  add_conv(out, "fpn.smooth4.w", 3, cc, cf);
  add_conv(out, "fpn.lat2.w", 1, cf, cf);
  add_norm(out, "fpn.ln2", cf);
  add_conv(out, "fpn.smooth2.w", 3, cf, cf);
  out.push_back({"fpn.smooth2.b", {cf}});

  add_attention(out, "init", cc);
  for (int i = 0; i < config.coarse_blocks; ++i) {
    const std::string p = "gla" + std::to_string(i);
    out.push_back({p + ".flow.w", {4 * static_cast<Index>(config.heads), 4}});
    out.push_back({p + ".flow.b", {4}});
    add_attention(out, p + ".global", cc);
    add_attention(out, p + ".local16", cc);
    add_attention(out, p + ".local8", cc);
    add_norm(out, p + ".ffn.ln", 4 * cc);
    out.push_back({p + ".ffn.w1", {4 * cc, 2 * cc}});
    out.push_back({p + ".ffn.w2", {2 * cc, cc}});
  }
  out.push_back({"match.tau", {1}});
  for (int i = 0; i < config.fine_rounds; ++i) {
    const std::string p = "fine" + std::to_string(i);
    add_norm(out, p + ".self.ln", cf);
    add_attention(out, p + ".self", cf);
    add_norm(out, p + ".cross.ln", cf);
    add_attention(out, p + ".cross", cf);
  }
  return out;
}

WeightArchive WeightArchive::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  WeightArchive archive(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const TensorSpec& spec : required_tensors(config)) {
    Tensor<double> t(spec.shape);
    const std::string& n = spec.name;
    auto ends_with = [&](const char* suffix) {
      const std::size_t len = std::strlen(suffix);
      return n.size() >= len && n.compare(n.size() - len, len, suffix) == 0;
    };
    if (ends_with(".g")) {
      t.data.setOnes();
    } else if (ends_with(".b")) {
      t.data.setZero();
    } else if (n == "match.tau") {
      t.data(0) = 1.0 / std::sqrt(static_cast<double>(config.c_coarse));
    } else {
      // Fan-in scaled normal; output-side projections start smaller so the
      // residual paths dominate at initialization.
      const double fan_in = static_cast<double>(t.matrix_rows());
      double stddev = 1.0 / std::sqrt(fan_in);
      if (ends_with(".o") || ends_with(".w2")) stddev *= 0.5;
      if (ends_with(".flow.w")) stddev *= 0.1;
      for (Index i = 0; i < t.size(); ++i) t.data(i) = stddev * normal(rng);
    }
    archive.set(spec.name, std::move(t));
  }
  archive.round_to_storage();
  return archive;
}

const Tensor<double>& WeightArchive::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ArchiveError("weight archive is missing tensor '" + name + "'");
  return it->second;
}

Tensor<double>& WeightArchive::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ArchiveError("weight archive is missing tensor '" + name + "'");
  return it->second;
}

void WeightArchive::set(const std::string& name, Tensor<double> tensor) { tensors_[name] = std::move(tensor); }

void WeightArchive::validate() const {
  config_.validate();
  for (const TensorSpec& spec : required_tensors(config_)) {
    const Tensor<double>& t = at(spec.name);
    if (t.shape != spec.shape) {
      throw ArchiveError("tensor '" + spec.name + "' has shape " + shape_string(t.shape) + ", expected " +
                         shape_string(spec.shape));
    }
    if (!t.data.allFinite()) throw ArchiveError("tensor '" + spec.name + "' holds non-finite values");
  }
}

void WeightArchive::round_to_storage() {
  for (auto& [name, t] : tensors_) t.data = t.data.cast<float>().cast<double>();
}

std::vector<std::uint8_t> WeightArchive::serialize() const {
  // Descriptor order is the architecture's order, then any extra tensors by name.
  std::vector<std::string> order;
  for (const TensorSpec& s : required_tensors(config_))
    if (contains(s.name)) order.push_back(s.name);
  for (const auto& [name, t] : tensors_)
    if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);

  nlohmann::json manifest = config_to_json(config_);
  manifest["tensors"] = nlohmann::json::array();
  for (const std::string& name : order) {
    manifest["tensors"].push_back({{"name", name}, {"shape", tensors_.at(name).shape}});
  }
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const std::string& name : order) {
    const Tensor<double>& t = tensors_.at(name);
    for (Index i = 0; i < t.size(); ++i) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(t.data(i))));
  }
  return out;
}

WeightArchive WeightArchive::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ArchiveError("not an RWA1 weight archive (bad magic)");
  }
  const std::uint32_t len = get_u32(bytes.data() + 4);
  if (bytes.size() < 8ull + len) throw ArchiveError("truncated RWA1 manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + len);
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(std::string("malformed RWA1 manifest: ") + e.what());
  }
  WeightArchive archive;
  try {
    archive.config_ = config_from_json(manifest);
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(std::string("RWA1 manifest lacks hyperparameters: ") + e.what());
  }
  std::size_t at = 8ull + len;
  for (const auto& desc : manifest.at("tensors")) {
    const std::string name = desc.at("name").get<std::string>();
    const auto shape = desc.at("shape").get<std::vector<Index>>();
    Tensor<double> t(shape);
    const std::size_t need = static_cast<std::size_t>(t.size()) * 4;
    if (bytes.size() < at + need) throw ArchiveError("truncated payload for tensor '" + name + "'");
    for (Index i = 0; i < t.size(); ++i) {
      t.data(i) = static_cast<double>(std::bit_cast<float>(get_u32(bytes.data() + at + 4 * i)));
    }
    at += need;
    archive.tensors_[name] = std::move(t);
  }
  if (at != bytes.size()) throw ArchiveError("trailing bytes after RWA1 payload");
  return archive;
}

void WeightArchive::write(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

WeightArchive WeightArchive::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace ridgealign
