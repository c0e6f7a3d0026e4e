#include "mtdnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "mtdnet/config.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian only");

namespace mtdnet {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4))
    throw std::runtime_error("checkpoint '" + path + "': truncated file");
  return v;
}

std::uint64_t get_u64(std::istream& in, const std::string& path) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 8))
    throw std::runtime_error("checkpoint '" + path + "': truncated file");
  return v;
}

void check_spec(const Checkpoint& ckpt, const std::string& origin) {
  const auto spec = parameter_spec(ckpt.net, ckpt.variant);
  if (spec.size() != ckpt.params.size())
    throw std::runtime_error(origin + ": expected " + std::to_string(spec.size()) +
                             " parameter blobs for this config, found " +
                             std::to_string(ckpt.params.size()));
  for (size_t i = 0; i < spec.size(); ++i) {
    if (ckpt.params[i].first != spec[i].first)
      throw std::runtime_error(origin + ": parameter " + std::to_string(i) + " is '" +
                               ckpt.params[i].first + "', expected '" + spec[i].first + "'");
    if (ckpt.params[i].second.shape != spec[i].second)
      throw std::runtime_error(origin + ": parameter '" + spec[i].first + "' has shape " +
                               shape_str(ckpt.params[i].second.shape) + ", expected " +
                               shape_str(spec[i].second));
  }
}

}  // namespace

Checkpoint snapshot(const Network& net, std::uint64_t seed, std::uint32_t epoch) {
  Checkpoint ckpt;
  ckpt.net = net.cfg;
  ckpt.variant = net.variant;
  ckpt.seed = seed;
  ckpt.epoch = epoch;
  // A TrainTriplet graph instantiates the full parameter set; eval graphs may
  // hold a subset, which is not a valid thing to snapshot.
  const auto spec = parameter_spec(net.cfg, net.variant);
  for (const auto& [name, shape] : spec) {
    if (!net.graph.has_param(name))
      throw std::invalid_argument("snapshot: graph does not hold parameter '" + name +
                                  "'; snapshot from a training-mode graph");
    const Tensor& p = net.graph.param_tensor(name);
    Tensor copy(p.shape);
    copy.data = p.data;
    ckpt.params.emplace_back(name, std::move(copy));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  check_spec(ckpt, "save_checkpoint");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 8);

  KeyValueConfig kv;
  write_net_config(kv, ckpt.net);
  kv.set("net.variant", variant_name(ckpt.variant));
  const std::string header = kv.serialize();
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), header.size());
  put_u64(out, ckpt.seed);
  put_u32(out, ckpt.epoch);
  put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, tensor] : ckpt.params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), name.size());
    put_u32(out, static_cast<std::uint32_t>(tensor.shape.size()));
    for (int d : tensor.shape) put_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(tensor.data.data()), tensor.data.size() * sizeof(float));
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint '" + path.string() + "': bad magic");

  const std::uint32_t header_len = get_u32(in, path.string());
  std::string header(header_len, '\0');
  if (!in.read(header.data(), header_len))
    throw std::runtime_error("checkpoint '" + path.string() + "': truncated header");
  const KeyValueConfig kv = KeyValueConfig::parse_string(header, path.string() + "#header");

  Checkpoint ckpt;
  ckpt.net = read_net_config(kv);
  ckpt.variant = variant_from_name(kv.get_string("net.variant", "full"));
  ckpt.seed = get_u64(in, path.string());
  ckpt.epoch = get_u32(in, path.string());
  const std::uint32_t blobs = get_u32(in, path.string());
  for (std::uint32_t i = 0; i < blobs; ++i) {
    const std::uint32_t name_len = get_u32(in, path.string());
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len))
      throw std::runtime_error("checkpoint '" + path.string() + "': truncated blob name");
    const std::uint32_t ndims = get_u32(in, path.string());
    Shape shape(ndims);
    for (std::uint32_t d = 0; d < ndims; ++d) shape[d] = static_cast<int>(get_u32(in, path.string()));
    Tensor t(shape);
    if (!in.read(reinterpret_cast<char*>(t.data.data()), t.data.size() * sizeof(float)))
      throw std::runtime_error("checkpoint '" + path.string() + "': truncated data for '" + name + "'");
    ckpt.params.emplace_back(std::move(name), std::move(t));
  }
  check_spec(ckpt, "checkpoint '" + path.string() + "'");
  return ckpt;
}

void apply_checkpoint(Network& net, const Checkpoint& ckpt) {
  // Architectures must agree exactly; compare the derived parameter specs and
  // name the first difference.
  const auto want = parameter_spec(net.cfg, net.variant);
  const auto have = parameter_spec(ckpt.net, ckpt.variant);
  for (size_t i = 0; i < std::max(want.size(), have.size()); ++i) {
    if (i >= want.size() || i >= have.size() || want[i].first != have[i].first ||
        want[i].second != have[i].second) {
      const std::string name = i < want.size() ? want[i].first
                               : i < have.size() ? have[i].first
                                                 : "?";
      throw std::runtime_error("checkpoint does not match network config: first mismatch at '" +
                               name + "'");
    }
  }
  for (const auto& [name, tensor] : ckpt.params) {
    if (!net.graph.has_param(name)) continue;  // eval graphs hold a subset of the layers
    Tensor& p = net.graph.param_tensor(name);
    if (p.shape != tensor.shape)
      throw std::runtime_error("checkpoint parameter '" + name + "' has shape " +
                               shape_str(tensor.shape) + ", graph expects " + shape_str(p.shape));
    p.data = tensor.data;
  }
}

}  // namespace mtdnet
