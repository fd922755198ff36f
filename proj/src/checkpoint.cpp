#include "guidefree/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>

namespace guidefree {

namespace {

constexpr char kMagic[8] = {'G', 'F', 'D', 'E', 'N', 'O', 'I', 'S'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint64_t take(int n) {
    if (pos_ + static_cast<std::size_t>(n) > bytes_.size()) throw CheckpointError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  std::uint64_t u64() { return take(8); }
  double f64() { return std::bit_cast<double>(take(8)); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  const DenoiserConfig& cfg = ckpt.model.config();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(cfg.data_dim));
  put_u32(out, static_cast<std::uint32_t>(cfg.hidden_layers));
  put_u32(out, static_cast<std::uint32_t>(cfg.width));
  put_u32(out, static_cast<std::uint32_t>(cfg.num_classes));
  put_u32(out, static_cast<std::uint32_t>(cfg.embed_dim));
  put_u64(out, ckpt.iteration);
  put_u64(out, ckpt.seed);
  const auto params = ckpt.model.params();
  put_u64(out, params.size());
  out.reserve(out.size() + 8 * params.size());
  for (double v : params) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw CheckpointError("not a denoiser checkpoint (bad magic)");
  }
  Reader r(bytes);
  r.take(4);
  r.take(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  DenoiserConfig cfg;
  cfg.data_dim = static_cast<int>(r.u32());
  cfg.hidden_layers = static_cast<int>(r.u32());
  cfg.width = static_cast<int>(r.u32());
  cfg.num_classes = static_cast<int>(r.u32());
  cfg.embed_dim = static_cast<int>(r.u32());
  Checkpoint ckpt{DenoiserModel::zeros(cfg), 0, 0};
  ckpt.iteration = r.u64();
  ckpt.seed = r.u64();
  const std::uint64_t count = r.u64();
  if (count != ckpt.model.parameter_count()) {
    throw CheckpointError("checkpoint parameter count does not match its header");
  }
  auto params = ckpt.model.params();
  for (std::uint64_t i = 0; i < count; ++i) params[i] = r.f64();
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint parameters");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("short write to checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace guidefree
