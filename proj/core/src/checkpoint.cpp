#include "splatnorm/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace splatnorm {

namespace {

constexpr char kMagic[4] = {'S', 'N', 'G', 'D'};
constexpr uint64_t kFnvPrime = 1099511628211ull;
constexpr uint32_t kMaxNameLen = 4096;
constexpr uint32_t kMaxRank = 8;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

struct Reader {
  const unsigned char* p;
  size_t n;
  size_t pos = 0;

  void need(size_t k, const char* what) {
    if (pos + k > n)
      throw CheckpointIoError(CheckpointError::kTruncated,
                              std::string("checkpoint: truncated while reading ") + what);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) {
    uint64_t bits = u64(what);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string bytes(size_t k, const char* what) {
    need(k, what);
    std::string s(reinterpret_cast<const char*>(p + pos), k);
    pos += k;
    return s;
  }
};

}  // namespace

uint64_t fnv1a64(const void* data, size_t n, uint64_t h) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

uint64_t tensor_fingerprint(const Tensor& t) {
  uint64_t h = kFnvOffsetBasis;
  const uint64_t rank = static_cast<uint64_t>(t.rank());
  h = fnv1a64(&rank, sizeof(rank), h);
  for (int i = 0; i < t.rank(); ++i) {
    const int64_t e = t.shape()[static_cast<size_t>(i)];
    h = fnv1a64(&e, sizeof(e), h);
  }
  if (t.defined() && t.numel() > 0)
    h = fnv1a64(t.data(), static_cast<size_t>(t.numel()) * sizeof(double), h);
  return h;
}

void Checkpoint::add(std::string name, Tensor value) {
  blocks.emplace_back(std::move(name), std::move(value));
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : blocks)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, 0);  // total file length; backfilled below so truncation is diagnosable
  put_u32(out, static_cast<uint32_t>(ck.completed_stage));
  const std::string cfg = serialize_config(ck.config);
  put_u32(out, static_cast<uint32_t>(cfg.size()));
  out += cfg;
  put_u32(out, static_cast<uint32_t>(ck.blocks.size()));
  for (const auto& [name, t] : ck.blocks) {
    if (name.size() > kMaxNameLen)
      throw std::invalid_argument("checkpoint: block name too long: " + name);
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i)
      put_u64(out, static_cast<uint64_t>(t.shape()[static_cast<size_t>(i)]));
    const int64_t n = t.numel();
    const double* p = t.defined() ? t.data() : nullptr;
    for (int64_t i = 0; i < n; ++i) put_f64(out, p[i]);
  }
  put_u64(out, fnv1a64(out.data(), out.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (data.size() < 4 || std::memcmp(data.data(), kMagic, 4) != 0)
    throw CheckpointIoError(CheckpointError::kBadMagic, "checkpoint: bad magic");
  if (data.size() < 4 + 8)
    throw CheckpointIoError(CheckpointError::kTruncated, "checkpoint: file too short");
  // checksum covers everything before the trailing 8 bytes
  Reader tail{reinterpret_cast<const unsigned char*>(data.data()), data.size()};
  tail.pos = data.size() - 8;
  const uint64_t stored = tail.u64("checksum");
  const uint64_t actual = fnv1a64(data.data(), data.size() - 8);
  if (stored != actual)
    throw CheckpointIoError(CheckpointError::kChecksumMismatch, "checkpoint: checksum mismatch");

  Reader r{reinterpret_cast<const unsigned char*>(data.data()), data.size() - 8};
  r.pos = 4;
  const uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointIoError(CheckpointError::kBadVersion,
                            "checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.completed_stage = static_cast<int>(r.u32("completed_stage"));
  const uint32_t cfg_len = r.u32("config length");
  ck.config = parse_config(r.bytes(cfg_len, "config text"));
  const uint32_t count = r.u32("block count");
  ck.blocks.reserve(count);
  for (uint32_t b = 0; b < count; ++b) {
    const uint32_t name_len = r.u32("block name length");
    if (name_len > kMaxNameLen)
      throw CheckpointIoError(CheckpointError::kMalformed, "checkpoint: block name too long");
    std::string name = r.bytes(name_len, "block name");
    const uint32_t rank = r.u32("block rank");
    if (rank > kMaxRank)
      throw CheckpointIoError(CheckpointError::kMalformed, "checkpoint: block rank too large");
    Shape shape(rank);
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint64_t e = r.u64("block extent");
      if (e == 0 || e > (1ull << 32))
        throw CheckpointIoError(CheckpointError::kMalformed, "checkpoint: bad block extent");
      shape[i] = static_cast<int64_t>(e);
      numel *= shape[i];
      if (numel > (int64_t{1} << 34))
        throw CheckpointIoError(CheckpointError::kMalformed, "checkpoint: block too large");
    }
    Tensor t(shape);
    double* p = t.unique_data();
    for (int64_t i = 0; i < numel; ++i) p[i] = r.f64("block payload");
    ck.blocks.emplace_back(std::move(name), std::move(t));
  }
  if (r.pos != r.n)
    throw CheckpointIoError(CheckpointError::kMalformed, "checkpoint: trailing bytes after blocks");
  return ck;
}

}  // namespace splatnorm
