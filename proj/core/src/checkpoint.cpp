#include "swgrid/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "swgrid/error.hpp"

namespace swgrid {
namespace {

constexpr char kMagic[4] = {'S', 'W', 'G', 'D'};

class Writer {
 public:
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  template <typename U>
  void le(U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
  void string(const std::string& s) {
    le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }

  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return value;
  }
  std::string string(const char* what) {
    const auto n = le<std::uint32_t>(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void magic() {
    need(4, "magic");
    if (std::memcmp(bytes_.data(), kMagic, 4) != 0) throw CorruptDataError("checkpoint: bad magic (expected SWGD)");
    pos_ += 4;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CorruptDataError(std::string("checkpoint: truncated while reading ") + what + " at byte offset " +
                             std::to_string(pos_));
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

CheckpointFile snapshot(const Network<float>& net) {
  CheckpointFile file;
  file.config_text = net.config().canonical();
  file.digest = fnv1a64(file.config_text);
  net.visit([&](const std::string& name, Tensor<float> t, ParamRole) {
    file.entries.push_back({name, t.shape(), t.to_vector()});
  });
  return file;
}

void restore(Network<float>& net, const CheckpointFile& file) {
  if (file.digest != net.config().digest()) {
    throw CorruptDataError("checkpoint: config digest does not match the target network");
  }
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : file.entries) by_name.emplace(e.name, &e);
  std::size_t visited = 0;
  net.visit([&](const std::string& name, Tensor<float> t, ParamRole) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CorruptDataError("checkpoint: missing entry " + name);
    if (it->second->shape != t.shape()) {
      throw CorruptDataError("checkpoint: entry " + name + " has shape " + shape_to_string(it->second->shape) +
                             ", expected " + shape_to_string(t.shape()));
    }
    std::copy(it->second->values.begin(), it->second->values.end(), t.data().begin());
    ++visited;
  });
  if (visited != file.entries.size()) throw CorruptDataError("checkpoint: unexpected extra entries");
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open");
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file) {
  Writer w;
  w.raw(kMagic, 4);
  w.le<std::uint32_t>(file.version);
  w.le<std::uint64_t>(file.digest);
  w.string(file.config_text);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(file.entries.size()));
  for (const auto& e : file.entries) {
    w.string(e.name);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t extent : e.shape) w.le<std::uint32_t>(static_cast<std::uint32_t>(extent));
    for (float v : e.values) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(v));
  }
  return std::move(w.bytes);
}

CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.magic();
  CheckpointFile file;
  file.version = r.le<std::uint32_t>("version");
  if (file.version != kCheckpointVersion) {
    throw CorruptDataError("checkpoint: unsupported version " + std::to_string(file.version));
  }
  file.digest = r.le<std::uint64_t>("digest");
  file.config_text = r.string("config");
  if (fnv1a64(file.config_text) != file.digest) throw CorruptDataError("checkpoint: config digest mismatch");
  const auto count = r.le<std::uint32_t>("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.string("entry name");
    const auto rank = r.le<std::uint32_t>("rank");
    if (rank == 0 || rank > 4) throw CorruptDataError("checkpoint: entry " + e.name + " has invalid rank");
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.le<std::uint32_t>("extent"));
    const std::size_t n = shape_numel(e.shape);
    e.values.reserve(n);
    for (std::size_t k = 0; k < n; ++k) e.values.push_back(std::bit_cast<float>(r.le<std::uint32_t>("values")));
    file.entries.push_back(std::move(e));
  }
  if (!r.done()) throw CorruptDataError("checkpoint: trailing bytes at offset " + std::to_string(r.position()));
  return file;
}

void save_checkpoint(const Network<float>& net, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(snapshot(net));
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(tmp.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

Network<float> load_checkpoint(const std::filesystem::path& path) {
  const CheckpointFile file = decode_checkpoint(read_bytes(path));
  Network<float> net(parse_network_canonical(file.config_text));
  restore(net, file);
  return net;
}

void load_checkpoint_into(Network<float>& net, const std::filesystem::path& path) {
  restore(net, decode_checkpoint(read_bytes(path)));
}

}  // namespace swgrid
