#include "langtyp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <set>
#include <string>

#include "langtyp/error.hpp"
#include "langtyp/util.hpp"

namespace langtyp {

namespace {

constexpr char kMagic[8] = {'L', 'T', 'Y', 'P', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <typename T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw ValidationError("checkpoint truncated: " + source_);
  }
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params, std::uint64_t seed) {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, seed);
  auto all = params.all();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(all.size()));
  for (const Parameter* p : all) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.shape().size()));
    for (std::size_t d : p->value.shape()) put_le<std::uint64_t>(out, d);
    for (double v : p->value.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  write_file(path, out);
}

std::uint64_t load_checkpoint(const std::filesystem::path& path, ParameterSet& params) {
  const std::string bytes = read_file(path);
  Reader r(bytes, path.string());
  if (r.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw ValidationError("not a checkpoint file: " + path.string());
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version) + ": " + path.string());
  const auto seed = r.le<std::uint64_t>();
  const auto count = r.le<std::uint32_t>();
  std::set<std::string> seen;
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name = r.take(r.le<std::uint32_t>());
    Shape shape(r.le<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(r.le<std::uint64_t>());
    if (!params.contains(name)) throw ValidationError("checkpoint has unknown parameter " + name);
    Parameter& p = params.get(name);
    if (p.value.shape() != shape)
      throw ValidationError("checkpoint shape mismatch for " + name + ": " + shape_string(shape) + " vs " +
                            p.value.shape_string());
    for (double& v : p.value.values()) v = std::bit_cast<double>(r.le<std::uint64_t>());
    seen.insert(name);
  }
  if (!r.done()) throw ValidationError("trailing bytes in checkpoint: " + path.string());
  for (const Parameter* p : params.all())
    if (!seen.count(p->name)) throw ValidationError("checkpoint lacks parameter " + p->name);
  return seed;
}

}  // namespace langtyp
