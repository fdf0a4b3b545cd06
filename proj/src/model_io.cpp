#include "ctxrnn/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "ctxrnn/errors.hpp"

namespace ctxrnn {

namespace {

constexpr char kMagic[4] = {'C', 'T', 'X', 'R'};

template <class T>
void put(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

void put_f64(std::ostream& out, double v) { put(out, std::bit_cast<std::uint64_t>(v)); }

void put_str(std::ostream& out, const std::string& s) {
  put(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <class T>
  T get() {
    unsigned char buf[sizeof(T)];
    read(buf, sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return static_cast<T>(v);
  }

  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }

  std::string str() {
    const auto n = get<std::uint32_t>();
    if (n > (1u << 26)) throw DataError("model file: implausible string length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw DataError("model file: truncated");
  }

 private:
  std::istream& in_;
};

std::string member_prefix(std::size_t m) { return "member" + std::to_string(m) + "."; }

}  // namespace

void write_model(std::ostream& out, const Model& model) {
  out.write(kMagic, 4);
  put(out, kModelFormatVersion);
  put_str(out, config_to_text(model.config));
  put(out, static_cast<std::uint32_t>(model.series_names.size()));
  for (const auto& name : model.series_names) put_str(out, name);
  put(out, static_cast<std::uint32_t>(model.global_batch.size()));
  for (std::size_t id : model.global_batch) put(out, static_cast<std::uint64_t>(id));
  std::uint32_t blocks = 0;
  for (const auto& member : model.members) blocks += static_cast<std::uint32_t>(member.size());
  put(out, blocks);
  for (std::size_t m = 0; m < model.members.size(); ++m) {
    const ParamStore& store = model.members[m];
    for (const auto& name : store.names()) {
      const Tensor& t = store.at(name);
      put_str(out, member_prefix(m) + name);
      put(out, static_cast<std::uint32_t>(t.shape.rank()));
      for (std::size_t d = 0; d < t.shape.rank(); ++d) put(out, static_cast<std::uint64_t>(t.shape[d]));
      for (double v : t.values) put_f64(out, v);
    }
  }
  if (!out) throw DataError("model file: write failed");
}

Model read_model(std::istream& in) {
  Reader r(in);
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("model file: bad magic bytes");
  const auto version = r.get<std::uint32_t>();
  if (version != kModelFormatVersion)
    throw DataError("model file: unsupported format version " + std::to_string(version));

  Config config;
  std::istringstream config_text(r.str());
  apply_config_text(config, config_text);
  config.validate();

  std::vector<std::string> names(r.get<std::uint32_t>());
  for (auto& name : names) name = r.str();
  std::vector<std::size_t> batch(r.get<std::uint32_t>());
  for (auto& id : batch) id = static_cast<std::size_t>(r.get<std::uint64_t>());

  Model model;
  model.config = config;
  model.series_names = names;
  model.global_batch = batch;
  model.members.resize(config.ensemble);
  const auto blocks = r.get<std::uint32_t>();
  for (std::uint32_t b = 0; b < blocks; ++b) {
    const std::string full = r.str();
    std::size_t m = 0;
    std::string name;
    for (; m < model.members.size(); ++m)
      if (full.rfind(member_prefix(m), 0) == 0) {
        name = full.substr(member_prefix(m).size());
        break;
      }
    if (m == model.members.size()) throw DataError("model file: block '" + full + "' names no ensemble member");
    const auto rank = r.get<std::uint32_t>();
    if (rank > Shape::kMaxRank) throw DataError("model file: block '" + full + "' has too many dimensions");
    Shape shape;
    std::size_t dims[Shape::kMaxRank] = {};
    for (std::uint32_t d = 0; d < rank; ++d) dims[d] = static_cast<std::size_t>(r.get<std::uint64_t>());
    switch (rank) {
      case 0: shape = Shape::scalar(); break;
      case 1: shape = Shape{dims[0]}; break;
      case 2: shape = Shape{dims[0], dims[1]}; break;
      case 3: shape = Shape{dims[0], dims[1], dims[2]}; break;
      default: shape = Shape{dims[0], dims[1], dims[2], dims[3]}; break;
    }
    Tensor t(shape);
    for (double& v : t.values) v = r.f64();
    model.members[m].add(name, std::move(t));
  }

  // Every member must carry exactly the parameters this configuration needs.
  const ParamStore expected = init_params(config, names.size(), 0);
  for (const ParamStore& member : model.members) {
    if (member.names() != expected.names()) throw DataError("model file: parameter set does not match its configuration");
    for (const auto& name : expected.names())
      if (!(member.at(name).shape == expected.at(name).shape))
        throw DataError("model file: parameter '" + name + "' has the wrong shape");
  }
  return model;
}

void save_model(const std::string& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file " + path);
  write_model(out, model);
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file " + path);
  return read_model(in);
}

}  // namespace ctxrnn
