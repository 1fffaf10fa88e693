#include "ca3/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ca3/errors.hpp"

namespace ca3 {
namespace {

constexpr char kMagic[8] = {'C', 'A', '3', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  template <class T>
  T take(const char* what) {
    T v;
    std::memcpy(&v, need(sizeof(T), what), sizeof(T));
    return v;
  }

  const char* need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw DataError(origin_ + ": checkpoint truncated while reading " + what + " at byte " + std::to_string(pos_));
    }
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const ModelBundle& bundle, const CheckpointExtras& extras) {
  Json meta;
  meta["target"] = to_json(bundle.target_config());
  meta["alarm"] = to_json(bundle.alarm_config());
  Json taps = Json::array();
  for (const auto& t : bundle.taps()) taps.push_back(to_json(t));
  meta["taps"] = taps;
  if (extras.schema) meta["schema"] = to_json(*extras.schema);
  if (extras.normalization) meta["normalization"] = to_json(*extras.normalization);
  meta["info"] = extras.info;
  const std::string meta_text = meta.dump();

  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, meta_text.size());
  out += meta_text;
  const auto& params = bundle.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) put<std::uint64_t>(out, d);
    const auto values = p.tensor.data();
    out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
  }
  put<std::uint64_t>(out, fnv1a(out.data(), out.size()));
  return out;
}

LoadedCheckpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader in(bytes, origin);
  if (std::memcmp(in.need(sizeof kMagic, "magic"), kMagic, sizeof kMagic) != 0) {
    throw DataError(origin + ": not a checkpoint (bad magic)");
  }
  const auto version = in.take<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw DataError(origin + ": unsupported checkpoint version " + std::to_string(version));
  }
  if (bytes.size() < sizeof(std::uint64_t) ||
      fnv1a(bytes.data(), bytes.size() - sizeof(std::uint64_t)) !=
          [&] {
            std::uint64_t h;
            std::memcpy(&h, bytes.data() + bytes.size() - sizeof h, sizeof h);
            return h;
          }()) {
    throw DataError(origin + ": checkpoint checksum mismatch (file corrupted or truncated)");
  }

  const auto meta_len = in.take<std::uint64_t>("metadata length");
  const char* meta_text = in.need(meta_len, "metadata");
  Json meta;
  try {
    meta = Json::parse(meta_text, meta_text + meta_len);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": checkpoint metadata is not valid JSON: " + e.what());
  }

  const TargetConfig target = target_config_from_json(meta.at("target"));
  const AlarmConfig alarm = alarm_config_from_json(meta.at("alarm"));
  LoadedCheckpoint loaded{ModelBundle::build(target, alarm, 0), {}};
  if (meta.contains("schema")) loaded.extras.schema = csv_schema_from_json(meta.at("schema"));
  if (meta.contains("normalization")) loaded.extras.normalization = normalization_from_json(meta.at("normalization"));
  if (meta.contains("info")) loaded.extras.info = meta.at("info");

  const auto& params = loaded.bundle.parameters();
  const auto count = in.take<std::uint32_t>("tensor count");
  if (count != params.size()) {
    throw DataError(origin + ": checkpoint holds " + std::to_string(count) + " tensors, the model has " +
                    std::to_string(params.size()));
  }
  for (const auto& p : params) {
    const auto name_len = in.take<std::uint32_t>("tensor name length");
    const std::string name(in.need(name_len, "tensor name"), name_len);
    if (name != p.name) throw DataError(origin + ": expected tensor '" + p.name + "', found '" + name + "'");
    const auto rank = in.take<std::uint32_t>("tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.take<std::uint64_t>("tensor dims"));
    if (shape != p.tensor.shape()) {
      throw DataError(origin + ": tensor '" + name + "' has shape " + to_string(shape) + ", the model expects " +
                      to_string(p.tensor.shape()));
    }
    auto t = p.tensor;
    auto dst = t.mutable_data();
    std::memcpy(dst.data(), in.need(dst.size() * sizeof(float), "tensor values"), dst.size() * sizeof(float));
  }
  if (in.pos() + sizeof(std::uint64_t) != bytes.size()) {
    throw DataError(origin + ": unexpected trailing bytes in checkpoint");
  }
  return loaded;
}

void save_checkpoint(const std::string& path, const ModelBundle& bundle, const CheckpointExtras& extras) {
  const std::string bytes = serialize_checkpoint(bundle, extras);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path);
}

}  // namespace ca3
