#include "segkit/persistence.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

namespace segkit {

namespace {

constexpr std::uint8_t kStateRole = 2;

class Writer {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void raw(const void* data, size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void str16(const std::string& s) {
    if (s.size() > 0xFFFF) throw CheckpointError("name too long: " + s.substr(0, 64));
    u16(static_cast<std::uint16_t>(s.size()));
    raw(s.data(), s.size());
  }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void floats(const Tensorf& t) {
    for (Index i = 0; i < t.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, &t[i], 4);
      u32(bits);
    }
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, size_t size) : data_(data), size_(size) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  void floats(Tensorf& t) {
    need(static_cast<size_t>(t.size()) * 4);
    for (Index i = 0; i < t.size(); ++i) {
      const std::uint32_t bits = u32();
      std::memcpy(&t[i], &bits, 4);
    }
  }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n) const {
    if (pos_ + n > size_) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t get(int n) {
    need(static_cast<size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<size_t>(i)]) << (8 * i);
    pos_ += static_cast<size_t>(n);
    return v;
  }
  const std::uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
};

void write_manifest_entry(Writer& w, const std::string& name, std::uint8_t role, const Tensorf& t) {
  w.str16(name);
  w.u8(role);
  if (t.rank() > 255) throw CheckpointError("rank too large for '" + name + "'");
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (Index d = 0; d < t.rank(); ++d) w.u32(static_cast<std::uint32_t>(t.dim(d)));
}

struct ManifestEntry {
  std::string name;
  std::uint8_t role;
  Shape shape;
};

ManifestEntry read_manifest_entry(Reader& r) {
  ManifestEntry e;
  e.name = r.str(r.u16());
  e.role = r.u8();
  const int rank = r.u8();
  std::vector<Index> dims;
  for (int d = 0; d < rank; ++d) dims.push_back(r.u32());
  e.shape = Shape(std::move(dims));
  return e;
}

std::uint32_t crc_of(const std::uint8_t* data, size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  Writer w;
  w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.u32(checkpoint.format_version);
  nlohmann::json spec_json = checkpoint.spec ? nlohmann::json(*checkpoint.spec) : nlohmann::json(nullptr);
  w.str32(spec_json.dump());
  w.str32(checkpoint.training ? checkpoint.training->meta.dump() : std::string("null"));

  w.u32(static_cast<std::uint32_t>(checkpoint.parameters.size()));
  for (const auto& p : checkpoint.parameters) {
    write_manifest_entry(w, p.name, static_cast<std::uint8_t>(p.role), p.values);
  }
  const std::map<std::string, Tensorf> no_slots;
  const auto& slots = checkpoint.training ? checkpoint.training->optimizer_slots : no_slots;
  w.u32(static_cast<std::uint32_t>(slots.size()));
  for (const auto& [name, t] : slots) write_manifest_entry(w, name, kStateRole, t);

  for (const auto& p : checkpoint.parameters) w.floats(p.values);
  for (const auto& [name, t] : slots) w.floats(t);

  const std::uint32_t crc = crc_of(w.bytes().data(), w.bytes().size());
  w.u32(crc);
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) + 8 ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError("not a segkit checkpoint (bad magic)");
  }
  const size_t body = bytes.size() - 4;
  Reader tail(bytes.data() + body, 4);
  if (tail.u32() != crc_of(bytes.data(), body)) {
    throw ChecksumError("checkpoint checksum mismatch: file is corrupted");
  }

  Reader r(bytes.data(), body);
  (void)r.str(sizeof(kCheckpointMagic));
  Checkpoint ck;
  ck.format_version = r.u32();
  if (ck.format_version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint format version " + std::to_string(ck.format_version) +
                          " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  }
  try {
    const auto spec_json = nlohmann::json::parse(r.str(r.u32()));
    if (!spec_json.is_null()) ck.spec = spec_json.get<ModelSpec>();
    const auto meta = nlohmann::json::parse(r.str(r.u32()));
    if (!meta.is_null()) ck.training = TrainingState{meta, {}};
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }

  std::vector<ManifestEntry> params, slots;
  const std::uint32_t n_params = r.u32();
  for (std::uint32_t i = 0; i < n_params; ++i) params.push_back(read_manifest_entry(r));
  const std::uint32_t n_slots = r.u32();
  for (std::uint32_t i = 0; i < n_slots; ++i) slots.push_back(read_manifest_entry(r));

  std::set<std::string> seen;
  for (const auto& e : params) {
    if (!seen.insert(e.name).second) throw CheckpointError("duplicate parameter '" + e.name + "'");
    if (e.role > 1) throw CheckpointError("bad role for parameter '" + e.name + "'");
    NamedArray a{e.name, static_cast<ParamRole>(e.role), Tensorf(e.shape)};
    r.floats(a.values);
    ck.parameters.push_back(std::move(a));
  }
  for (const auto& e : slots) {
    Tensorf t(e.shape);
    r.floats(t);
    if (!ck.training) ck.training = TrainingState{};
    ck.training->optimizer_slots.emplace(e.name, std::move(t));
  }
  if (r.pos() != body) throw CheckpointError("trailing bytes in checkpoint");
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::filesystem::path tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move checkpoint into place at '" + path.string() + "'");
  }
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint make_checkpoint(const SegmentationModel& model, const TrainingState* training) {
  Checkpoint ck;
  ck.spec = model.spec();
  for (const auto& p : model.parameters().entries()) {
    ck.parameters.push_back({p.name, p.role, p.var.value()});
  }
  if (training) ck.training = *training;
  return ck;
}

void save_checkpoint(const SegmentationModel& model, const std::filesystem::path& path,
                     const TrainingState* training) {
  write_checkpoint(path, make_checkpoint(model, training));
}

void restore_parameters(SegmentationModel& model, const Checkpoint& checkpoint) {
  auto& store = model.parameters();
  std::set<std::string> in_file;
  for (const auto& a : checkpoint.parameters) {
    in_file.insert(a.name);
    if (!store.find(a.name)) {
      throw CheckpointError("checkpoint has unexpected parameter '" + a.name + "'");
    }
  }
  for (const auto& p : store.entries()) {
    if (!in_file.count(p.name)) throw CheckpointError("checkpoint is missing parameter '" + p.name + "'");
  }
  for (const auto& a : checkpoint.parameters) {
    Parameter* p = store.find(a.name);
    if (a.values.shape() != p->var.shape()) {
      throw CheckpointError("parameter '" + a.name + "' has shape " + a.values.shape().str() +
                            ", architecture expects " + p->var.shape().str());
    }
  }
  for (const auto& a : checkpoint.parameters) {
    store.find(a.name)->var.mutable_value() = a.values;
  }
}

SegmentationModel model_from_checkpoint(const Checkpoint& checkpoint,
                                        const std::optional<ModelSpec>& expected_spec) {
  if (!checkpoint.spec) throw CheckpointError("file is a bare parameter archive without a model spec");
  if (expected_spec) {
    const auto diff = spec_differences(*checkpoint.spec, *expected_spec);
    if (!diff.empty()) {
      std::string fields;
      for (const auto& f : diff) fields += (fields.empty() ? "" : ", ") + f;
      throw CheckpointError("checkpoint spec does not match expected spec; differing fields: " + fields);
    }
  }
  SegmentationModel model(*checkpoint.spec);
  restore_parameters(model, checkpoint);
  return model;
}

SegmentationModel load_checkpoint(const std::filesystem::path& path,
                                  const std::optional<ModelSpec>& expected_spec, TrainingState* training) {
  Checkpoint ck = read_checkpoint(path);
  SegmentationModel model = model_from_checkpoint(ck, expected_spec);
  if (training) *training = ck.training.value_or(TrainingState{});
  return model;
}

TranslationTable parse_translation_table(const std::string& text) {
  TranslationTable table;
  std::istringstream lines(text);
  std::string line;
  int number = 0;
  while (std::getline(lines, line)) {
    ++number;
    std::istringstream fields(line);
    std::string foreign, canonical, extra;
    if (!(fields >> foreign) || foreign.front() == '#') continue;
    if (!(fields >> canonical) || (fields >> extra)) {
      throw ConfigError("translation table line " + std::to_string(number) +
                        ": expected '<foreign name> <canonical name>'");
    }
    table.emplace_back(foreign, canonical);
  }
  return table;
}

TranslationTable read_translation_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open translation table '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_translation_table(buffer.str());
}

std::size_t import_pretrained(SegmentationModel& model, const Checkpoint& foreign,
                              const TranslationTable& table, const std::string& source) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : foreign.parameters) by_name.emplace(a.name, &a);

  // Validate everything before touching the model.
  std::vector<std::pair<Parameter*, const NamedArray*>> copies;
  for (const auto& [foreign_name, canonical] : table) {
    auto it = by_name.find(foreign_name);
    if (it == by_name.end()) throw CheckpointError("foreign weights have no array '" + foreign_name + "'");
    Parameter* target = model.parameters().find(canonical);
    if (!target) throw CheckpointError("model has no parameter '" + canonical + "'");
    if (target->var.shape() != it->second->values.shape()) {
      throw CheckpointError("cannot import '" + foreign_name + "' " + it->second->values.shape().str() +
                            " into '" + canonical + "' " + target->var.shape().str());
    }
    copies.emplace_back(target, it->second);
  }
  for (auto& [target, array] : copies) target->var.mutable_value() = array->values;
  model.mutable_spec().pretrained_source = source;
  return copies.size();
}

}  // namespace segkit
