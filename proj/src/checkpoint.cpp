#include "warmstart/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_set>

#include "warmstart/error.hpp"

namespace warmstart {

namespace {

constexpr char kMagic[4] = {'W', 'S', 'C', 'K'};
constexpr std::uint32_t kDtypeF32 = 1;

std::uint32_t crc32_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large payloads.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string& buffer() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  void need(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) throw Error(ErrorCode::format, std::string("archive truncated while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view raw(std::size_t n, const char* what) {
    need(n, what);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

void put_floats(Writer& w, std::span<const float> data) {
  std::string bytes(data.size() * 4, '\0');
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(data[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  w.raw(bytes.data(), bytes.size());
  w.u32(crc32_of(bytes.data(), bytes.size()));
}

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

}  // namespace

std::string to_string(ArchiveFamily family) {
  switch (family) {
    case ArchiveFamily::native: return "native";
    case ArchiveFamily::bert_like: return "bert-like";
    case ArchiveFamily::gpt_like: return "gpt-like";
  }
  return "unknown";
}

ArchiveFamily parse_family(std::string_view text) {
  if (text == "native") return ArchiveFamily::native;
  if (text == "bert-like" || text == "bert") return ArchiveFamily::bert_like;
  if (text == "gpt-like" || text == "gpt") return ArchiveFamily::gpt_like;
  throw Error(ErrorCode::format, "unknown archive family " + std::string(text));
}

const ArchiveEntry* TensorArchive::find(std::string_view name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.name);
  return out;
}

std::size_t TensorArchive::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.value.size();
  return n;
}

void TensorArchive::check_unique() const {
  std::unordered_set<std::string_view> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.name).second) throw Error(ErrorCode::format, "duplicate tensor name " + e.name);
  }
}

std::string serialize_archive(const TensorArchive& archive) {
  archive.check_unique();
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kArchiveVersion);
  w.u32(static_cast<std::uint32_t>(archive.family));
  w.u32(static_cast<std::uint32_t>(archive.metadata.size()));
  for (const auto& [k, v] : archive.metadata) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(archive.entries.size()));
  for (const auto& e : archive.entries) {
    w.str(e.name);
    w.u32(kDtypeF32);
    w.u32(static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) w.u64(d);
  }
  w.u32(crc32_of(w.buffer().data(), w.buffer().size()));
  for (const auto& e : archive.entries) put_floats(w, e.value.data());
  return std::move(w.buffer());
}

TensorArchive parse_archive(std::string_view bytes) {
  Reader r(bytes);
  if (r.raw(4, "magic") != std::string_view(kMagic, 4)) throw Error(ErrorCode::format, "not a tensor archive (bad magic)");
  const auto version = r.u32("version");
  if (version != kArchiveVersion) {
    throw Error(ErrorCode::format, "archive version " + std::to_string(version) + " is not supported (expected " +
                                       std::to_string(kArchiveVersion) + ")");
  }
  TensorArchive a;
  const auto family = r.u32("family");
  if (family > 2) throw Error(ErrorCode::format, "unknown archive family code " + std::to_string(family));
  a.family = static_cast<ArchiveFamily>(family);
  const auto meta = r.u32("metadata count");
  for (std::uint32_t i = 0; i < meta; ++i) {
    auto k = r.str("metadata key");
    a.metadata[k] = r.str("metadata value");
  }
  const auto count = r.u32("tensor count");
  std::vector<std::pair<std::string, Shape>> manifest;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str("tensor name");
    const auto dtype = r.u32("dtype");
    if (dtype != kDtypeF32) throw Error(ErrorCode::format, "tensor " + name + " has unsupported dtype " + std::to_string(dtype));
    const auto rank = r.u32("rank");
    if (rank > 8) throw Error(ErrorCode::format, "tensor " + name + " has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = r.u64("dims");
    manifest.emplace_back(std::move(name), std::move(shape));
  }
  const std::size_t header_end = r.pos();
  const auto header_crc = r.u32("header checksum");
  if (header_crc != crc32_of(bytes.data(), header_end)) throw Error(ErrorCode::format, "archive header checksum mismatch");
  for (auto& [name, shape] : manifest) {
    const std::size_t n = num_elements(shape);
    auto payload = r.raw(n * 4, "payload");
    const auto crc = r.u32("payload checksum");
    if (crc != crc32_of(payload.data(), payload.size())) {
      throw Error(ErrorCode::format, "checksum mismatch in tensor " + name);
    }
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[i * 4 + b])) << (8 * b);
      data[i] = std::bit_cast<float>(bits);
    }
    a.entries.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(data))});
  }
  if (!r.done()) throw Error(ErrorCode::format, "trailing bytes after the last tensor");
  a.check_unique();
  return a;
}

void save_archive(const TensorArchive& archive, const std::filesystem::path& path) {
  const std::string bytes = serialize_archive(archive);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write archive " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::io, "short write to " + path.string());
}

TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open archive " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_archive(buf.str());
}

template <class T>
TensorArchive archive_from_model(const Seq2SeqModel<T>& model, ArchiveFamily family) {
  TensorArchive a;
  a.family = family;
  for (const auto& p : model.parameters()) a.entries.push_back({p->name, p->value.template cast<float>()});
  return a;
}

std::string to_string(WarmSide side) {
  switch (side) {
    case WarmSide::encoder: return "encoder";
    case WarmSide::decoder: return "decoder";
    case WarmSide::both: return "both";
  }
  return "unknown";
}

WarmSide parse_side(std::string_view text) {
  if (text == "encoder") return WarmSide::encoder;
  if (text == "decoder") return WarmSide::decoder;
  if (text == "both") return WarmSide::both;
  throw Error(ErrorCode::config, "unknown warm-start side " + std::string(text));
}

namespace {

// Model names an archive entry lands on for one side.
template <class T>
std::vector<std::string> target_names(const Seq2SeqModel<T>& model, ArchiveFamily family, const std::string& name,
                                      WarmSide side) {
  const auto& cfg = model.config();
  const bool enc = side != WarmSide::decoder;
  const bool dec = side != WarmSide::encoder;
  std::vector<std::string> out;
  if (family == ArchiveFamily::native) {
    const bool decoder_part = starts_with(name, "decoder/") || starts_with(name, "output/") ||
                              (cfg.decoder_only && starts_with(name, "embeddings/"));
    if ((decoder_part && dec) || (!decoder_part && enc)) out.push_back(name);
    return out;
  }
  if (starts_with(name, "embeddings/")) {
    const std::string rest = name.substr(std::string("embeddings/").size());
    if (enc) out.push_back("embeddings/" + rest);
    if (dec) out.push_back((cfg.separate_decoder_embeddings() ? "decoder/embeddings/" : "embeddings/") + rest);
    return out;
  }
  static const std::regex layer_re(R"(^(encoder|decoder)/layer_(\d+)/((self|ffn)/.+)$)");
  std::smatch m;
  if (!std::regex_match(name, m, layer_re)) return out;
  const std::string expected = family == ArchiveFamily::bert_like ? "encoder" : "decoder";
  if (m[1] != expected) return out;
  const std::string tail = "/layer_" + m[2].str() + "/" + m[3].str();
  if (enc) out.push_back("encoder" + tail);
  if (dec) out.push_back("decoder" + tail);
  return out;
}

template <class T>
void copy_into(Parameter<T>& dst, const ArchiveEntry& src) {
  const auto& s = src.value;
  const bool positional = dst.name.ends_with("/position") || dst.name == "embeddings/position";
  if (s.shape() == dst.value.shape()) {
    std::transform(s.data().begin(), s.data().end(), dst.value.data().begin(), [](float x) { return static_cast<T>(x); });
    return;
  }
  if (positional && s.rank() == 2 && dst.value.rank() == 2 && s.cols() == dst.value.cols() &&
      s.rows() > dst.value.rows()) {
    const std::size_t n = dst.value.size();
    std::transform(s.data().begin(), s.data().begin() + static_cast<std::ptrdiff_t>(n), dst.value.data().begin(),
                   [](float x) { return static_cast<T>(x); });
    return;
  }
  throw Error(ErrorCode::incompatible, "tensor " + src.name + " has shape " + shape_string(s.shape()) +
                                           " but model parameter " + dst.name + " expects " +
                                           shape_string(dst.value.shape()));
}

}  // namespace

template <class T>
InitReport warm_start(Seq2SeqModel<T>& model, const std::vector<std::pair<const TensorArchive*, WarmSide>>& sources) {
  const auto& cfg = model.config();
  std::unordered_set<const Parameter<T>*> warm;
  std::set<std::string> used;
  std::vector<std::string> all_names;
  for (const auto& [archive, side] : sources) {
    if (side != WarmSide::decoder && !cfg.has_encoder() && archive->family != ArchiveFamily::native) {
      throw Error(ErrorCode::scheme, "cannot warm-start the encoder of a decoder-only model");
    }
    if (side != WarmSide::encoder && !cfg.has_decoder() && archive->family != ArchiveFamily::native) {
      throw Error(ErrorCode::scheme, "cannot warm-start the decoder of an encoder-only model");
    }
    for (const auto& e : archive->entries) {
      all_names.push_back(e.name);
      for (const auto& target : target_names(model, archive->family, e.name, side)) {
        auto p = model.find(target);
        if (!p) continue;
        copy_into(*p, e);
        warm.insert(p.get());
        used.insert(e.name);
      }
    }
  }
  InitReport report;
  for (const auto& p : model.parameters()) {
    if (warm.count(p.get())) {
      report.warm_names.push_back(p->name);
      report.warm_params += p->value.size();
    } else {
      report.random_names.push_back(p->name);
      report.random_params += p->value.size();
    }
  }
  std::set<std::string> reported;
  for (const auto& n : all_names) {
    if (!used.count(n) && reported.insert(n).second) report.unused_archive_names.push_back(n);
  }
  return report;
}

template <class T>
InitReport warm_start(Seq2SeqModel<T>& model, const TensorArchive& archive, WarmSide side) {
  return warm_start(model, std::vector<std::pair<const TensorArchive*, WarmSide>>{{&archive, side}});
}

template <class T>
InitReport cold_report(const Seq2SeqModel<T>& model) {
  InitReport report;
  for (const auto& p : model.parameters()) {
    report.random_names.push_back(p->name);
    report.random_params += p->value.size();
  }
  return report;
}

#define WARMSTART_INSTANTIATE(T)                                                                          \
  template TensorArchive archive_from_model<T>(const Seq2SeqModel<T>&, ArchiveFamily);                   \
  template InitReport warm_start<T>(Seq2SeqModel<T>&, const TensorArchive&, WarmSide);                   \
  template InitReport warm_start<T>(Seq2SeqModel<T>&,                                                    \
                                    const std::vector<std::pair<const TensorArchive*, WarmSide>>&);      \
  template InitReport cold_report<T>(const Seq2SeqModel<T>&);

WARMSTART_INSTANTIATE(float)
WARMSTART_INSTANTIATE(double)

}  // namespace warmstart
