#include "sovs/formats.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace sovs {
namespace {

void put_u16le(std::string& out, std::uint16_t x) {
  out.push_back(static_cast<char>(x & 0xff));
  out.push_back(static_cast<char>((x >> 8) & 0xff));
}

void put_f32le(std::string& out, float f) {
  std::uint32_t x;
  std::memcpy(&x, &f, 4);
  out.push_back(static_cast<char>(x & 0xff));
  out.push_back(static_cast<char>((x >> 8) & 0xff));
  out.push_back(static_cast<char>((x >> 16) & 0xff));
  out.push_back(static_cast<char>((x >> 24) & 0xff));
}

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

  std::string line() {
    auto nl = bytes_.find('\n', pos_);
    if (nl == std::string::npos) fail("missing header line");
    std::string s = bytes_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return s;
  }

  std::uint16_t u16le() {
    need(2);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += 2;
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }

  float f32le() {
    need(4);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += 4;
    std::uint32_t x = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    float f;
    std::memcpy(&f, &x, 4);
    return f;
  }

  void expect_eof() {
    if (pos_ != bytes_.size()) fail("trailing bytes");
  }

  [[noreturn]] void fail(const std::string& what) {
    throw std::runtime_error(name_ + ": " + what);
  }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) fail("truncated file");
  }
  std::string bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

std::vector<long long> parse_header(ByteReader& r, const std::string& magic, std::size_t nfields) {
  std::istringstream iss(r.line());
  std::string tag, version;
  iss >> tag >> version;
  if (tag != magic || version != "v1") r.fail("bad header, expected '" + magic + " v1'");
  std::vector<long long> fields(nfields);
  for (auto& f : fields) {
    if (!(iss >> f) || f < 0) r.fail("bad header fields");
  }
  return fields;
}

}  // namespace

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

void write_sovspl(const std::filesystem::path& path, const LabelMap& label,
                  const ConfMap& confidence, int n_in) {
  if (label.h != confidence.h || label.w != confidence.w)
    throw std::invalid_argument("sovspl: label/confidence shape mismatch");
  std::string out;
  out.reserve(32 + label.size() * 6);
  out += "SOVSPL v1 " + std::to_string(label.h) + " " + std::to_string(label.w) + " " +
         std::to_string(n_in) + "\n";
  for (std::uint16_t id : label.v) put_u16le(out, id);
  for (float c : confidence.v) put_f32le(out, c);
  write_file_bytes(path, out);
}

PlFile read_sovspl(const std::filesystem::path& path) {
  ByteReader r(read_file_bytes(path), path.string());
  auto f = parse_header(r, "SOVSPL", 3);
  PlFile pl;
  pl.label = LabelMap(static_cast<int>(f[0]), static_cast<int>(f[1]));
  pl.confidence = ConfMap(static_cast<int>(f[0]), static_cast<int>(f[1]));
  pl.n_in = static_cast<int>(f[2]);
  for (auto& id : pl.label.v) id = r.u16le();
  for (auto& c : pl.confidence.v) c = r.f32le();
  r.expect_eof();
  return pl;
}

void write_sovsemb(const std::filesystem::path& path, const EmbeddingField& field) {
  std::string out;
  out.reserve(32 + field.v.size() * 4);
  out += "SOVSEMB v1 " + std::to_string(field.h) + " " + std::to_string(field.w) + " " +
         std::to_string(field.c) + "\n";
  for (float x : field.v) put_f32le(out, x);
  write_file_bytes(path, out);
}

EmbeddingField read_sovsemb(const std::filesystem::path& path) {
  ByteReader r(read_file_bytes(path), path.string());
  auto f = parse_header(r, "SOVSEMB", 3);
  EmbeddingField field(static_cast<int>(f[0]), static_cast<int>(f[1]), static_cast<int>(f[2]));
  for (auto& x : field.v) x = r.f32le();
  r.expect_eof();
  return field;
}

void write_sovsimg(const std::filesystem::path& path, const Tensor3& img) {
  std::string out;
  out.reserve(32 + img.v.size() * 4);
  out += "SOVSIMG v1 " + std::to_string(img.h) + " " + std::to_string(img.w) + " " +
         std::to_string(img.c) + "\n";
  for (float x : img.v) put_f32le(out, x);
  write_file_bytes(path, out);
}

Tensor3 read_sovsimg(const std::filesystem::path& path) {
  ByteReader r(read_file_bytes(path), path.string());
  auto f = parse_header(r, "SOVSIMG", 3);
  Tensor3 img(static_cast<int>(f[0]), static_cast<int>(f[1]), static_cast<int>(f[2]));
  for (auto& x : img.v) x = r.f32le();
  r.expect_eof();
  return img;
}

void write_sovsckpt(const std::filesystem::path& path, std::uint64_t config_hash,
                    const std::vector<float>& params) {
  std::string out;
  out.reserve(48 + params.size() * 4);
  out += "SOVSCKPT v1 " + hex64(config_hash) + " " + std::to_string(params.size()) + "\n";
  for (float x : params) put_f32le(out, x);
  write_file_bytes(path, out);
}

CkptFile read_sovsckpt(const std::filesystem::path& path) {
  ByteReader r(read_file_bytes(path), path.string());
  std::istringstream iss(r.line());
  std::string tag, version, hash;
  std::size_t count = 0;
  iss >> tag >> version >> hash >> count;
  if (tag != "SOVSCKPT" || version != "v1" || hash.size() != 16)
    r.fail("bad header, expected 'SOVSCKPT v1 <hash> <count>'");
  CkptFile ck;
  ck.config_hash = std::stoull(hash, nullptr, 16);
  ck.params.resize(count);
  for (auto& x : ck.params) x = r.f32le();
  r.expect_eof();
  return ck;
}

}  // namespace sovs
