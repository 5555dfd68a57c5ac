#include "ipd/store.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ipd {

namespace {

constexpr char kCloudMagic[4] = {'I', 'P', 'C', '1'};
constexpr char kCkptMagic[4] = {'I', 'P', 'K', '1'};
constexpr char kConfigEntry[] = "__config__";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

/// Little-endian cursor over a byte buffer; throws FormatError past the end.
class Reader {
 public:
  Reader(const std::string& bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }

  const char* take(std::size_t n, const char* field) {
    if (remaining() < n)
      throw FormatError(what_ + ": truncated " + field);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::uint32_t u32(const char* field) {
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(take(4, field));
    return static_cast<std::uint32_t>(p[0]) | (std::uint32_t(p[1]) << 8) |
           (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
  }

  std::uint64_t u64(const char* field) {
    std::uint64_t v = 0;
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(take(8, field));
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }

  float f32(const char* field) {
    const std::uint32_t bits = u32(field);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  double f64(const char* field) {
    const std::uint64_t bits = u64(field);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::uint8_t u8(const char* field) {
    return static_cast<std::uint8_t>(*take(1, field));
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path);
}

void write_cloud(const std::string& path, const PointCloud& cloud) {
  if (cloud.empty()) throw ContractError("refusing to write an empty cloud");
  if (cloud.has_normals() && cloud.normals.size() != cloud.size())
    throw ShapeError("normal count does not match point count");
  std::string out;
  out.append(kCloudMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(cloud.size()));
  out.push_back(cloud.has_normals() ? char(1) : char(0));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    put_f32(out, static_cast<float>(cloud.points[i].x));
    put_f32(out, static_cast<float>(cloud.points[i].y));
    put_f32(out, static_cast<float>(cloud.points[i].z));
    if (cloud.has_normals()) {
      put_f32(out, static_cast<float>(cloud.normals[i].x));
      put_f32(out, static_cast<float>(cloud.normals[i].y));
      put_f32(out, static_cast<float>(cloud.normals[i].z));
    }
  }
  write_file_atomic(path, out);
}

PointCloud read_cloud(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  Reader r(bytes, path);
  const char* magic = r.take(4, "magic");
  if (std::memcmp(magic, kCloudMagic, 4) != 0)
    throw FormatError(path + ": bad magic, expected IPC1");
  const std::uint32_t n = r.u32("point count");
  if (n == 0) throw FormatError(path + ": zero point count");
  const std::uint8_t flags = r.u8("flags");
  if (flags > 1) throw FormatError(path + ": unknown flag bits set");
  const bool with_normals = flags & 1;
  const std::size_t stride = with_normals ? 6 : 3;
  if (r.remaining() != static_cast<std::size_t>(n) * stride * 4)
    throw FormatError(path + ": body size does not match point count");
  PointCloud c;
  c.points.reserve(n);
  if (with_normals) c.normals.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const double x = r.f32("point"), y = r.f32("point"), z = r.f32("point");
    c.points.push_back({x, y, z});
    if (with_normals) {
      const double nx = r.f32("normal"), ny = r.f32("normal"),
                   nz = r.f32("normal");
      c.normals.push_back({nx, ny, nz});
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

std::vector<double> config_payload(const NetConfig& c, int steps,
                                   double beta_start, double beta_end,
                                   double clamp) {
  return {static_cast<double>(c.d_model),
          static_cast<double>(c.n_heads),
          static_cast<double>(c.n_cond_tokens),
          static_cast<double>(c.time_embed_dim),
          static_cast<double>(c.decoder_depth),
          static_cast<double>(static_cast<int>(c.activation)),
          static_cast<double>(steps),
          beta_start,
          beta_end,
          clamp};
}

void append_entry(std::string& out, const std::string& name,
                  const std::vector<std::uint32_t>& dims,
                  const double* payload, std::size_t count) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (std::uint32_t d : dims) put_u32(out, d);
  for (std::size_t i = 0; i < count; ++i) put_f64(out, payload[i]);
}

}  // namespace

void save_checkpoint(const std::string& path, const NetParams& params,
                     const DiffusionSchedule& sched, double clamp) {
  std::string out;
  out.append(kCkptMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(params.tensors.size() + 1));
  const std::vector<double> meta =
      config_payload(params.cfg, sched.steps(),
                     sched.beta(TimeStep{1}), sched.beta(TimeStep{sched.steps()}),
                     clamp);
  append_entry(out, kConfigEntry,
               {static_cast<std::uint32_t>(meta.size())}, meta.data(),
               meta.size());
  for (const auto& [name, t] : params.tensors) {
    append_entry(out, name,
                 {static_cast<std::uint32_t>(t.rows),
                  static_cast<std::uint32_t>(t.cols)},
                 t.data.data(), t.size());
  }
  put_u64(out, out.size());  // length check: bytes before the trailer
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  Reader r(bytes, path);
  const char* magic = r.take(4, "magic");
  if (std::memcmp(magic, kCkptMagic, 4) != 0)
    throw FormatError(path + ": bad magic, expected IPK1");
  if (bytes.size() < 12) throw FormatError(path + ": truncated header");
  {
    Reader trailer(bytes, path);
    trailer.take(bytes.size() - 8, "body");
    const std::uint64_t declared = trailer.u64("length check");
    if (declared != bytes.size() - 8)
      throw FormatError(path + ": length check mismatch");
  }
  const std::uint32_t entries = r.u32("entry count");
  if (entries == 0) throw FormatError(path + ": no entries");

  Checkpoint ck{NetParams{}, 0, 0.0, 0.0, 0.0};
  bool have_config = false;
  std::vector<std::pair<std::string, Tensor>> raw;
  for (std::uint32_t e = 0; e < entries; ++e) {
    const std::uint32_t name_len = r.u32("name length");
    if (name_len == 0 || name_len > 4096)
      throw FormatError(path + ": implausible name length");
    const std::string name(r.take(name_len, "name"), name_len);
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) throw FormatError(path + ": implausible rank");
    std::uint64_t count = 1;
    std::vector<std::uint32_t> dims(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
      dims[i] = r.u32("dimension");
      count *= dims[i];
    }
    if (count == 0 || count > (1ull << 32))
      throw FormatError(path + ": implausible payload size");
    std::vector<double> payload(count);
    for (std::uint64_t i = 0; i < count; ++i) payload[i] = r.f64("payload");

    if (name == kConfigEntry) {
      if (payload.size() != 10)
        throw FormatError(path + ": malformed config entry");
      ck.params.cfg.d_model = static_cast<int>(payload[0]);
      ck.params.cfg.n_heads = static_cast<int>(payload[1]);
      ck.params.cfg.n_cond_tokens = static_cast<int>(payload[2]);
      ck.params.cfg.time_embed_dim = static_cast<int>(payload[3]);
      ck.params.cfg.decoder_depth = static_cast<int>(payload[4]);
      ck.params.cfg.activation = static_cast<Activation>(static_cast<int>(payload[5]));
      ck.schedule_steps = static_cast<int>(payload[6]);
      ck.beta_start = payload[7];
      ck.beta_end = payload[8];
      ck.clamp = payload[9];
      have_config = true;
      continue;
    }
    if (rank != 2) throw FormatError(path + ": tensor entries must be rank 2");
    Tensor t(dims[0], dims[1]);
    t.data = std::move(payload);
    raw.emplace_back(name, std::move(t));
  }
  if (r.remaining() != 8)
    throw FormatError(path + ": trailing bytes after entries");
  if (!have_config) throw FormatError(path + ": missing config entry");

  // Rebuild the expected parameter set for this config; reject unknown
  // names and wrong shapes.
  NetParams expected;
  try {
    expected = init_params(ck.params.cfg, 0);
  } catch (const ParamError& e) {
    throw FormatError(path + ": invalid embedded config: " + e.what());
  }
  ck.params.tensors = std::move(expected.tensors);
  std::size_t filled = 0;
  for (auto& [name, t] : raw) {
    auto it = ck.params.tensors.find(name);
    if (it == ck.params.tensors.end())
      throw FormatError(path + ": unknown tensor name '" + name + "'");
    if (it->second.rows != t.rows || it->second.cols != t.cols)
      throw IncompatibleCheckpointError(path + ": shape mismatch for '" + name + "'");
    it->second = std::move(t);
    ++filled;
  }
  if (filled != ck.params.tensors.size())
    throw FormatError(path + ": missing tensor entries");
  return ck;
}

Checkpoint load_checkpoint(const std::string& path, const NetConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.params.cfg == expected))
    throw IncompatibleCheckpointError(
        path + ": checkpoint was written with a different net configuration");
  return ck;
}

// ---------------------------------------------------------------------------
// Config files
// ---------------------------------------------------------------------------

namespace {

double parse_real(const std::string& v, int line) {
  std::size_t pos = 0;
  double out;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("line " + std::to_string(line) + ": unparsable value '" + v + "'");
  }
  if (pos != v.size())
    throw ConfigError("line " + std::to_string(line) + ": unparsable value '" + v + "'");
  return out;
}

long parse_int(const std::string& v, int line) {
  const double d = parse_real(v, line);
  const long i = static_cast<long>(std::llround(d));
  if (static_cast<double>(i) != d)
    throw ConfigError("line " + std::to_string(line) + ": expected an integer, got '" + v + "'");
  return i;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream ss(text);
  std::string raw;
  int line = 0;
  while (std::getline(ss, raw)) {
    ++line;
    const std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    const std::string s = trim(raw);
    if (s.empty()) continue;
    const std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line) + ": expected 'key = value'");
    const std::string key = trim(s.substr(0, eq));
    const std::string val = trim(s.substr(eq + 1));
    if (key.empty() || val.empty())
      throw ConfigError("line " + std::to_string(line) + ": expected 'key = value'");

    if (key == "d_model") cfg.net.d_model = static_cast<int>(parse_int(val, line));
    else if (key == "n_heads") cfg.net.n_heads = static_cast<int>(parse_int(val, line));
    else if (key == "n_cond_tokens") cfg.net.n_cond_tokens = static_cast<int>(parse_int(val, line));
    else if (key == "time_embed_dim") cfg.net.time_embed_dim = static_cast<int>(parse_int(val, line));
    else if (key == "decoder_depth") cfg.net.decoder_depth = static_cast<int>(parse_int(val, line));
    else if (key == "activation") {
      if (val != "gelu")
        throw ConfigError("line " + std::to_string(line) + ": unknown activation '" + val + "'");
    } else if (key == "T") cfg.schedule_steps = static_cast<int>(parse_int(val, line));
    else if (key == "beta_start") cfg.beta_start = parse_real(val, line);
    else if (key == "beta_end") cfg.beta_end = parse_real(val, line);
    else if (key == "schedule") {
      if (val != "linear")
        throw ConfigError("line " + std::to_string(line) + ": unknown schedule '" + val + "'");
    } else if (key == "lambda_weight") cfg.train.lambda_weight = parse_real(val, line);
    else if (key == "lr") cfg.train.lr = parse_real(val, line);
    else if (key == "adam_beta1") cfg.train.adam_beta1 = parse_real(val, line);
    else if (key == "adam_beta2") cfg.train.adam_beta2 = parse_real(val, line);
    else if (key == "steps") cfg.train.steps = static_cast<int>(parse_int(val, line));
    else if (key == "batch") cfg.train.batch = static_cast<int>(parse_int(val, line));
    else if (key == "selfcond_prob") cfg.train.selfcond_prob = parse_real(val, line);
    else if (key == "clamp") cfg.train.clamp = parse_real(val, line);
    else if (key == "seed") cfg.train.seed = static_cast<std::uint64_t>(parse_int(val, line));
    else if (key == "grad_clip") cfg.train.grad_clip = parse_real(val, line);
    else if (key == "snapshot_every") cfg.train.snapshot_every = static_cast<int>(parse_int(val, line));
    else if (key == "log_every") cfg.train.log_every = static_cast<int>(parse_int(val, line));
    else if (key == "n_points") cfg.sampler.n_points = static_cast<std::size_t>(parse_int(val, line));
    else if (key == "extract_tau") cfg.sampler.extract_tau = parse_real(val, line);
    else if (key == "capture_every") cfg.sampler.capture_every = static_cast<int>(parse_int(val, line));
    else if (key == "rho") cfg.rho = parse_real(val, line);
    else
      throw ConfigError("line " + std::to_string(line) + ": unknown key '" + key + "'");
  }

  try {
    cfg.net.validate();
    cfg.train.validate();
    if (!(cfg.rho > 0.0)) throw ConfigError("rho must be positive");
    if (!(cfg.sampler.extract_tau > 0.0) ||
        cfg.sampler.extract_tau > cfg.train.clamp)
      throw ConfigError("extract_tau must lie in (0, clamp]");
    if (cfg.train.lambda_weight < 0.0)
      throw ConfigError("lambda_weight must be non-negative");
    make_schedule(cfg.schedule_steps, cfg.beta_start, cfg.beta_end);
  } catch (const ParamError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig read_config(const std::string& path) {
  return parse_config(read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out.push_back(',');
      out += csv_escape(row[i]);
    }
    out += "\r\n";
  };
  emit(header);
  for (const auto& row : rows) emit(row);
  write_file_atomic(path, out);
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const char c = bytes[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < bytes.size() && bytes[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      if (!field.empty() && field.back() == '\r') field.pop_back();
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
    } else {
      field.push_back(c);
    }
  }
  if (!field.empty() || !row.empty()) {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// SHA-1 (for provenance hashes)
// ---------------------------------------------------------------------------

namespace {

struct Sha1 {
  std::uint32_t h[5] = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u,
                        0xC3D2E1F0u};
  std::uint64_t total = 0;
  std::array<unsigned char, 64> buf{};
  std::size_t buf_len = 0;

  static std::uint32_t rol(std::uint32_t v, int s) {
    return (v << s) | (v >> (32 - s));
  }

  void block(const unsigned char* p) {
    std::uint32_t w[80];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
             (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
    for (int i = 16; i < 80; ++i)
      w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
    std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
    for (int i = 0; i < 80; ++i) {
      std::uint32_t f, k;
      if (i < 20) { f = (b & c) | (~b & d); k = 0x5A827999u; }
      else if (i < 40) { f = b ^ c ^ d; k = 0x6ED9EBA1u; }
      else if (i < 60) { f = (b & c) | (b & d) | (c & d); k = 0x8F1BBCDCu; }
      else { f = b ^ c ^ d; k = 0xCA62C1D6u; }
      const std::uint32_t t = rol(a, 5) + f + e + k + w[i];
      e = d; d = c; c = rol(b, 30); b = a; a = t;
    }
    h[0] += a; h[1] += b; h[2] += c; h[3] += d; h[4] += e;
  }

  void update(const unsigned char* p, std::size_t n) {
    total += n;
    while (n > 0) {
      const std::size_t take = std::min(n, buf.size() - buf_len);
      std::memcpy(buf.data() + buf_len, p, take);
      buf_len += take;
      p += take;
      n -= take;
      if (buf_len == 64) {
        block(buf.data());
        buf_len = 0;
      }
    }
  }

  std::string finish() {
    const std::uint64_t bits = total * 8;
    const unsigned char one = 0x80;
    update(&one, 1);
    const unsigned char zero = 0;
    while (buf_len != 56) update(&zero, 1);
    unsigned char len[8];
    for (int i = 0; i < 8; ++i)
      len[i] = static_cast<unsigned char>((bits >> (56 - 8 * i)) & 0xff);
    update(len, 8);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (std::uint32_t v : h)
      for (int i = 28; i >= 0; i -= 4) out.push_back(hex[(v >> i) & 0xf]);
    return out;
  }
};

}  // namespace

std::string git_blob_sha1(const std::string& bytes) {
  Sha1 s;
  const std::string header = "blob " + std::to_string(bytes.size());
  s.update(reinterpret_cast<const unsigned char*>(header.data()),
           header.size() + 1);  // includes the NUL
  s.update(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
  return s.finish();
}

std::string file_sha1(const std::string& path) {
  return git_blob_sha1(read_file_bytes(path));
}

}  // namespace ipd
