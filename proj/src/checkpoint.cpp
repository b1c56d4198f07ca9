#include "phydiff/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace phydiff {

namespace {

constexpr char kMagic[8] = {'P', 'H', 'Y', 'D', 'C', 'K', 'P', 'T'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

/// Bounds-checked little-endian reader over the raw file bytes.
class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  [[nodiscard]] std::size_t remaining() const { return b_.size() - pos_; }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

std::string format_shape(const Shape& s) {
  if (s.empty()) return "-";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

Shape parse_shape(const std::string& text) {
  Shape s;
  if (text == "-") return s;
  std::istringstream in(text);
  std::string d;
  while (std::getline(in, d, 'x')) {
    if (d.empty() || d.find_first_not_of("0123456789") != std::string::npos) {
      throw FormatError("checkpoint header: bad shape " + text);
    }
    s.push_back(std::stoull(d));
  }
  return s;
}

long parse_long(const std::string& text, const std::string& what) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
    throw FormatError("checkpoint header: bad " + what + " " + text);
  }
  return std::stol(text);
}

void check_layout(const std::vector<std::string>& ids, const std::vector<Tensor>& stored, const ParameterSet& params) {
  if (params.size() != ids.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(ids.size()) + " tensors, model has " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (params[i].id != ids[i]) throw ShapeError("checkpoint tensor " + ids[i] + " where model has " + params[i].id);
    if (params[i].value.shape() != stored[i].shape()) throw ShapeError("checkpoint shape mismatch for " + ids[i]);
  }
}

}  // namespace

Checkpoint Checkpoint::capture(const std::string& digest, long step, const ParameterSet& params,
                               const OptimizerState& optimizer) {
  Checkpoint c;
  c.digest = digest;
  c.step = step;
  for (const auto& p : params) {
    c.ids.push_back(p.id);
    c.values.push_back(p.value);
  }
  c.adam_step = optimizer.step;
  c.first_moment = optimizer.first_moment;
  c.second_moment = optimizer.second_moment;
  if (c.first_moment.size() != c.values.size() || c.second_moment.size() != c.values.size()) {
    throw ContractError("optimizer state does not match the parameter set");
  }
  return c;
}

void Checkpoint::restore(ParameterSet& params) const {
  check_layout(ids, values, params);
  for (std::size_t i = 0; i < ids.size(); ++i) params[i].value = values[i];
}

void Checkpoint::restore(OptimizerState& optimizer) const {
  optimizer.step = adam_step;
  optimizer.first_moment = first_moment;
  optimizer.second_moment = second_moment;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream h;
  h << "digest " << ckpt.digest << '\n'
    << "step " << ckpt.step << '\n'
    << "adam_step " << ckpt.adam_step << '\n'
    << "status " << (ckpt.failed ? "failed" : "ok") << '\n';
  for (std::size_t i = 0; i < ckpt.ids.size(); ++i) {
    h << "param " << ckpt.ids[i] << ' ' << format_shape(ckpt.values[i].shape()) << '\n';
  }
  const std::string header = h.str();

  std::string out(kMagic, sizeof kMagic);
  put_u32(out, Checkpoint::kVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (const auto* group : {&ckpt.values, &ckpt.first_moment, &ckpt.second_moment}) {
    for (const auto& t : *group) {
      for (double d : t.data()) put_f64(out, d);
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof kMagic, "magic") != std::string(kMagic, sizeof kMagic)) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != Checkpoint::kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(Checkpoint::kVersion) + ")");
  }
  const std::uint32_t header_len = r.u32("header length");
  std::istringstream header(r.bytes(header_len, "header"));

  Checkpoint c;
  std::vector<Shape> shapes;
  bool have_digest = false;
  bool have_step = false;
  bool have_status = false;
  std::string line;
  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string key;
    std::string a;
    std::string b;
    ls >> key >> a >> b;
    if (key == "digest") {
      c.digest = a;
      have_digest = true;
    } else if (key == "step") {
      c.step = parse_long(a, "step");
      have_step = true;
    } else if (key == "adam_step") {
      c.adam_step = static_cast<std::uint64_t>(parse_long(a, "adam_step"));
    } else if (key == "status") {
      if (a != "ok" && a != "failed") throw FormatError("checkpoint header: bad status " + a);
      c.failed = a == "failed";
      have_status = true;
    } else if (key == "param") {
      if (a.empty() || b.empty()) throw FormatError("checkpoint header: malformed line: " + line);
      c.ids.push_back(a);
      shapes.push_back(parse_shape(b));
    } else {
      throw FormatError("checkpoint header: unknown entry: " + line);
    }
  }
  if (!have_digest || !have_step || !have_status) throw FormatError("checkpoint header is incomplete");

  for (auto* group : {&c.values, &c.first_moment, &c.second_moment}) {
    for (const auto& s : shapes) {
      Tensor t(s);
      for (double& d : t.data()) d = r.f64("tensor data");
      group->push_back(std::move(t));
    }
  }
  if (r.remaining() != 0) throw FormatError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write checkpoint " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path, const std::string& expected_digest) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  Checkpoint c = decode_checkpoint(ss.str());
  if (!expected_digest.empty() && c.digest != expected_digest) {
    throw DigestMismatch("checkpoint digest " + c.digest + " does not match config digest " + expected_digest +
                         "; the architecture or schedule differs");
  }
  return c;
}

}  // namespace phydiff
