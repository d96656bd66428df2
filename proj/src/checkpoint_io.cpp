#include "phasedeploy/checkpoint_io.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "phasedeploy/error.hpp"

namespace phasedeploy::rl {

namespace {

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void doubles(const std::vector<double>& v) {
    pod<std::uint64_t>(v.size());
    const auto* p = reinterpret_cast<const unsigned char*>(v.data());
    buf_.insert(buf_.end(), p, p + v.size() * sizeof(double));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  std::vector<unsigned char>& buf() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size, std::string section)
      : data_(data), size_(size), section_(std::move(section)) {}

  template <typename T>
  T pod(const char* field) {
    need(sizeof(T), field);
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::vector<double> doubles(const char* field) {
    const auto n = pod<std::uint64_t>(field);
    if (n > (size_ - pos_) / sizeof(double)) fail(field, "length exceeds section payload");
    std::vector<double> v(n);
    std::memcpy(v.data(), data_ + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  std::string str(const char* field) {
    const auto n = pod<std::uint64_t>(field);
    need(n, field);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  void finish() {
    if (pos_ != size_) fail("<end>", "trailing bytes in section");
  }
  [[noreturn]] void fail(const char* field, const std::string& what) const {
    throw LoadError(section_ + "." + field, what);
  }

 private:
  void need(std::size_t n, const char* field) {
    if (size_ - pos_ < n) fail(field, "truncated payload");
  }
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string section_;
};

void put_section(Writer& out, const char tag[4], Writer& payload) {
  for (int i = 0; i < 4; ++i) out.pod(tag[i]);
  out.pod<std::uint64_t>(payload.buf().size());
  out.buf().insert(out.buf().end(), payload.buf().begin(), payload.buf().end());
}

void put_network(Writer& w, const nn::Mlp& net) {
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(net.sizes().size()));
  for (int s : net.sizes()) w.pod<std::int32_t>(s);
  w.doubles(std::vector<double>(net.params().begin(), net.params().end()));
}

nn::Mlp get_network(Reader& r) {
  const auto layers = r.pod<std::uint32_t>("layer_count");
  if (layers < 2 || layers > 64) r.fail("layer_count", "implausible layer count " + std::to_string(layers));
  std::vector<int> sizes;
  for (std::uint32_t i = 0; i < layers; ++i) {
    const auto s = r.pod<std::int32_t>("widths");
    if (s <= 0) r.fail("widths", "nonpositive layer width");
    sizes.push_back(s);
  }
  nn::Mlp net(sizes);
  const std::vector<double> params = r.doubles("params");
  if (params.size() != net.param_count()) {
    r.fail("params", "expected " + std::to_string(net.param_count()) + " parameters, found " +
                         std::to_string(params.size()));
  }
  std::copy(params.begin(), params.end(), net.params().begin());
  return net;
}

void put_adam(Writer& w, const nn::AdamState& s) {
  w.doubles(s.m);
  w.doubles(s.v);
  w.pod<std::int64_t>(s.t);
}

nn::AdamState get_adam(Reader& r, std::size_t expected) {
  nn::AdamState s;
  s.m = r.doubles("m");
  s.v = r.doubles("v");
  s.t = r.pod<std::int64_t>("t");
  if (s.m.size() != expected || s.v.size() != expected) r.fail("m", "moment length does not match network");
  if (s.t < 0) r.fail("t", "negative update counter");
  return s;
}

}  // namespace

std::vector<unsigned char> checkpoint_bytes(const Checkpoint& ck) {
  Writer out;
  for (char c : std::string("PDCK")) out.pod(c);
  out.pod<std::uint32_t>(kCheckpointVersion);

  Writer head;
  head.pod<std::int64_t>(ck.step);
  head.pod<std::int64_t>(ck.lr_position);
  put_section(out, "HEAD", head);

  Writer spec;
  spec.pod<std::uint64_t>(ck.env_spec_hash);
  put_section(out, "SPEC", spec);

  Writer poli;
  put_network(poli, ck.policy);
  put_section(out, "POLI", poli);

  Writer crit;
  put_network(crit, ck.critic);
  put_section(out, "CRIT", crit);

  Writer optm;
  put_adam(optm, ck.policy_opt);
  put_adam(optm, ck.critic_opt);
  put_section(out, "OPTM", optm);

  Writer rngs;
  rngs.pod<std::uint64_t>(ck.rng.key);
  rngs.pod<std::uint64_t>(ck.rng.counter);
  put_section(out, "RNGS", rngs);

  Writer audt;
  audt.pod<std::uint64_t>(ck.audit.size());
  for (const auto& a : ck.audit) {
    audt.pod<std::int64_t>(a.step);
    audt.str(a.action);
    audt.str(a.detail);
  }
  put_section(out, "AUDT", audt);
  return std::move(out.buf());
}

Checkpoint checkpoint_from_bytes(const std::vector<unsigned char>& bytes) {
  Reader top(bytes.data(), bytes.size(), "header");
  char magic[4];
  for (char& c : magic) c = top.pod<char>("magic");
  if (std::string(magic, 4) != "PDCK") top.fail("magic", "not a checkpoint file");
  const auto version = top.pod<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    top.fail("version", "version tag mismatch: file has " + std::to_string(version) + ", reader expects " +
                            std::to_string(kCheckpointVersion));
  }
  std::size_t pos = 8;
  Checkpoint ck;
  const char* required[] = {"HEAD", "SPEC", "POLI", "CRIT", "OPTM", "RNGS"};
  for (const char* tag : required) {
    if (bytes.size() - pos < 12) throw LoadError(tag, "truncated payload: section missing");
    const std::string got(reinterpret_cast<const char*>(bytes.data() + pos), 4);
    if (got != tag) throw LoadError(tag, "expected section " + std::string(tag) + ", found '" + got + "'");
    std::uint64_t len;
    std::memcpy(&len, bytes.data() + pos + 4, 8);
    pos += 12;
    if (len > bytes.size() - pos) throw LoadError(tag, "truncated payload: section length exceeds file");
    Reader r(bytes.data() + pos, len, tag);
    if (got == "HEAD") {
      ck.step = r.pod<std::int64_t>("step");
      ck.lr_position = r.pod<std::int64_t>("lr_position");
    } else if (got == "SPEC") {
      ck.env_spec_hash = r.pod<std::uint64_t>("env_spec_hash");
    } else if (got == "POLI") {
      ck.policy = get_network(r);
    } else if (got == "CRIT") {
      ck.critic = get_network(r);
    } else if (got == "OPTM") {
      ck.policy_opt = get_adam(r, ck.policy.param_count());
      ck.critic_opt = get_adam(r, ck.critic.param_count());
    } else {
      ck.rng.key = r.pod<std::uint64_t>("key");
      ck.rng.counter = r.pod<std::uint64_t>("counter");
    }
    r.finish();
    pos += len;
  }
  if (pos < bytes.size()) {
    if (bytes.size() - pos < 12) throw LoadError("AUDT", "truncated payload");
    const std::string got(reinterpret_cast<const char*>(bytes.data() + pos), 4);
    if (got != "AUDT") throw LoadError("AUDT", "unexpected section '" + got + "'");
    std::uint64_t len;
    std::memcpy(&len, bytes.data() + pos + 4, 8);
    pos += 12;
    if (len != bytes.size() - pos) throw LoadError("AUDT", "truncated payload: section length mismatch");
    Reader r(bytes.data() + pos, len, "AUDT");
    const auto n = r.pod<std::uint64_t>("count");
    for (std::uint64_t i = 0; i < n; ++i) {
      AuditEntry a;
      a.step = r.pod<std::int64_t>("step");
      a.action = r.str("action");
      a.detail = r.str("detail");
      ck.audit.push_back(std::move(a));
    }
    r.finish();
  }
  if (!ck.policy.all_finite() || !ck.critic.all_finite()) throw LoadError("POLI", "non-finite weights");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, std::ostream& out) {
  const auto bytes = checkpoint_bytes(ck);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(std::istream& in) {
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checkpoint_from_bytes(bytes);
}

void save_checkpoint_file(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  save_checkpoint(ck, out);
}

Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path, "cannot open checkpoint file");
  return load_checkpoint(in);
}

}  // namespace phasedeploy::rl
