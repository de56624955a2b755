#include "lbn/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace lbn {

namespace {

class Writer {
 public:
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  void set_context(std::string ctx) { ctx_ = std::move(ctx); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) {
    if (remaining() < n) {
      throw CheckpointError(CheckpointErrc::Truncated, "checkpoint truncated in " + ctx_);
    }
  }
  std::uint64_t get(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }

  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
  std::string ctx_ = "header";
};

[[noreturn]] void malformed(const std::string& what) {
  throw CheckpointError(CheckpointErrc::Malformed, "malformed checkpoint: " + what);
}

}  // namespace

std::vector<TensorRecord> to_records(const Model& model) {
  model.validate();
  std::vector<TensorRecord> recs;
  std::vector<double> spec{static_cast<double>(model.spec.input_dim),
                           static_cast<double>(model.spec.queries),
                           static_cast<double>(model.spec.classes)};
  for (auto h : model.spec.hidden_dims) spec.push_back(static_cast<double>(h));
  recs.push_back({"spec", Tensor::vector(std::move(spec))});
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    const auto p = "hidden." + std::to_string(l) + ".";
    recs.push_back({p + "weight", model.hidden[l].weight});
    recs.push_back({p + "bias", model.hidden[l].bias});
    const auto b = "bn." + std::to_string(l) + ".";
    const auto& s = model.bn[l];
    recs.push_back({b + "mu_h", s.mu_h});
    recs.push_back({b + "var_h", s.var_h});
    recs.push_back({b + "gamma", s.gamma});
    recs.push_back({b + "beta", s.beta});
    recs.push_back({b + "phi_raw", Tensor::scalar(s.phi_raw)});
    recs.push_back({b + "eps", Tensor::scalar(s.eps)});
  }
  recs.push_back({"head.weight", model.head.weight});
  recs.push_back({"head.bias", model.head.bias});
  return recs;
}

Model from_records(const std::vector<TensorRecord>& records) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& r : records) {
    if (!by_name.emplace(r.name, &r.value).second) malformed("duplicate record '" + r.name + "'");
  }
  auto get = [&](const std::string& name) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) malformed("missing record '" + name + "'");
    return *it->second;
  };
  auto as_size = [](double v, const char* what) {
    if (!(v >= 1.0) || v != std::floor(v) || v > 1e9) malformed(std::string("bad ") + what);
    return static_cast<std::size_t>(v);
  };

  const Tensor& spec_t = get("spec");
  if (spec_t.rank() != 1 || spec_t.size() < 4) malformed("spec record needs at least 4 values");
  Model m;
  m.spec.input_dim = as_size(spec_t[0], "input_dim");
  m.spec.queries = as_size(spec_t[1], "queries");
  m.spec.classes = as_size(spec_t[2], "classes");
  m.spec.hidden_dims.clear();
  for (std::size_t i = 3; i < spec_t.size(); ++i) m.spec.hidden_dims.push_back(as_size(spec_t[i], "hidden width"));

  for (std::size_t l = 0; l < m.spec.hidden_dims.size(); ++l) {
    const auto p = "hidden." + std::to_string(l) + ".";
    m.hidden.push_back({get(p + "weight"), get(p + "bias")});
    const auto b = "bn." + std::to_string(l) + ".";
    BnState s;
    s.mu_h = get(b + "mu_h");
    s.var_h = get(b + "var_h");
    s.gamma = get(b + "gamma");
    s.beta = get(b + "beta");
    s.phi_raw = get(b + "phi_raw").item();
    s.eps = get(b + "eps").item();
    m.bn.push_back(std::move(s));
  }
  m.head = {get("head.weight"), get("head.bias")};
  try {
    m.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    malformed(e.what());
  }
  if (by_name.size() != to_records(m).size()) malformed("unexpected extra records");
  return m;
}

std::vector<std::uint8_t> encode_checkpoint(const Model& model) {
  const auto recs = to_records(model);
  Writer w;
  w.raw(kCheckpointMagic, 4);
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(recs.size()));
  for (const auto& r : recs) {
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.raw(r.name.data(), r.name.size());
    w.u32(static_cast<std::uint32_t>(r.value.rank()));
    for (auto d : r.value.shape()) w.u64(d);
    w.u64(8 * static_cast<std::uint64_t>(r.value.size()));
    for (double v : r.value.data()) w.f64(v);
  }
  return w.take();
}

Model decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(CheckpointErrc::BadMagic, "not a checkpoint: bad magic bytes");
  }
  Reader r(bytes);
  r.str(4);
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrc::VersionMismatch,
                          "unsupported checkpoint version " + std::to_string(version) +
                              " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = r.u32();
  std::vector<TensorRecord> recs;
  for (std::uint32_t i = 0; i < count; ++i) {
    r.set_context("record #" + std::to_string(i));
    const auto name_len = r.u32();
    if (name_len > r.remaining()) {
      throw CheckpointError(CheckpointErrc::Truncated,
                            "checkpoint truncated in record #" + std::to_string(i) + " name");
    }
    auto name = r.str(name_len);
    r.set_context("record #" + std::to_string(i) + " '" + name + "'");
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) malformed("record '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.u64();
      if (d == 0 || d > (1ULL << 32)) malformed("record '" + name + "' has a bad dimension");
      shape.push_back(static_cast<std::size_t>(d));
      numel *= d;
    }
    const auto payload = r.u64();
    if (payload != 8 * numel) malformed("record '" + name + "' payload length disagrees with its shape");
    if (payload > r.remaining()) {
      throw CheckpointError(CheckpointErrc::Truncated,
                            "checkpoint truncated in record #" + std::to_string(i) + " '" + name + "'");
    }
    std::vector<double> data(static_cast<std::size_t>(numel));
    for (auto& v : data) v = r.f64();
    recs.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  if (r.remaining() != 0) malformed("trailing bytes after the last record");
  return from_records(recs);
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointErrc::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrc::Io, "failed writing " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("checkpoint not found: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace lbn
