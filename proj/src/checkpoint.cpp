#include "survtx/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "survtx/csv.hpp"
#include "survtx/error.hpp"
#include "survtx/training.hpp"

namespace survtx::checkpoint {

RunConfig resolved(const RunConfig& config) {
  RunConfig r = config;
  r.model = config.resolved_model();
  r.loss = config.resolved_loss();
  return r;
}

ModelConfig Checkpoint::model_config() const {
  return training::sized_model(config.resolved_model(), preprocessor);
}

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::string_view s) { out_.append(s); }
  void str(std::string_view s) {
    u64(s.size());
    raw(s);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return std::string(raw(u64())); }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > in_.size() - pos_) throw ParseError("checkpoint: truncated file", 0);
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

std::string meta_text(const Checkpoint& c) {
  return "seed = " + std::to_string(c.seed) + "\nbest_epoch = " + std::to_string(c.best_epoch) +
         "\n";
}

void parse_meta(std::string_view text, Checkpoint& c) {
  std::istringstream in{std::string(text)};
  std::string key, eq;
  std::uint64_t value = 0;
  while (in >> key >> eq >> value) {
    if (key == "seed") c.seed = value;
    else if (key == "best_epoch") c.best_epoch = static_cast<std::size_t>(value);
    else throw ParseError("checkpoint: unknown meta key '" + key + "'", 0);
  }
}

}  // namespace

std::string encode(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic);
  w.u32(kVersion);
  w.str(ckpt.config.to_text());
  w.str(meta_text(ckpt));
  w.u64(ckpt.params.size());
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    const auto& t = ckpt.params.at(i);
    w.str(ckpt.params.name(i));
    w.u64(t.rank());
    for (auto d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
  }
  w.str(ckpt.preprocessor.serialize());
  w.u8(ckpt.calibration ? 1 : 0);
  if (ckpt.calibration) w.str(ckpt.calibration->serialize());
  return w.take();
}

Checkpoint decode(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < kMagic.size() || r.raw(kMagic.size()) != kMagic)
    throw ParseError("checkpoint: bad magic", 0);
  const auto version = r.u32();
  if (version != kVersion)
    throw ParseError("checkpoint: unsupported format version " + std::to_string(version), 0);
  Checkpoint c;
  c.config = RunConfig::parse(r.str());
  parse_meta(r.str(), c);
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    auto name = r.str();
    ad::Shape shape(r.u64());
    for (auto& d : shape) d = r.u64();
    std::vector<double> v(ad::shape_size(shape));
    for (auto& x : v) x = r.f64();
    c.params.add(std::move(name), ad::Tensor::parameter(std::move(shape), std::move(v)));
  }
  c.preprocessor = features::Preprocessor::deserialize(r.str());
  if (r.u8()) c.calibration = calibration::Calibration::deserialize(r.str());
  if (!r.done()) throw ParseError("checkpoint: trailing bytes", 0);
  model::Model(c.model_config()).check(c.params);
  return c;
}

void save(const std::filesystem::path& path, const Checkpoint& ckpt) {
  csv::atomic_write(path, encode(ckpt));
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode(ss.str());
}

}  // namespace survtx::checkpoint
