#pragma once

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>

#include "ssdu/experiments.hpp"

namespace ssdu {

static_assert(std::endian::native == std::endian::little, "payloads are written as raw little-endian memory");

using Metadata = std::vector<std::pair<std::string, std::string>>;

inline const std::string* find_meta(const Metadata& m, const std::string& key) {
  for (const auto& [k, v] : m)
    if (k == key) return &v;
  return nullptr;
}

inline const std::string& require_meta(const Metadata& m, const std::string& key) {
  if (const auto* v = find_meta(m, key)) return *v;
  throw FormatError("metadata key '" + key + "' missing");
}

/// Shortest decimal text that parses back to the same double.
inline std::string exact(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& s, const std::string& what) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw UsageError(what + ": '" + s + "' is not a number");
  return v;
}

inline std::uint64_t parse_uint(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw UsageError(what + ": '" + s + "' is not a nonnegative integer");
  return v;
}

inline bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw UsageError(what + ": '" + s + "' is not a boolean");
}

// ---------------------------------------------------------------------------
// KSP container

enum class ContainerKind : std::uint8_t { kspace = 1, maps = 2, mask = 3, image = 4 };

inline const char* container_kind_name(ContainerKind k) {
  switch (k) {
    case ContainerKind::kspace: return "kspace";
    case ContainerKind::maps: return "maps";
    case ContainerKind::mask: return "mask";
    case ContainerKind::image: return "image";
  }
  return "unknown";
}

inline constexpr std::uint16_t kKspVersion = 1;

struct Container {
  ContainerKind kind = ContainerKind::image;
  DType dtype = DType::complex128;
  Shape shape;
  std::vector<std::uint8_t> payload;
  Metadata metadata;
};

namespace detail {

class Writer {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::string what) : b_(b), what_(std::move(what)) {}
  template <class T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > b_.size() - pos_) throw FormatError(what_ + ": truncated");
    const auto* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  bool at_end() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline DType checked_dtype(std::uint8_t code) {
  const auto d = static_cast<DType>(code);
  (void)dtype_size(d);  // throws on unknown codes
  return d;
}

inline std::string metadata_text(const Metadata& m) {
  std::string out;
  for (const auto& [k, v] : m) {
    if (k.empty() || k.find_first_of("=\n") != std::string::npos) throw UsageError("bad metadata key '" + k + "'");
    if (v.find('\n') != std::string::npos) throw UsageError("metadata value for '" + k + "' contains a newline");
    out += k + "=" + v + "\n";
  }
  return out;
}

inline Metadata parse_metadata_text(const std::string& text, const std::string& what) {
  Metadata m;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) throw FormatError(what + ": unterminated metadata line");
    const std::string line = text.substr(pos, nl - pos);
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw FormatError(what + ": bad metadata line '" + line + "'");
    m.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    pos = nl + 1;
  }
  return m;
}

}  // namespace detail

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const void* data, std::size_t n) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw FormatError("write failed: " + path.string());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) { write_file(path, text.data(), text.size()); }

inline std::string read_text(const std::filesystem::path& path) {
  const auto b = read_file(path);
  return std::string(b.begin(), b.end());
}

/// Layout: "SSDU" | u16 version | u8 kind | u8 dtype | u32 rank | u64 extents[rank]
/// | payload | u32 metadata length | "key=value\n"...
inline std::vector<std::uint8_t> encode_container(const Container& c) {
  const std::size_t expected = shape_numel(c.shape) * dtype_size(c.dtype);
  if (c.payload.size() != expected)
    throw DimensionError("container payload has " + std::to_string(c.payload.size()) + " bytes, shape needs " +
                         std::to_string(expected));
  detail::Writer w;
  w.put_bytes("SSDU", 4);
  w.put<std::uint16_t>(kKspVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(c.kind));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(c.dtype));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.shape.size()));
  for (auto e : c.shape) w.put<std::uint64_t>(e);
  w.put_bytes(c.payload.data(), c.payload.size());
  w.put_string(detail::metadata_text(c.metadata));
  return w.bytes();
}

inline Container decode_container(const std::vector<std::uint8_t>& bytes, const std::string& what = "KSP") {
  detail::Reader r(bytes, what);
  if (std::memcmp(r.take(4), "SSDU", 4) != 0) throw FormatError(what + ": bad magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kKspVersion) throw FormatError(what + ": unsupported format version " + std::to_string(version));
  Container c;
  const auto kind = r.get<std::uint8_t>();
  if (kind < 1 || kind > 4) throw FormatError(what + ": unknown kind tag " + std::to_string(kind));
  c.kind = static_cast<ContainerKind>(kind);
  c.dtype = detail::checked_dtype(r.get<std::uint8_t>());
  const auto rank = r.get<std::uint32_t>();
  if (rank > 8) throw FormatError(what + ": rank " + std::to_string(rank) + " too large");
  for (std::uint32_t i = 0; i < rank; ++i) c.shape.push_back(r.get<std::uint64_t>());
  const std::size_t n = shape_numel(c.shape) * dtype_size(c.dtype);
  const auto* p = r.take(n);
  c.payload.assign(p, p + n);
  c.metadata = detail::parse_metadata_text(r.get_string(), what);
  if (!r.at_end()) throw FormatError(what + ": trailing bytes");
  return c;
}

inline void write_container(const std::filesystem::path& path, const Container& c) {
  const auto b = encode_container(c);
  write_file(path, b.data(), b.size());
}

inline Container read_container(const std::filesystem::path& path) { return decode_container(read_file(path), path.string()); }

template <class T>
Container make_container(ContainerKind kind, const Tensor<T>& t, Metadata meta) {
  Container c{kind, dtype_of<T>::value, t.shape(), {}, std::move(meta)};
  const auto* p = reinterpret_cast<const std::uint8_t*>(t.raw());
  c.payload.assign(p, p + t.size() * sizeof(T));
  return c;
}

template <class T>
Tensor<T> container_tensor(const Container& c) {
  if (c.dtype != dtype_of<T>::value)
    throw FormatError(std::string("expected ") + dtype_name(dtype_of<T>::value) + " payload, got " + dtype_name(c.dtype));
  Tensor<T> t(c.shape);
  std::memcpy(t.raw(), c.payload.data(), c.payload.size());
  return t;
}

/// Complex payload of either precision, converted to std::complex<Real>.
template <class Real>
ComplexTensor<Real> container_complex(const Container& c) {
  if (c.dtype == DType::complex128) return tensor_cast<std::complex<Real>>(container_tensor<std::complex<double>>(c));
  if (c.dtype == DType::complex64) return tensor_cast<std::complex<Real>>(container_tensor<std::complex<float>>(c));
  throw FormatError(std::string("expected complex payload, got ") + dtype_name(c.dtype));
}

inline void expect_kind(const Container& c, ContainerKind k) {
  if (c.kind != k)
    throw FormatError(std::string("expected ") + container_kind_name(k) + " container, got " + container_kind_name(c.kind));
}

// Sampling pattern as "start:length" runs over the row-major grid.
inline std::string encode_runs(const SamplingMask& m) {
  std::string out;
  std::size_t i = 0;
  const std::size_t n = m.grid.size();
  while (i < n) {
    if (!m.test(i)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && m.test(j)) ++j;
    if (!out.empty()) out += ',';
    out += std::to_string(i) + ":" + std::to_string(j - i);
    i = j;
  }
  return out;
}

inline SamplingMask decode_runs(const std::string& runs, std::size_t rows, std::size_t cols) {
  SamplingMask m(rows, cols);
  std::size_t pos = 0;
  while (pos < runs.size()) {
    auto end = runs.find(',', pos);
    if (end == std::string::npos) end = runs.size();
    const std::string run = runs.substr(pos, end - pos);
    const auto colon = run.find(':');
    if (colon == std::string::npos) throw FormatError("bad run '" + run + "'");
    const auto start = parse_uint(run.substr(0, colon), "run start");
    const auto len = parse_uint(run.substr(colon + 1), "run length");
    if (start + len > rows * cols) throw FormatError("run '" + run + "' exceeds the grid");
    for (std::size_t i = start; i < start + len; ++i) m.set_index(i);
    pos = end + 1;
  }
  return m;
}

template <class Real>
void write_kspace(const std::filesystem::path& path, const KSpaceVolume<Real>& v, Metadata extra = {}) {
  Metadata meta{{"slice_id", v.slice_id}, {"scale", exact(v.scale)}, {"acquired", encode_runs(v.acquired_mask)}};
  meta.insert(meta.end(), extra.begin(), extra.end());
  write_container(path, make_container(ContainerKind::kspace, v.data, std::move(meta)));
}

template <class Real>
KSpaceVolume<Real> kspace_from_container(const Container& c) {
  expect_kind(c, ContainerKind::kspace);
  if (c.shape.size() != 3) throw FormatError("k-space must be [coils,H,W], got " + shape_string(c.shape));
  KSpaceVolume<Real> v;
  v.data = container_complex<Real>(c);
  v.slice_id = require_meta(c.metadata, "slice_id");
  v.scale = parse_double(require_meta(c.metadata, "scale"), "scale");
  v.acquired_mask = decode_runs(require_meta(c.metadata, "acquired"), c.shape[1], c.shape[2]);
  return v;
}

template <class Real>
KSpaceVolume<Real> read_kspace(const std::filesystem::path& path) {
  return kspace_from_container<Real>(read_container(path));
}

template <class Real>
void write_maps(const std::filesystem::path& path, const CoilMaps<Real>& m, Metadata meta = {}) {
  write_container(path, make_container(ContainerKind::maps, m.maps, std::move(meta)));
}

template <class Real>
CoilMaps<Real> read_maps(const std::filesystem::path& path) {
  const auto c = read_container(path);
  expect_kind(c, ContainerKind::maps);
  if (c.shape.size() != 3) throw FormatError("maps must be [coils,H,W], got " + shape_string(c.shape));
  return {container_complex<Real>(c)};
}

inline void write_mask(const std::filesystem::path& path, const SamplingMask& m, Metadata extra = {}) {
  Metadata meta{{"mask_kind", mask_kind_name(m.kind)}, {"descriptor", m.descriptor}};
  meta.insert(meta.end(), extra.begin(), extra.end());
  write_container(path, make_container(ContainerKind::mask, m.grid, std::move(meta)));
}

inline SamplingMask read_mask(const std::filesystem::path& path) {
  const auto c = read_container(path);
  expect_kind(c, ContainerKind::mask);
  if (c.shape.size() != 2) throw FormatError("mask must be [H,W], got " + shape_string(c.shape));
  auto grid = container_tensor<std::uint8_t>(c);
  for (auto v : grid.data())
    if (v > 1) throw FormatError("mask entries must be 0 or 1");
  MaskKind kind = MaskKind::omega;
  if (const auto* k = find_meta(c.metadata, "mask_kind")) {
    if (*k == "theta") kind = MaskKind::theta;
    else if (*k == "lambda") kind = MaskKind::lambda;
  }
  const auto* d = find_meta(c.metadata, "descriptor");
  return SamplingMask(std::move(grid), kind, d ? *d : std::string());
}

template <class T>
void write_image(const std::filesystem::path& path, const ComplexTensor<T>& x, Metadata meta = {}) {
  write_container(path, make_container(ContainerKind::image, x, std::move(meta)));
}

inline ComplexTensor<double> read_image(const std::filesystem::path& path, Metadata* meta = nullptr) {
  const auto c = read_container(path);
  expect_kind(c, ContainerKind::image);
  if (meta) *meta = c.metadata;
  return container_complex<double>(c);
}

// ---------------------------------------------------------------------------
// key=value configuration

struct ConfigField {
  std::string key;
  std::string help;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

namespace detail {

inline ConfigField real_field(std::string key, std::string help, double& v) {
  return {key, std::move(help), [&v] { return exact(v); }, [&v, key](const std::string& s) { v = parse_double(s, key); }};
}
template <class U>
ConfigField uint_field(std::string key, std::string help, U& v) {
  return {key, std::move(help), [&v] { return std::to_string(v); },
          [&v, key](const std::string& s) { v = static_cast<U>(parse_uint(s, key)); }};
}
inline ConfigField bool_field(std::string key, std::string help, bool& v) {
  return {key, std::move(help), [&v] { return std::string(v ? "true" : "false"); },
          [&v, key](const std::string& s) { v = parse_bool(s, key); }};
}

}  // namespace detail

/// Settable fields of a training configuration, keyed by field name. The
/// returned accessors refer into `c`.
inline std::vector<ConfigField> config_fields(TrainConfig& c) {
  using namespace detail;
  auto& p = c.partition;
  return {
      real_field("learning_rate", "Adam step size", c.learning_rate),
      uint_field("n_epochs", "passes over the training set", c.n_epochs),
      uint_field("batch_size", "slices per step (only 1)", c.batch_size),
      real_field("adam_beta1", "", c.adam_beta1),
      real_field("adam_beta2", "", c.adam_beta2),
      real_field("adam_epsilon", "", c.adam_epsilon),
      {"precision", "float32|float64", [&c] { return std::string(precision_name(c.precision)); },
       [&c](const std::string& s) { c.precision = parse_precision(s); }},
      {"mode", "ssdu|supervised_kspace|supervised_image", [&c] { return std::string(mode_name(c.mode)); },
       [&c](const std::string& s) { c.mode = parse_mode(s); }},
      real_field("rho", "loss share of acquired samples", p.rho),
      {"scheme", "gaussian|uniform", [&p] { return std::string(scheme_name(p.scheme)); },
       [&p](const std::string& s) { p.scheme = parse_scheme(s); }},
      real_field("gaussian_std_fraction", "", p.gaussian_std_fraction),
      uint_field("center_keep_rows", "", p.center_keep_rows),
      uint_field("center_keep_cols", "", p.center_keep_cols),
      real_field("overlap_fraction", "", p.overlap_fraction),
      bool_field("identical_sets", "theta = lambda = omega", p.identical_sets),
      uint_field("per_slice_seed_base", "", p.per_slice_seed_base),
      uint_field("n_unrolls", "", c.unroll.n_unrolls),
      uint_field("n_cg_iterations", "", c.unroll.dc.n_cg_iterations),
      real_field("mu", "initial penalty", c.unroll.dc.mu),
      real_field("residual_tol", "", c.unroll.dc.residual_tol),
      bool_field("freeze_mu", "", c.unroll.freeze_mu),
      uint_field("n_res_blocks", "", c.resnet.n_res_blocks),
      uint_field("n_channels", "", c.resnet.n_channels),
      uint_field("kernel_size", "", c.resnet.kernel_size),
      real_field("scale_c", "", c.resnet.scale_c),
      bool_field("io_bias", "", c.resnet.io_bias),
      bool_field("rb_bias", "", c.resnet.rb_bias),
      uint_field("seed", "weight init and shuffle seed", c.seed),
      bool_field("shuffle", "", c.shuffle),
  };
}

inline std::vector<ConfigField> dataset_fields(DatasetSpec& d, std::uint64_t& seed) {
  using namespace detail;
  auto& p = d.phantom;
  return {
      uint_field("n_slices", "", d.n_slices),
      uint_field("data_seed", "", seed),
      uint_field("rows", "", p.rows),
      uint_field("cols", "", p.cols),
      uint_field("n_coils", "", p.n_coils),
      real_field("noise_std", "per complex k-space sample", p.noise_std),
      bool_field("jitter", "per-slice phantom variation", d.jitter),
  };
}

inline std::vector<ConfigField> config_fields(ExperimentConfig& c) {
  using namespace detail;
  auto out = dataset_fields(c.data, c.data_seed);
  std::vector<ConfigField> more{
      uint_field("n_train", "", c.n_train),
      uint_field("n_val", "", c.n_val),
      uint_field("n_test", "", c.n_test),
      {"pattern", "equispaced|sheared", [&c] { return std::string(c.pattern == PatternKind::equispaced ? "equispaced" : "sheared"); },
       [&c](const std::string& s) { c.pattern = parse_pattern(s); }},
      uint_field("R", "acceleration", c.R),
      uint_field("acs_lines", "", c.acs_lines),
      uint_field("acs_rows", "", c.acs_rows),
      uint_field("acs_cols", "", c.acs_cols),
      uint_field("cg_sense_iterations", "", c.cg_sense_iterations),
      real_field("cg_sense_l2", "", c.cg_sense_l2),
  };
  out.insert(out.end(), more.begin(), more.end());
  auto train = config_fields(c.train);
  out.insert(out.end(), train.begin(), train.end());
  return out;
}

inline std::string format_config(const std::vector<ConfigField>& fields) {
  std::string out;
  for (const auto& f : fields) out += f.key + "=" + f.get() + "\n";
  return out;
}

/// Lines "key = value"; '#' starts a comment. Unknown keys are errors.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t pos = 0, line_no = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
  };
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(line_no) + ": expected key=value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

inline void apply_config(const std::vector<ConfigField>& fields, const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [k, v] : kv) {
    auto it = std::find_if(fields.begin(), fields.end(), [&](const ConfigField& f) { return f.key == k; });
    if (it == fields.end()) throw UsageError("unknown config key '" + k + "'");
    it->set(v);
  }
}

inline TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  apply_config(config_fields(c), parse_config_text(text));
  return c;
}

inline std::string format_train_config(TrainConfig c) { return format_config(config_fields(c)); }

// ---------------------------------------------------------------------------
// checkpoints

inline constexpr char kCheckpointMagic[8] = {'S', 'S', 'D', 'U', 'C', 'K', 'P', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Layout: magic | u16 version | string config | u32 count | per tensor:
/// string name | u8 dtype | u32 rank | u64 extents | payload. Strings are
/// u32 length + bytes.
template <class Real>
std::vector<std::uint8_t> encode_checkpoint(const TrainConfig& cfg, const ParamStore<Real>& params) {
  detail::Writer w;
  w.put_bytes(kCheckpointMagic, 8);
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put_string(format_train_config(cfg));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    w.put_string(e.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(dtype_of<Real>::value));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.value.rank()));
    for (auto x : e.value.shape()) w.put<std::uint64_t>(x);
    w.put_bytes(e.value.raw(), e.value.size() * sizeof(Real));
  }
  return w.bytes();
}

template <class Real>
void save_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg, const ParamStore<Real>& params) {
  const auto b = encode_checkpoint(cfg, params);
  write_file(path, b.data(), b.size());
}

struct Checkpoint {
  TrainConfig config;
  DType dtype = DType::float32;
  std::vector<std::pair<std::string, Tensor<double>>> tensors;  // widened; float32 converts exactly
};

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what = "checkpoint") {
  detail::Reader r(bytes, what);
  if (std::memcmp(r.take(8), kCheckpointMagic, 8) != 0) throw FormatError(what + ": bad magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) throw FormatError(what + ": unsupported format version " + std::to_string(version));
  Checkpoint ck;
  try {
    ck.config = parse_train_config(r.get_string());
  } catch (const UsageError& e) {
    throw FormatError(what + ": " + e.what());
  }
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.get_string();
    const auto dtype = detail::checked_dtype(r.get<std::uint8_t>());
    if (dtype != DType::float32 && dtype != DType::float64) throw FormatError(what + ": tensor '" + name + "' is not real");
    if (i == 0) ck.dtype = dtype;
    if (dtype != ck.dtype) throw FormatError(what + ": mixed tensor precisions");
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError(what + ": rank too large");
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.get<std::uint64_t>());
    Tensor<double> t(shape);
    const auto* p = r.take(t.size() * dtype_size(dtype));
    for (std::size_t k = 0; k < t.size(); ++k) {
      if (dtype == DType::float32) {
        float f;
        std::memcpy(&f, p + 4 * k, 4);
        t[k] = f;
      } else {
        std::memcpy(&t[k], p + 8 * k, 8);
      }
    }
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.at_end()) throw FormatError(what + ": trailing bytes");
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path), path.string()); }

/// Parameters for the checkpoint's architecture with stored values; names and
/// shapes must match the configuration exactly.
template <class Real>
ParamStore<Real> checkpoint_params(const Checkpoint& ck) {
  auto params = init_params<Real>(ck.config.resnet, ck.config.unroll, ck.config.seed);
  if (params.size() != ck.tensors.size())
    throw FormatError("checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, architecture needs " +
                      std::to_string(params.size()));
  for (const auto& [name, t] : ck.tensors) {
    if (!params.contains(name)) throw FormatError("checkpoint tensor '" + name + "' not in architecture");
    auto& v = params.value(name);
    if (v.shape() != t.shape())
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                        shape_string(v.shape()));
    for (std::size_t i = 0; i < t.size(); ++i) v[i] = static_cast<Real>(t[i]);
  }
  return params;
}

// ---------------------------------------------------------------------------
// CSV and previews

inline std::string loss_history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,mean_train_loss,val_loss\n";
  for (const auto& r : history) out += std::to_string(r.epoch) + "," + exact(r.mean_train_loss) + "," + exact(r.val_loss) + "\n";
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

/// Rows stable-sorted by (slice id, method). NMSE is the squared-norm ratio;
/// a NaN wall time (not measured) is written as an empty field.
inline std::string metrics_csv(std::vector<MetricsRow> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const MetricsRow& a, const MetricsRow& b) {
    return std::tie(a.slice_id, a.method) < std::tie(b.slice_id, b.method);
  });
  std::string out = "slice_id,method,R,rho,scheme,overlap,nmse_squared,ssim,wall_time_s,ssim_params\n";
  for (const auto& r : rows) {
    out += csv_field(r.slice_id) + "," + csv_field(r.method) + "," + std::to_string(r.R) + "," + exact(r.rho) + "," +
           csv_field(r.scheme) + "," + csv_field(r.overlap) + "," + exact(r.nmse) + "," + exact(r.ssim) + "," +
           (std::isnan(r.wall_time) ? std::string() : exact(r.wall_time)) + "," + csv_field(r.ssim_params) + "\n";
  }
  return out;
}

/// 8-bit binary greymap of |x|, linearly windowed to [0, 99.5th percentile].
inline std::string pgm_preview(const ComplexTensor<double>& x) {
  if (x.rank() != 2) throw DimensionError("preview expects [H,W], got " + shape_string(x.shape()));
  const auto mag = magnitude(x);
  std::vector<double> sorted(mag.data().begin(), mag.data().end());
  double top = 0;
  if (!sorted.empty()) {
    const std::size_t k = std::min(sorted.size() - 1, static_cast<std::size_t>(std::ceil(0.995 * static_cast<double>(sorted.size()))) - 1);
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    top = sorted[k];
  }
  std::string out = "P5\n" + std::to_string(x.extent(1)) + " " + std::to_string(x.extent(0)) + "\n255\n";
  for (double v : mag.data()) {
    const double t = top > 0 ? std::clamp(v / top, 0.0, 1.0) : 0.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t))));
  }
  return out;
}

}  // namespace ssdu
