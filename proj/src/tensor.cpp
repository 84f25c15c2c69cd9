#include "v4d/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace v4d {

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > kMaxRank) {
    throw ShapeError("tensor rank must be in 1.." + std::to_string(kMaxRank) + ", got " +
                     std::to_string(shape.size()));
  }
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
  }
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("length mismatch: shape " + shape_str(shape_) + " needs " +
                     std::to_string(shape_size(shape_)) + " values, got " + std::to_string(data_.size()));
  }
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  check_shape(shape);
  std::vector<double> data(shape_size(shape), value);
  return Tensor(std::move(shape), std::move(data));
}

std::size_t Tensor::flat_index(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("index rank " + std::to_string(index.size()) + " != tensor rank " +
                     std::to_string(shape_.size()));
  }
  std::size_t flat = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= shape_[i]) throw ShapeError("index out of range on axis " + std::to_string(i));
    flat = flat * shape_[i] + index[i];
  }
  return flat;
}

Tensor Tensor::reshaped(Shape shape) const {
  check_shape(shape);
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::add_inplace(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ShapeError("add: shape " + shape_str(other.shape_) + " != " + shape_str(shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::scale_inplace(double factor) {
  for (double& v : data_) v *= factor;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor tensor_create(Shape shape, std::span<const double> data) {
  return Tensor(std::move(shape), std::vector<double>(data.begin(), data.end()));
}

Tensor pad(const Tensor& t, const PadSpec& spec) {
  if (spec.amounts.size() != t.rank()) {
    throw ShapeError("pad: spec rank " + std::to_string(spec.amounts.size()) + " != tensor rank " +
                     std::to_string(t.rank()));
  }
  Shape out_shape = t.shape();
  for (std::size_t a = 0; a < t.rank(); ++a) out_shape[a] += spec.amounts[a].first + spec.amounts[a].second;
  Tensor out = Tensor::filled(out_shape, spec.fill);

  const auto in_strides = strides_of(t.shape());
  const auto out_strides = strides_of(out_shape);
  std::size_t offset = 0;
  for (std::size_t a = 0; a < t.rank(); ++a) offset += spec.amounts[a].first * out_strides[a];

  // Copy contiguous rows of the last axis.
  const std::size_t row = t.shape().back();
  const std::size_t rows = t.size() / row;
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t rem = r * row;
    std::size_t dst = offset;
    for (std::size_t a = 0; a + 1 < t.rank(); ++a) {
      dst += (rem / in_strides[a]) * out_strides[a];
      rem %= in_strides[a];
    }
    std::copy_n(t.ptr() + r * row, row, out.ptr() + dst);
  }
  return out;
}

Tensor slice_axis(const Tensor& t, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= t.rank()) throw ShapeError("slice_axis: axis out of range");
  if (len == 0 || start + len > t.extent(axis)) {
    throw ShapeError("slice_axis: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                     ") out of range for extent " + std::to_string(t.extent(axis)));
  }
  Shape out_shape = t.shape();
  out_shape[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= t.extent(a);
  for (std::size_t a = axis + 1; a < t.rank(); ++a) inner *= t.extent(a);
  std::vector<double> data(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = t.ptr() + (o * t.extent(axis) + start) * inner;
    std::copy_n(src, len * inner, data.data() + o * len * inner);
  }
  return Tensor(std::move(out_shape), std::move(data));
}

Tensor concat_axis(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t a = 0; a < ref.size(); ++a) {
      if (a != axis && p.extent(a) != ref[a]) {
        throw ShapeError("concat: extent mismatch " + shape_str(p.shape()) + " vs " + shape_str(ref));
      }
    }
    out_shape[axis] += p.extent(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= ref[a];
  for (std::size_t a = axis + 1; a < ref.size(); ++a) inner *= ref[a];
  std::vector<double> data(shape_size(out_shape));
  const std::size_t out_row = out_shape[axis] * inner;
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    const std::size_t row = p.extent(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(p.ptr() + o * row, row, data.data() + o * out_row + col);
    col += row;
  }
  return Tensor(std::move(out_shape), std::move(data));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// --- little-endian IO -------------------------------------------------------

namespace {

template <typename U>
void write_le(std::ostream& out, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U read_le(std::istream& in) {
  unsigned char buf[sizeof(U)];
  in.read(reinterpret_cast<char*>(buf), sizeof(U));
  if (!in) throw FormatError("unexpected end of file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u8(std::ostream& out, std::uint8_t v) { write_le(out, v); }
void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }
std::uint8_t read_u8(std::istream& in) { return read_le<std::uint8_t>(in); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return read_le<std::uint64_t>(in); }
double read_f64(std::istream& in) { return std::bit_cast<double>(read_le<std::uint64_t>(in)); }

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const std::uint32_t n = read_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw FormatError("unexpected end of file in string");
  return s;
}

void write_magic(std::ostream& out, const char (&magic)[5]) { out.write(magic, 4); }

void expect_magic(std::istream& in, const char (&magic)[5]) {
  char buf[4] = {};
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0) {
    throw FormatError(std::string("bad magic, expected ") + magic);
  }
}

void write_tensor_record(std::ostream& out, const Tensor& t) {
  write_magic(out, "V4DT");
  write_u8(out, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) write_u32(out, static_cast<std::uint32_t>(e));
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  } else {
    for (double v : t.data()) write_f64(out, v);
  }
}

Tensor read_tensor_record(std::istream& in) {
  expect_magic(in, "V4DT");
  const std::size_t rank = read_u8(in);
  if (rank == 0 || rank > kMaxRank) throw FormatError("tensor record: bad rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) {
    e = read_u32(in);
    if (e == 0) throw FormatError("tensor record: zero extent");
  }
  std::vector<double> data(shape_size(shape));
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw FormatError("tensor record: truncated payload");
  } else {
    for (double& v : data) v = read_f64(in);
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace v4d
