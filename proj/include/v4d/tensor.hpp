#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace v4d {

inline constexpr std::size_t kMaxRank = 6;

using Shape = std::vector<std::size_t>;

/// Thrown when a contract on shapes, ranks or arguments is violated.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown on malformed or incompatible files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of doubles, rank 1..6, every extent >= 1.
///
/// Value semantics: copies are deep. The public free functions never mutate
/// their inputs; mutable element access exists for kernels and optimizers that
/// own the tensor they write.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);

  std::size_t rank() const { return shape_.size(); }
  const Shape& shape() const { return shape_; }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const double* ptr() const { return data_.data(); }
  double* ptr() { return data_.data(); }

  double operator[](std::size_t flat) const { return data_[flat]; }
  double& operator[](std::size_t flat) { return data_[flat]; }

  std::size_t flat_index(std::span<const std::size_t> index) const;
  double at(std::span<const std::size_t> index) const { return data_[flat_index(index)]; }
  double at(std::initializer_list<std::size_t> index) const {
    return at(std::span<const std::size_t>(index.begin(), index.size()));
  }
  double& at(std::initializer_list<std::size_t> index) {
    return data_[flat_index(std::span<const std::size_t>(index.begin(), index.size()))];
  }

  std::vector<double> flatten() const { return data_; }

  /// Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const;

  /// Element-wise in-place helpers for owners of the tensor.
  void fill(double value);
  void add_inplace(const Tensor& other);
  void scale_inplace(double factor);

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor tensor_create(Shape shape, std::span<const double> data);

struct PadSpec {
  std::vector<std::pair<std::size_t, std::size_t>> amounts;
  double fill = 0.0;
};

Tensor pad(const Tensor& t, const PadSpec& spec);
Tensor slice_axis(const Tensor& t, std::size_t axis, std::size_t start, std::size_t len);

/// Concatenate along one axis; all other extents must agree.
Tensor concat_axis(std::span<const Tensor> parts, std::size_t axis);

double max_abs_diff(const Tensor& a, const Tensor& b);

// Binary tensor record: "V4DT", u8 rank, rank x u32 LE extents, f64 LE payload.
void write_tensor_record(std::ostream& out, const Tensor& t);
Tensor read_tensor_record(std::istream& in);

// Little-endian primitives shared by the file formats.
void write_u8(std::ostream& out, std::uint8_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
void write_string(std::ostream& out, const std::string& s);
std::uint8_t read_u8(std::istream& in);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);
std::string read_string(std::istream& in);
void write_magic(std::ostream& out, const char (&magic)[5]);
void expect_magic(std::istream& in, const char (&magic)[5]);

}  // namespace v4d
