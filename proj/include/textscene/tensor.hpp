#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace textscene {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Rank 0 is a scalar, rank 1 a vector and
// rank 2 a matrix; the autodiff ops only ever see ranks 0-2.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  // Empty until a backward pass writes into it; same length as data after.
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  // Matrix view of ranks 0-2: scalar -> 1x1, vector {d} -> 1xd.
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  bool has_grad() const { return !grad.empty(); }
  void zero_grad() { grad.assign(data.size(), 0.0); }
  void clear_grad() { grad.clear(); }

  bool all_finite() const;
  // Throws NumericalError naming `what` if any value is NaN or infinite.
  void validate(const std::string& what = "tensor") const;
};

// TSR1 encoding: magic "TSR1", u32 rank, u32 dims..., little-endian f64 data.
void write_tsr(std::ostream& out, const Tensor& t);
Tensor read_tsr(std::istream& in);
std::vector<std::uint8_t> encode_tsr(const Tensor& t);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace textscene
