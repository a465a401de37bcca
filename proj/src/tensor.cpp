#include "textscene/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "textscene/error.hpp"

namespace textscene {

static_assert(std::endian::native == std::endian::little,
              "TSR1 I/O assumes a little-endian host");

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {
  for (auto d : shape) {
    if (d == 0) throw UsageError("tensor dimensions must be positive, got " + shape_string(shape));
  }
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  for (auto d : shape) {
    if (d == 0) throw UsageError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (data.size() != shape_size(shape)) {
    throw UsageError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_string(shape));
  }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (shape.size() <= 1) return 1;
  if (shape.size() == 2) return shape[0];
  throw UsageError("matrix view requested for rank-" + std::to_string(shape.size()) + " tensor");
}

std::size_t Tensor::cols() const {
  if (shape.empty()) return 1;
  if (shape.size() == 1) return shape[0];
  if (shape.size() == 2) return shape[1];
  throw UsageError("matrix view requested for rank-" + std::to_string(shape.size()) + " tensor");
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::validate(const std::string& what) const {
  if (data.size() != shape_size(shape)) {
    throw UsageError(what + ": data length does not match shape " + shape_string(shape));
  }
  if (has_grad() && grad.size() != data.size()) {
    throw UsageError(what + ": gradient length does not match shape " + shape_string(shape));
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw NumericalError(what + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

namespace {

constexpr char kMagic[4] = {'T', 'S', 'R', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw DataError("TSR1: truncated header");
  }
  return v;
}

}  // namespace

void write_tsr(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
  for (auto d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!out) throw DataError("TSR1: write failed");
}

Tensor read_tsr(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("TSR1: bad magic bytes");
  }
  const auto rank = get_u32(in);
  if (rank > 8) throw DataError("TSR1: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) {
    d = get_u32(in);
    if (d == 0) throw DataError("TSR1: zero dimension");
  }
  std::vector<double> data(shape_size(shape));
  if (!in.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(double)))) {
    throw DataError("TSR1: truncated payload for shape " + shape_string(shape));
  }
  return Tensor(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> encode_tsr(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tsr(os, t);
  const auto s = os.str();
  return {s.begin(), s.end()};
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  write_tsr(out, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  return read_tsr(in);
}

}  // namespace textscene
