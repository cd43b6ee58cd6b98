#include "jembed/mgt1.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "jembed/error.hpp"

namespace mg::mgt1 {

namespace {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode(const Tensor& t, DType dtype) {
  const Shape& shape = t.shape();
  if (shape.size() > 255) throw ShapeError("mgt1: more than 255 dimensions");
  std::vector<std::uint8_t> out{'M', 'G', 'T', '1'};
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(shape.size()));
  for (std::size_t e : shape) {
    if (e > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("mgt1: extent exceeds u32");
    put_le(out, static_cast<std::uint32_t>(e));
  }
  const std::size_t width = dtype == DType::f64 ? 8 : 4;
  out.reserve(out.size() + t.numel() * width);
  for (double v : t.data()) {
    if (dtype == DType::f64) {
      put_le(out, std::bit_cast<std::uint64_t>(v));
    } else {
      put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return out;
}

Tensor decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), "MGT1", 4) != 0) {
    throw IoError("mgt1: bad magic");
  }
  const std::uint8_t code = bytes[4];
  if (code > 1) throw IoError("mgt1: unknown dtype code " + std::to_string(code));
  const std::size_t ndim = bytes[5];
  std::size_t pos = 6;
  if (bytes.size() < pos + 4 * ndim) throw IoError("mgt1: truncated header");
  Shape shape(ndim);
  for (std::size_t d = 0; d < ndim; ++d, pos += 4) {
    shape[d] = get_le<std::uint32_t>(bytes.data() + pos);
    if (shape[d] == 0) throw IoError("mgt1: zero extent");
  }
  if (ndim == 0) shape = {1};
  const std::size_t n = shape_numel(shape);
  const std::size_t width = code == 0 ? 8 : 4;
  if (bytes.size() != pos + n * width) {
    throw IoError("mgt1: payload size " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                  std::to_string(n * width));
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i, pos += width) {
    data[i] = code == 0 ? std::bit_cast<double>(get_le<std::uint64_t>(bytes.data() + pos))
                        : static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(bytes.data() + pos)));
  }
  return Tensor(std::move(shape), std::move(data));
}

void write(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  const auto bytes = encode(t, dtype);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("mgt1: cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("mgt1: write failed for " + path.string());
}

Tensor read(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("mgt1: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace mg::mgt1
