#pragma once

// Little-endian binary records shared by every checkpoint format.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "pflow/errors.hpp"
#include "pflow/mlp.hpp"
#include "pflow/tensor.hpp"

namespace pflow::bin {

static_assert(std::endian::native == std::endian::little, "checkpoint code assumes a little-endian host");

inline void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
inline void write_u8(std::ostream& os, std::uint8_t v) { os.write(reinterpret_cast<const char*>(&v), 1); }
inline void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

inline void read_exact(std::istream& is, void* dst, std::size_t n) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw FormatError("checkpoint truncated");
}
inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v;
  read_exact(is, &v, sizeof v);
  return v;
}
inline std::uint8_t read_u8(std::istream& is) {
  std::uint8_t v;
  read_exact(is, &v, 1);
  return v;
}
inline double read_f64(std::istream& is) {
  double v;
  read_exact(is, &v, sizeof v);
  return v;
}

inline void write_magic(std::ostream& os, const char (&magic)[9], std::uint64_t version) {
  os.write(magic, 8);
  write_u64(os, version);
}

inline void expect_magic(std::istream& is, const char (&magic)[9], std::uint64_t version) {
  char got[8];
  read_exact(is, got, 8);
  if (std::memcmp(got, magic, 8) != 0) throw FormatError(std::string("not a ") + magic + " checkpoint");
  const auto v = read_u64(is);
  if (v != version) throw FormatError("unsupported checkpoint version " + std::to_string(v));
}

inline void write_tensor(std::ostream& os, const Tensor& t) {
  write_u64(os, t.rank());
  for (auto e : t.shape()) write_u64(os, e);
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline Tensor read_tensor(std::istream& is) {
  const auto rank = read_u64(is);
  if (rank == 0 || rank > 8) throw FormatError("bad tensor rank in checkpoint");
  Shape shape(rank);
  for (auto& e : shape) {
    e = read_u64(is);
    if (e == 0 || e > (1ULL << 32)) throw FormatError("bad tensor extent in checkpoint");
  }
  Tensor t(shape);
  read_exact(is, t.data(), t.size() * sizeof(double));
  return t;
}

inline void write_mlp(std::ostream& os, const Mlp& net) {
  write_u8(os, static_cast<std::uint8_t>(net.activation()));
  write_u64(os, net.widths().size());
  for (auto w : net.widths()) write_u64(os, w);
  for (std::size_t i = 0; i < net.weights().size(); ++i) {
    write_tensor(os, net.weights()[i].value);
    write_tensor(os, net.biases()[i].value);
  }
}

inline Mlp read_mlp(std::istream& is, const std::string& name) {
  const auto act = read_u8(is);
  if (act > 2) throw FormatError("bad activation tag in checkpoint");
  const auto n = read_u64(is);
  if (n < 2 || n > 64) throw FormatError("bad mlp depth in checkpoint");
  std::vector<std::size_t> widths(n);
  for (auto& w : widths) w = read_u64(is);
  std::vector<Tensor> weights, biases;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    weights.push_back(read_tensor(is));
    biases.push_back(read_tensor(is));
  }
  return Mlp(std::move(widths), static_cast<Activation>(act), std::move(weights), std::move(biases), name);
}

}  // namespace pflow::bin
