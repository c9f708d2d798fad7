#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "evs/nn.hpp"
#include "evs/tensor.hpp"

namespace evs {

// Checkpoint layout (little-endian):
//   magic "ckpt1"
//   u32 tensor_count
//   per tensor: u32 name_len, name bytes, u32 rank, u64 extent[rank],
//               u8 dtype (0 = f32, 1 = f64), raw values
inline constexpr char kCheckpointMagic[5] = {'c', 'k', 'p', 't', '1'};

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  tensor_check(static_cast<bool>(is), "checkpoint truncated while reading " + what);
  return v;
}

template <typename S>
constexpr std::uint8_t dtype_tag() {
  if constexpr (std::is_same_v<S, float>) return 0;
  else return 1;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const ParamStore<S>& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  tensor_check(static_cast<bool>(os), "cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(store.size()));
  for (const auto& p : store) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Shape& sh = p.tensor.shape();
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(sh.size()));
    for (auto e : sh) detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(e));
    detail::write_pod<std::uint8_t>(os, detail::dtype_tag<S>());
    os.write(reinterpret_cast<const char*>(p.tensor.data()),
             static_cast<std::streamsize>(sizeof(S) * p.tensor.numel()));
  }
  tensor_check(static_cast<bool>(os), "write failure while saving checkpoint: " + path);
}

// Loads values into an already-built store; every tensor in the file must
// match an existing parameter by name, shape, and dtype.
template <typename S>
void load_checkpoint(ParamStore<S>& store, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  tensor_check(static_cast<bool>(is), "cannot open checkpoint: " + path);
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  tensor_check(static_cast<bool>(is) && std::memcmp(magic, kCheckpointMagic, sizeof(magic)) == 0,
               "not a checkpoint file (bad magic): " + path);
  const auto count = detail::read_pod<std::uint32_t>(is, "tensor count");
  tensor_check(count == store.size(),
               "checkpoint holds " + std::to_string(count) + " tensors, model has " +
                   std::to_string(store.size()));
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = detail::read_pod<std::uint32_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    tensor_check(static_cast<bool>(is), "checkpoint truncated while reading name");
    const auto rank = detail::read_pod<std::uint32_t>(is, "rank of " + name);
    Shape sh(rank);
    for (auto& e : sh)
      e = static_cast<std::int64_t>(detail::read_pod<std::uint64_t>(is, "extent of " + name));
    const auto tag = detail::read_pod<std::uint8_t>(is, "dtype of " + name);
    tensor_check(tag == detail::dtype_tag<S>(), "dtype mismatch for tensor: " + name);

    Param<S>* p = store.find(name);
    tensor_check(p != nullptr, "checkpoint tensor not in model: " + name);
    tensor_check(p->tensor.shape() == sh,
                 "shape mismatch for " + name + ": file " + shape_str(sh) + ", model " +
                     shape_str(p->tensor.shape()));
    is.read(reinterpret_cast<char*>(p->tensor.node()->value.data()),
            static_cast<std::streamsize>(sizeof(S) * p->tensor.numel()));
    tensor_check(static_cast<bool>(is), "checkpoint truncated while reading values of " + name);
  }
}

}  // namespace evs
