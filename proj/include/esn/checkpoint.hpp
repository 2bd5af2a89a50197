#pragma once

#include "esn/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace esn {

// Flat named-tensor container: a text header listing
//   <name> <dtype> <b> <c> <h> <w> <byte offset>
// per entry, then raw little-endian payload. Round-trips bit-exactly.
template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
void save_checkpoint(const std::string& path, const NamedTensors<T>& tensors);

// Loads into freshly allocated tensors; dtype in the file must match T.
template <typename T>
NamedTensors<T> load_checkpoint(const std::string& path);

// Copies values from `src` into same-named tensors of `dst`; every dst name
// must be present with a matching shape.
template <typename T>
void assign_named(NamedTensors<T>& dst, const NamedTensors<T>& src);

extern template void save_checkpoint(const std::string&, const NamedTensors<float>&);
extern template NamedTensors<float> load_checkpoint(const std::string&);

}  // namespace esn
