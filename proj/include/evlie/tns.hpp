#pragma once

#include <string>
#include <vector>

#include "evlie/tensor.hpp"

namespace evlie {

// TNS1 tensor container: one UTF-8 JSON header line of the form
// {"shape":[...],"dtype":"f32"} ending in '\n', followed by the
// row-major little-endian f32 payload.
std::vector<std::byte> serialize_tns(const std::vector<int64_t>& shape,
                                     const std::vector<double>& values);
void parse_tns(const std::vector<std::byte>& bytes,
               std::vector<int64_t>& shape, std::vector<double>& values);

void save_tns(const std::string& path, const Tensor& t);
Tensor load_tns(const std::string& path, bool requires_grad = false);

} // namespace evlie
