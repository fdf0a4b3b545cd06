#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "ctxrnn/forecaster.hpp"

namespace ctxrnn {

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Binary layout, all integers and floats little-endian:
///   "CTXR" | u32 version | str config text | u32 n, n × str series name |
///   u32 K, K × u64 context-batch id | u32 block count |
///   blocks: str name ("member<i>.<param>") | u32 rank | rank × u64 dim |
///           numel × f64
/// where str is u32 length followed by the bytes.
void write_model(std::ostream& out, const Model& model);
Model read_model(std::istream& in);

void save_model(const std::string& path, const Model& model);
Model load_model(const std::string& path);

}  // namespace ctxrnn
