#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "phasedeploy/learner.hpp"

namespace phasedeploy::rl {

// Binary checkpoint format, little-endian:
//
//   magic   "PDCK"            4 bytes
//   version u32               kCheckpointVersion
//   then six sections, each   tag[4] | u64 payload length | payload
//     HEAD  step i64, lr_position i64
//     SPEC  env spec hash u64
//     POLI  network: u32 layer count, i32 widths..., u64 n, f64 params[n]
//     CRIT  network (same layout)
//     OPTM  policy Adam then critic Adam: u64 n, f64 m[n], f64 v[n], i64 t
//     RNGS  key u64, counter u64
//   optional AUDT section: u64 count, then per entry i64 step, str action, str detail
//   (str = u64 length + bytes)
//
// Files are stable only within one version tag.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ck, std::ostream& out);
// Throws LoadError naming the section or field that failed.
Checkpoint load_checkpoint(std::istream& in);

std::vector<unsigned char> checkpoint_bytes(const Checkpoint& ck);
Checkpoint checkpoint_from_bytes(const std::vector<unsigned char>& bytes);

void save_checkpoint_file(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint_file(const std::string& path);

}  // namespace phasedeploy::rl
