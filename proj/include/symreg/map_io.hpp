// map_io.hpp - deformation map file I/O (SREGMAP1).
//
// Layout, little-endian:
//   bytes  0-7   magic "SREGMAP1"
//   bytes  8-19  uint32 dims[3]
//   bytes 20-31  float32 spacing[3] (mm)
//   bytes 32-43  float32 origin[3] (mm)
//   bytes 44-47  reserved (zero)
//   payload A    q_total: 3 x float32 per voxel, row-major, x fastest
//   payload B    jac_total: 9 x float32 per voxel (row-major matrices)
//   trailer      UTF-8 JSON with the shell records
//   last 4 bytes uint32 trailer byte length
#pragma once

#include <string>

#include "symreg/flow.hpp"

namespace symreg {

void save_map(const DeformationMap &map, const std::string &path);
DeformationMap load_map(const std::string &path);

} // namespace symreg
