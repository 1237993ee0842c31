// volume_io.hpp - volume file I/O: raw-f32 (SREGVOL1) and NIfTI-1 (.nii).
//
// raw-f32 layout (fixed, little-endian):
//   bytes  0-7   magic "SREGVOL1"
//   bytes  8-19  uint32 dims[3]
//   bytes 20-31  float32 spacing[3] (mm)
//   bytes 32-43  float32 origin[3] (mm)
//   bytes 44-47  reserved (zero)
//   payload      float32, row-major, x fastest
//
// NIfTI-1 support covers single-file .nii (magic "n+1") and header/image pairs
// (magic "ni1" with a sibling .img), datatypes uint8/int16/float32/float64,
// dim/pixdim/scl_slope/scl_inter, with byte-swapped headers handled.  Writing
// always produces single-file float32.  Values are scaled by scl_slope/scl_inter
// on load when scl_slope is nonzero; non-finite values are replaced with 0.
#pragma once

#include <stdexcept>
#include <string>

#include "symreg/volume.hpp"

namespace symreg {

enum class VolumeFormat { auto_detect, raw_f32, nifti1 };

class VolumeIoError : public std::runtime_error {
  public:
    enum class Kind { malformed_header, unsupported_datatype, truncated_payload, io_failure };

    VolumeIoError(Kind k, const std::string &msg) : std::runtime_error(msg), kind(k) {}
    Kind kind;
};

ScalarVolume load_volume(const std::string &path, VolumeFormat format = VolumeFormat::auto_detect);
void save_volume(const ScalarVolume &v, const std::string &path,
                 VolumeFormat format = VolumeFormat::auto_detect);

// Picks a format from a file name extension (.nii -> nifti1, otherwise raw_f32).
VolumeFormat format_from_extension(const std::string &path);

} // namespace symreg
