// volume_io.cpp - raw-f32 and NIfTI-1 readers/writers.
#include "symreg/volume_io.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace symreg {

namespace {

constexpr char kRawMagic[8] = {'S', 'R', 'E', 'G', 'V', 'O', 'L', '1'};
constexpr size_t kRawHeaderBytes = 48;
constexpr int kNiftiHeaderBytes = 348;

template <typename T>
T read_le(const unsigned char *p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v; // host is little-endian; byte-swapped NIfTI handled separately
}

template <typename T>
void write_le(std::vector<unsigned char> &buf, size_t off, T v) {
    std::memcpy(buf.data() + off, &v, sizeof(T));
}

template <typename T>
T byteswap(T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
}

void sanitize(ScalarVolume &v) {
    for (double &x : v.data)
        if (!std::isfinite(x)) x = 0.0;
}

ScalarVolume load_raw(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw VolumeIoError(VolumeIoError::Kind::io_failure, "cannot open " + path);

    std::array<unsigned char, kRawHeaderBytes> hdr{};
    f.read(reinterpret_cast<char *>(hdr.data()), kRawHeaderBytes);
    if (f.gcount() != static_cast<std::streamsize>(kRawHeaderBytes))
        throw VolumeIoError(VolumeIoError::Kind::malformed_header, path + ": raw-f32 header too short");
    if (std::memcmp(hdr.data(), kRawMagic, 8) != 0)
        throw VolumeIoError(VolumeIoError::Kind::malformed_header, path + ": bad raw-f32 magic");

    GridGeometry g;
    for (int a = 0; a < 3; ++a) {
        const uint32_t d = read_le<uint32_t>(hdr.data() + 8 + 4 * a);
        if (d < 2 || d > (1u << 24))
            throw VolumeIoError(VolumeIoError::Kind::malformed_header,
                                path + ": raw-f32 dims out of range");
        g.dims[a] = static_cast<int>(d);
        g.spacing[a] = read_le<float>(hdr.data() + 20 + 4 * a);
        g.origin[a] = read_le<float>(hdr.data() + 32 + 4 * a);
        if (!(g.spacing[a] > 0.0f) || !std::isfinite(g.spacing[a]))
            throw VolumeIoError(VolumeIoError::Kind::malformed_header,
                                path + ": raw-f32 spacing must be positive");
    }

    ScalarVolume v(g);
    const size_t n = g.voxel_count();
    std::vector<float> payload(n);
    f.read(reinterpret_cast<char *>(payload.data()), static_cast<std::streamsize>(n * 4));
    if (f.gcount() != static_cast<std::streamsize>(n * 4))
        throw VolumeIoError(VolumeIoError::Kind::truncated_payload, path + ": raw-f32 payload truncated");
    for (size_t i = 0; i < n; ++i) v.data[i] = payload[i];
    sanitize(v);
    return v;
}

void save_raw(const ScalarVolume &v, const std::string &path) {
    std::vector<unsigned char> hdr(kRawHeaderBytes, 0);
    std::memcpy(hdr.data(), kRawMagic, 8);
    for (int a = 0; a < 3; ++a) {
        write_le<uint32_t>(hdr, 8 + 4 * static_cast<size_t>(a), static_cast<uint32_t>(v.geometry.dims[a]));
        write_le<float>(hdr, 20 + 4 * static_cast<size_t>(a), static_cast<float>(v.geometry.spacing[a]));
        write_le<float>(hdr, 32 + 4 * static_cast<size_t>(a), static_cast<float>(v.geometry.origin[a]));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw VolumeIoError(VolumeIoError::Kind::io_failure, "cannot create " + path);
    f.write(reinterpret_cast<const char *>(hdr.data()), static_cast<std::streamsize>(hdr.size()));
    std::vector<float> payload(v.data.size());
    for (size_t i = 0; i < v.data.size(); ++i) payload[i] = static_cast<float>(v.data[i]);
    f.write(reinterpret_cast<const char *>(payload.data()), static_cast<std::streamsize>(payload.size() * 4));
    if (!f) throw VolumeIoError(VolumeIoError::Kind::io_failure, "write failed for " + path);
}

// NIfTI-1 field offsets within the 348-byte header.
struct NiftiHeader {
    int32_t sizeof_hdr;
    int16_t dim[8];
    int16_t datatype;
    int16_t bitpix;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    char magic[4];
    bool swapped;
};

NiftiHeader parse_nifti_header(const unsigned char *h, const std::string &path) {
    NiftiHeader out{};
    out.sizeof_hdr = read_le<int32_t>(h + 0);
    out.swapped = false;
    if (out.sizeof_hdr != kNiftiHeaderBytes) {
        if (byteswap(out.sizeof_hdr) == kNiftiHeaderBytes) {
            out.swapped = true;
        } else {
            throw VolumeIoError(VolumeIoError::Kind::malformed_header,
                                path + ": not a NIfTI-1 header (sizeof_hdr)");
        }
    }
    auto rd16 = [&](int off) {
        int16_t v = read_le<int16_t>(h + off);
        return out.swapped ? byteswap(v) : v;
    };
    auto rdf = [&](int off) {
        float v = read_le<float>(h + off);
        return out.swapped ? byteswap(v) : v;
    };
    for (int i = 0; i < 8; ++i) out.dim[i] = rd16(40 + 2 * i);
    out.datatype = rd16(70);
    out.bitpix = rd16(72);
    for (int i = 0; i < 8; ++i) out.pixdim[i] = rdf(76 + 4 * i);
    out.vox_offset = rdf(108);
    out.scl_slope = rdf(112);
    out.scl_inter = rdf(116);
    std::memcpy(out.magic, h + 344, 4);
    if (std::memcmp(out.magic, "n+1", 4) != 0 && std::memcmp(out.magic, "ni1", 4) != 0)
        throw VolumeIoError(VolumeIoError::Kind::malformed_header, path + ": bad NIfTI-1 magic");
    return out;
}

ScalarVolume load_nifti(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw VolumeIoError(VolumeIoError::Kind::io_failure, "cannot open " + path);
    std::array<unsigned char, kNiftiHeaderBytes> raw{};
    f.read(reinterpret_cast<char *>(raw.data()), kNiftiHeaderBytes);
    if (f.gcount() != kNiftiHeaderBytes)
        throw VolumeIoError(VolumeIoError::Kind::malformed_header, path + ": NIfTI-1 header too short");
    const NiftiHeader hdr = parse_nifti_header(raw.data(), path);

    if (hdr.dim[0] < 3 || hdr.dim[0] > 7)
        throw VolumeIoError(VolumeIoError::Kind::malformed_header, path + ": unsupported dim[0]");
    for (int i = 4; i <= hdr.dim[0]; ++i)
        if (hdr.dim[i] > 1)
            throw VolumeIoError(VolumeIoError::Kind::malformed_header,
                                path + ": 4D+ volumes are not supported");

    GridGeometry g;
    for (int a = 0; a < 3; ++a) {
        if (hdr.dim[1 + a] < 2)
            throw VolumeIoError(VolumeIoError::Kind::malformed_header, path + ": dims must be >= 2");
        g.dims[a] = hdr.dim[1 + a];
        const float pd = hdr.pixdim[1 + a];
        g.spacing[a] = (std::isfinite(pd) && pd > 0.0f) ? std::fabs(pd) : 1.0;
        g.origin[a] = 0.0; // qform/sform spatial frames are out of scope
    }

    size_t bytes_per = 0;
    switch (hdr.datatype) {
        case 2:  bytes_per = 1; break; // uint8
        case 4:  bytes_per = 2; break; // int16
        case 16: bytes_per = 4; break; // float32
        case 64: bytes_per = 8; break; // float64
        default:
            throw VolumeIoError(VolumeIoError::Kind::unsupported_datatype,
                                path + ": unsupported NIfTI datatype " + std::to_string(hdr.datatype));
    }

    // "n+1": payload in this file at vox_offset.  "ni1": payload in sibling .img.
    std::ifstream img;
    std::ifstream *src = &f;
    size_t offset = 0;
    if (std::memcmp(hdr.magic, "n+1", 4) == 0) {
        offset = static_cast<size_t>(std::max(hdr.vox_offset, static_cast<float>(kNiftiHeaderBytes)));
    } else {
        std::string img_path = path;
        const size_t dot = img_path.rfind('.');
        if (dot != std::string::npos) img_path.resize(dot);
        img_path += ".img";
        img.open(img_path, std::ios::binary);
        if (!img)
            throw VolumeIoError(VolumeIoError::Kind::truncated_payload,
                                path + ": missing image file " + img_path);
        src = &img;
        offset = static_cast<size_t>(std::max(hdr.vox_offset, 0.0f));
    }

    const size_t n = g.voxel_count();
    std::vector<unsigned char> payload(n * bytes_per);
    src->seekg(static_cast<std::streamoff>(offset));
    src->read(reinterpret_cast<char *>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (src->gcount() != static_cast<std::streamsize>(payload.size()))
        throw VolumeIoError(VolumeIoError::Kind::truncated_payload, path + ": NIfTI payload truncated");

    ScalarVolume v(g);
    auto decode = [&](size_t i) -> double {
        const unsigned char *p = payload.data() + i * bytes_per;
        switch (hdr.datatype) {
            case 2: return static_cast<double>(*p);
            case 4: {
                int16_t s = read_le<int16_t>(p);
                if (hdr.swapped) s = byteswap(s);
                return s;
            }
            case 16: {
                float s = read_le<float>(p);
                if (hdr.swapped) s = byteswap(s);
                return s;
            }
            default: {
                double s = read_le<double>(p);
                if (hdr.swapped) s = byteswap(s);
                return s;
            }
        }
    };
    const bool scale = hdr.scl_slope != 0.0f;
    for (size_t i = 0; i < n; ++i) {
        double val = decode(i);
        if (scale) val = val * hdr.scl_slope + hdr.scl_inter;
        v.data[i] = val;
    }
    sanitize(v);
    return v;
}

void save_nifti(const ScalarVolume &v, const std::string &path) {
    std::vector<unsigned char> h(352, 0); // header + 4-byte extension flag
    write_le<int32_t>(h, 0, kNiftiHeaderBytes);
    write_le<int16_t>(h, 40, 3);
    for (int a = 0; a < 3; ++a)
        write_le<int16_t>(h, 42 + 2 * static_cast<size_t>(a), static_cast<int16_t>(v.geometry.dims[a]));
    for (int i = 4; i < 8; ++i) write_le<int16_t>(h, 40 + 2 * static_cast<size_t>(i), 1);
    write_le<int16_t>(h, 70, 16); // float32
    write_le<int16_t>(h, 72, 32);
    write_le<float>(h, 76, 1.0f); // qfac
    for (int a = 0; a < 3; ++a)
        write_le<float>(h, 80 + 4 * static_cast<size_t>(a), static_cast<float>(v.geometry.spacing[a]));
    write_le<float>(h, 108, 352.0f); // vox_offset
    write_le<float>(h, 112, 1.0f);   // scl_slope
    write_le<float>(h, 116, 0.0f);   // scl_inter
    h[123] = 2;                      // xyzt_units: mm
    std::memcpy(h.data() + 344, "n+1", 4);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw VolumeIoError(VolumeIoError::Kind::io_failure, "cannot create " + path);
    f.write(reinterpret_cast<const char *>(h.data()), static_cast<std::streamsize>(h.size()));
    std::vector<float> payload(v.data.size());
    for (size_t i = 0; i < v.data.size(); ++i) payload[i] = static_cast<float>(v.data[i]);
    f.write(reinterpret_cast<const char *>(payload.data()), static_cast<std::streamsize>(payload.size() * 4));
    if (!f) throw VolumeIoError(VolumeIoError::Kind::io_failure, "write failed for " + path);
}

} // namespace

VolumeFormat format_from_extension(const std::string &path) {
    const size_t dot = path.rfind('.');
    if (dot != std::string::npos) {
        const std::string ext = path.substr(dot);
        if (ext == ".nii" || ext == ".hdr") return VolumeFormat::nifti1;
    }
    return VolumeFormat::raw_f32;
}

ScalarVolume load_volume(const std::string &path, VolumeFormat format) {
    if (format == VolumeFormat::auto_detect) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw VolumeIoError(VolumeIoError::Kind::io_failure, "cannot open " + path);
        char magic[8] = {};
        f.read(magic, 8);
        if (f.gcount() == 8 && std::memcmp(magic, kRawMagic, 8) == 0)
            format = VolumeFormat::raw_f32;
        else
            format = VolumeFormat::nifti1;
    }
    return format == VolumeFormat::raw_f32 ? load_raw(path) : load_nifti(path);
}

void save_volume(const ScalarVolume &v, const std::string &path, VolumeFormat format) {
    if (format == VolumeFormat::auto_detect) format = format_from_extension(path);
    if (format == VolumeFormat::raw_f32)
        save_raw(v, path);
    else
        save_nifti(v, path);
}

} // namespace symreg
