// map_io.cpp - SREGMAP1 deformation-map serialization.
#include "symreg/map_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "json.hpp"

namespace symreg {

namespace {

constexpr char kMagic[8] = {'S', 'R', 'E', 'G', 'M', 'A', 'P', '1'};

void put_u32(std::vector<uint8_t> &b, uint32_t v) {
    b.push_back(static_cast<uint8_t>(v & 0xff));
    b.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
    b.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
    b.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

void put_f32(std::vector<uint8_t> &b, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(b, u);
}

uint32_t get_u32(const uint8_t *p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8)
           | (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

float get_f32(const uint8_t *p) {
    const uint32_t u = get_u32(p);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

} // namespace

void save_map(const DeformationMap &map, const std::string &path) {
    map.geometry.validate();
    const size_t n = map.geometry.voxel_count();
    if (map.q_total.data.size() != n || map.jac_total.data.size() != n)
        throw std::invalid_argument("save_map: field sizes do not match the geometry");

    std::vector<uint8_t> head;
    head.reserve(48);
    head.insert(head.end(), kMagic, kMagic + 8);
    for (int a = 0; a < 3; ++a) put_u32(head, static_cast<uint32_t>(map.geometry.dims[a]));
    for (int a = 0; a < 3; ++a) put_f32(head, static_cast<float>(map.geometry.spacing[a]));
    for (int a = 0; a < 3; ++a) put_f32(head, static_cast<float>(map.geometry.origin[a]));
    put_u32(head, 0);

    std::vector<float> payload;
    payload.reserve(n * 12);
    for (size_t i = 0; i < n; ++i) {
        const Vec3 &q = map.q_total.data[i];
        payload.push_back(static_cast<float>(q.x));
        payload.push_back(static_cast<float>(q.y));
        payload.push_back(static_cast<float>(q.z));
    }
    for (size_t i = 0; i < n; ++i)
        for (int e = 0; e < 9; ++e)
            payload.push_back(static_cast<float>(map.jac_total.data[i].m[static_cast<size_t>(e)]));

    nlohmann::json shells = nlohmann::json::array();
    for (const ShellRecord &s : map.shells)
        shells.push_back({{"index", s.index},
                          {"steps", s.steps},
                          {"duration", s.duration},
                          {"energy_end", s.energy_end},
                          {"rmsd_end", s.rmsd_end}});
    const std::string trailer = nlohmann::json{{"format", "SREGMAP1"}, {"shells", shells}}.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_map: cannot open " + path);
    f.write(reinterpret_cast<const char *>(head.data()), static_cast<std::streamsize>(head.size()));
    f.write(reinterpret_cast<const char *>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    f.write(trailer.data(), static_cast<std::streamsize>(trailer.size()));
    std::vector<uint8_t> len;
    put_u32(len, static_cast<uint32_t>(trailer.size()));
    f.write(reinterpret_cast<const char *>(len.data()), 4);
    if (!f) throw std::runtime_error("save_map: write failed for " + path);
}

DeformationMap load_map(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_map: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 52 || std::memcmp(bytes.data(), kMagic, 8) != 0)
        throw std::runtime_error("load_map: not an SREGMAP1 file: " + path);

    GridGeometry g;
    for (int a = 0; a < 3; ++a) {
        const uint32_t d = get_u32(&bytes[8 + 4 * static_cast<size_t>(a)]);
        if (d < 2 || d > (1u << 24)) throw std::runtime_error("load_map: implausible dims");
        g.dims[a] = static_cast<int>(d);
        g.spacing[a] = get_f32(&bytes[20 + 4 * static_cast<size_t>(a)]);
        g.origin[a] = get_f32(&bytes[32 + 4 * static_cast<size_t>(a)]);
    }
    g.validate();

    const size_t n = g.voxel_count();
    const size_t payload_bytes = n * 12 * sizeof(float);
    const uint32_t trailer_len = get_u32(&bytes[bytes.size() - 4]);
    if (bytes.size() != 48 + payload_bytes + trailer_len + 4)
        throw std::runtime_error("load_map: truncated or oversized file: " + path);

    DeformationMap map = DeformationMap::identity(g);
    const uint8_t *p = &bytes[48];
    for (size_t i = 0; i < n; ++i) {
        map.q_total.data[i] = {get_f32(p), get_f32(p + 4), get_f32(p + 8)};
        p += 12;
    }
    for (size_t i = 0; i < n; ++i) {
        for (int e = 0; e < 9; ++e) map.jac_total.data[i].m[static_cast<size_t>(e)] = get_f32(p + 4 * e);
        p += 36;
    }

    const std::string trailer(reinterpret_cast<const char *>(&bytes[48 + payload_bytes]),
                              trailer_len);
    const nlohmann::json doc = nlohmann::json::parse(trailer);
    if (doc.value("format", "") != "SREGMAP1")
        throw std::runtime_error("load_map: trailer format mismatch");
    for (const auto &js : doc.at("shells")) {
        ShellRecord s;
        s.index = js.at("index").get<int>();
        s.steps = js.at("steps").get<int>();
        s.duration = js.at("duration").get<double>();
        s.energy_end = js.at("energy_end").get<double>();
        s.rmsd_end = js.at("rmsd_end").get<double>();
        map.shells.push_back(std::move(s));
    }
    return map;
}

} // namespace symreg
