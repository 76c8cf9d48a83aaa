#include "vesselseg/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

namespace vseg {

namespace {

// NIfTI-1 header, 348 bytes. Only the fields this reader touches are named
// individually; the rest are kept as padding so offsets line up.
#pragma pack(push, 1)
struct Nifti1Header {
    std::int32_t sizeof_hdr;     // 0
    char data_type[10];          // 4
    char db_name[18];            // 14
    std::int32_t extents;        // 32
    std::int16_t session_error;  // 36
    char regular;                // 38
    char dim_info;               // 39
    std::int16_t dim[8];         // 40
    float intent_p1;             // 56
    float intent_p2;             // 60
    float intent_p3;             // 64
    std::int16_t intent_code;    // 68
    std::int16_t datatype;       // 70
    std::int16_t bitpix;         // 72
    std::int16_t slice_start;    // 74
    float pixdim[8];             // 76
    float vox_offset;            // 108
    float scl_slope;             // 112
    float scl_inter;             // 116
    std::int16_t slice_end;      // 120
    char slice_code;             // 122
    char xyzt_units;             // 123
    float cal_max;               // 124
    float cal_min;               // 128
    float slice_duration;        // 132
    float toffset;               // 136
    std::int32_t glmax;          // 140
    std::int32_t glmin;          // 144
    char descrip[80];            // 148
    char aux_file[24];           // 228
    std::int16_t qform_code;     // 252
    std::int16_t sform_code;     // 254
    float quatern_b;             // 256
    float quatern_c;             // 260
    float quatern_d;             // 264
    float qoffset_x;             // 268
    float qoffset_y;             // 272
    float qoffset_z;             // 276
    float srow_x[4];             // 280
    float srow_y[4];             // 296
    float srow_z[4];             // 312
    char intent_name[16];        // 328
    char magic[4];               // 344
};
#pragma pack(pop)

static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

enum NiftiDatatype : std::int16_t {
    DT_UINT8 = 2,
    DT_INT16 = 4,
    DT_INT32 = 8,
    DT_FLOAT32 = 16,
    DT_FLOAT64 = 64,
    DT_UINT16 = 512,
};

template <typename T>
void swap_bytes(T& v) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
}

void swap_header(Nifti1Header& h) {
    swap_bytes(h.sizeof_hdr);
    for (auto& d : h.dim) swap_bytes(d);
    swap_bytes(h.datatype);
    swap_bytes(h.bitpix);
    for (auto& p : h.pixdim) swap_bytes(p);
    swap_bytes(h.vox_offset);
    swap_bytes(h.scl_slope);
    swap_bytes(h.scl_inter);
    swap_bytes(h.qform_code);
    swap_bytes(h.sform_code);
    swap_bytes(h.qoffset_x);
    swap_bytes(h.qoffset_y);
    swap_bytes(h.qoffset_z);
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// gzread handles plain files transparently, so one reader covers .nii and .nii.gz.
std::vector<char> read_all(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open file: " + path);
    std::vector<char> buf;
    char chunk[1 << 16];
    int n;
    while ((n = gzread(f, chunk, sizeof(chunk))) > 0) buf.insert(buf.end(), chunk, chunk + n);
    bool bad = n < 0;
    gzclose(f);
    if (bad) throw std::runtime_error("failed to decompress: " + path);
    return buf;
}

void write_all(const std::string& path, const char* data, std::size_t size) {
    if (ends_with(path, ".gz")) {
        gzFile f = gzopen(path.c_str(), "wb");
        if (!f) throw std::runtime_error("cannot open file for writing: " + path);
        std::size_t off = 0;
        while (off < size) {
            unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(size - off, 1u << 24));
            if (gzwrite(f, data + off, chunk) != static_cast<int>(chunk)) {
                gzclose(f);
                throw std::runtime_error("write failed: " + path);
            }
            off += chunk;
        }
        gzclose(f);
    } else {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open file for writing: " + path);
        f.write(data, static_cast<std::streamsize>(size));
        if (!f) throw std::runtime_error("write failed: " + path);
    }
}

struct LoadedGrid {
    Tensor data;  // (D,H,W)
    Vec3 spacing;
    Vec3 origin;
};

template <typename T>
void copy_voxels(const char* src, std::size_t n, bool swapped, double slope, double inter,
                 Tensor& out) {
    for (std::size_t i = 0; i < n; ++i) {
        T v;
        std::memcpy(&v, src + i * sizeof(T), sizeof(T));
        if (swapped) swap_bytes(v);
        out[i] = slope * static_cast<double>(v) + inter;
    }
}

LoadedGrid load_nifti(const std::string& path) {
    std::vector<char> buf = read_all(path);
    if (buf.size() < sizeof(Nifti1Header)) throw std::runtime_error("truncated NIfTI file: " + path);

    Nifti1Header h{};
    std::memcpy(&h, buf.data(), sizeof(h));
    bool swapped = false;
    if (h.sizeof_hdr != 348) {
        swap_header(h);
        swapped = true;
        if (h.sizeof_hdr != 348) throw std::runtime_error("not a NIfTI-1 file: " + path);
    }
    if (std::strncmp(h.magic, "n+1", 3) != 0 && std::strncmp(h.magic, "ni1", 3) != 0)
        throw std::runtime_error("bad NIfTI magic: " + path);
    if (h.dim[0] < 3) throw std::runtime_error("NIfTI image is not 3D: " + path);
    for (int a = 4; a <= h.dim[0]; ++a)
        if (h.dim[a] > 1) throw std::runtime_error("NIfTI image has more than 3 dimensions: " + path);

    const int W = h.dim[1], H = h.dim[2], D = h.dim[3];
    if (W <= 0 || H <= 0 || D <= 0) throw std::runtime_error("invalid NIfTI dimensions: " + path);

    Vec3 spacing{static_cast<double>(h.pixdim[3]), static_cast<double>(h.pixdim[2]),
                 static_cast<double>(h.pixdim[1])};
    for (double s : spacing)
        if (!(s > 0.0) || !std::isfinite(s))
            throw std::runtime_error("missing or invalid spacing metadata: " + path);

    Vec3 origin{0.0, 0.0, 0.0};
    if (h.sform_code > 0) {
        origin = {static_cast<double>(h.srow_z[3]), static_cast<double>(h.srow_y[3]),
                  static_cast<double>(h.srow_x[3])};
    } else if (h.qform_code > 0) {
        origin = {static_cast<double>(h.qoffset_z), static_cast<double>(h.qoffset_y),
                  static_cast<double>(h.qoffset_x)};
    }

    double slope = (h.scl_slope == 0.0f || !std::isfinite(h.scl_slope)) ? 1.0 : h.scl_slope;
    double inter = std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
    if (h.scl_slope == 0.0f) inter = 0.0;

    std::size_t n = static_cast<std::size_t>(W) * H * D;
    std::size_t offset = static_cast<std::size_t>(h.vox_offset);
    std::size_t bytes = static_cast<std::size_t>(h.bitpix / 8) * n;
    if (buf.size() < offset + bytes) throw std::runtime_error("truncated NIfTI payload: " + path);

    Tensor data({D, H, W});
    const char* payload = buf.data() + offset;
    switch (h.datatype) {
        case DT_UINT8: copy_voxels<std::uint8_t>(payload, n, swapped, slope, inter, data); break;
        case DT_INT16: copy_voxels<std::int16_t>(payload, n, swapped, slope, inter, data); break;
        case DT_UINT16: copy_voxels<std::uint16_t>(payload, n, swapped, slope, inter, data); break;
        case DT_INT32: copy_voxels<std::int32_t>(payload, n, swapped, slope, inter, data); break;
        case DT_FLOAT32: copy_voxels<float>(payload, n, swapped, slope, inter, data); break;
        case DT_FLOAT64: copy_voxels<double>(payload, n, swapped, slope, inter, data); break;
        default:
            throw std::runtime_error("unsupported NIfTI datatype " + std::to_string(h.datatype) +
                                     ": " + path);
    }
    return {std::move(data), spacing, origin};
}

Nifti1Header make_header(const Tensor& data, const Vec3& spacing, const Vec3& origin,
                         std::int16_t datatype, std::int16_t bitpix) {
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<std::int16_t>(data.extent(2));  // W (x)
    h.dim[2] = static_cast<std::int16_t>(data.extent(1));  // H (y)
    h.dim[3] = static_cast<std::int16_t>(data.extent(0));  // D (z)
    for (int a = 4; a < 8; ++a) h.dim[a] = 1;
    h.datatype = datatype;
    h.bitpix = bitpix;
    h.pixdim[0] = 1.0f;
    h.pixdim[1] = static_cast<float>(spacing[2]);
    h.pixdim[2] = static_cast<float>(spacing[1]);
    h.pixdim[3] = static_cast<float>(spacing[0]);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2;  // millimetres
    h.sform_code = 1;
    h.qform_code = 0;
    h.srow_x[0] = static_cast<float>(spacing[2]);
    h.srow_x[3] = static_cast<float>(origin[2]);
    h.srow_y[1] = static_cast<float>(spacing[1]);
    h.srow_y[3] = static_cast<float>(origin[1]);
    h.srow_z[2] = static_cast<float>(spacing[0]);
    h.srow_z[3] = static_cast<float>(origin[0]);
    std::memcpy(h.magic, "n+1", 4);
    return h;
}

void save_nifti(const Tensor& data, const Vec3& spacing, const Vec3& origin,
                const std::string& path, bool as_uint8) {
    Nifti1Header h = make_header(data, spacing, origin, as_uint8 ? DT_UINT8 : DT_FLOAT64,
                                 as_uint8 ? 8 : 64);
    std::vector<char> buf(352, 0);
    std::memcpy(buf.data(), &h, sizeof(h));
    if (as_uint8) {
        buf.reserve(352 + data.size());
        for (std::size_t i = 0; i < data.size(); ++i)
            buf.push_back(data[i] != 0.0 ? char(1) : char(0));
    } else {
        buf.resize(352 + data.size() * sizeof(double));
        std::memcpy(buf.data() + 352, data.data(), data.size() * sizeof(double));
    }
    write_all(path, buf.data(), buf.size());
}

LoadedGrid load_raw_fixture(const std::string& path) {
    std::ifstream meta(path + ".json");
    if (!meta) throw std::runtime_error("missing raw sidecar: " + path + ".json");
    nlohmann::json j;
    meta >> j;

    auto shape = j.at("shape").get<std::vector<int>>();
    auto sp = j.at("spacing").get<std::vector<double>>();
    if (shape.size() != 3 || sp.size() != 3)
        throw std::runtime_error("raw sidecar must give 3D shape and spacing: " + path);
    Vec3 origin{0.0, 0.0, 0.0};
    if (j.contains("origin")) {
        auto o = j.at("origin").get<std::vector<double>>();
        origin = {o.at(0), o.at(1), o.at(2)};
    }

    Tensor data({shape[0], shape[1], shape[2]});
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open file: " + path);
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (static_cast<std::size_t>(f.gcount()) != data.size() * sizeof(double))
        throw std::runtime_error("raw payload shorter than sidecar shape: " + path);
    return {std::move(data), {sp[0], sp[1], sp[2]}, origin};
}

void save_raw_fixture(const Tensor& data, const Vec3& spacing, const Vec3& origin,
                      const std::string& path) {
    nlohmann::json j;
    j["shape"] = std::vector<int>{data.extent(0), data.extent(1), data.extent(2)};
    j["spacing"] = std::vector<double>{spacing[0], spacing[1], spacing[2]};
    j["origin"] = std::vector<double>{origin[0], origin[1], origin[2]};
    j["dtype"] = "float64";
    std::ofstream meta(path + ".json");
    meta << j.dump(2) << "\n";
    write_all(path, reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
}

LoadedGrid load_grid(const std::string& path) {
    if (ends_with(path, ".nii") || ends_with(path, ".nii.gz")) return load_nifti(path);
    if (ends_with(path, ".raw")) return load_raw_fixture(path);
    throw std::runtime_error("unsupported volume format: " + path);
}

void check_finite(const Tensor& data, const std::string& path) {
    for (std::size_t i = 0; i < data.size(); ++i)
        if (!std::isfinite(data[i]))
            throw std::runtime_error("non-finite intensities in " + path);
}

}  // namespace

Volume load_volume(const std::string& path) {
    LoadedGrid g = load_grid(path);
    check_finite(g.data, path);
    return Volume(std::move(g.data), g.spacing, g.origin);
}

void save_volume(const Volume& vol, const std::string& path) {
    if (ends_with(path, ".raw"))
        save_raw_fixture(vol.data, vol.spacing, vol.origin, path);
    else
        save_nifti(vol.data, vol.spacing, vol.origin, path, /*as_uint8=*/false);
}

LabelMask load_mask(const std::string& path) {
    LoadedGrid g = load_grid(path);
    check_finite(g.data, path);
    // Tolerant ingestion: annotation exports often store foreground as 255.
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = g.data[i] != 0.0 ? 1.0 : 0.0;
    return LabelMask(std::move(g.data), g.spacing, g.origin);
}

void save_mask(const LabelMask& mask, const std::string& path) {
    if (ends_with(path, ".raw"))
        save_raw_fixture(mask.data, mask.spacing, mask.origin, path);
    else
        save_nifti(mask.data, mask.spacing, mask.origin, path, /*as_uint8=*/true);
}

}  // namespace vseg
