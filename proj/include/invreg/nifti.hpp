#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "invreg/ivr_io.hpp"
#include "invreg/volume.hpp"

namespace invreg {

// Uncompressed single-file NIfTI-1 reader, just enough for affinely
// pre-aligned scalar volumes: datatypes u8/i16/f32, 3 spatial dims (unit
// trailing dims tolerated), orientation matrices ignored.
namespace nifti {

constexpr int16_t DT_UINT8 = 2;
constexpr int16_t DT_INT16 = 4;
constexpr int16_t DT_FLOAT32 = 16;

template <typename T>
T read_at(const std::vector<char>& buf, size_t off) {
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    return v;
}

}  // namespace nifti

/// Reads a .nii file into an IVR-style volume. Image data becomes f32; with
/// `as_labels` the values are rounded into u16 labels instead.
inline IvrData import_nifti(const std::string& path, bool as_labels = false) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), path + ": cannot open");
    std::vector<char> hdr(348);
    f.read(hdr.data(), 348);
    require(f.gcount() == 348, path + ": file shorter than a NIfTI-1 header");

    int32_t sizeof_hdr = nifti::read_at<int32_t>(hdr, 0);
    require(sizeof_hdr == 348, path + ": sizeof_hdr != 348 (not native little-endian NIfTI-1)");
    char magic[4];
    std::memcpy(magic, hdr.data() + 344, 4);
    require(std::memcmp(magic, "n+1\0", 4) == 0, path + ": magic is not 'n+1' (single-file .nii required)");

    int16_t dim[8];
    for (int i = 0; i < 8; ++i) dim[i] = nifti::read_at<int16_t>(hdr, 40 + 2 * (size_t)i);
    require(dim[0] >= 3, path + ": NIfTI dim[0] < 3, not a 3D volume");
    for (int i = 4; i <= dim[0] && i < 8; ++i)
        require(dim[i] <= 1, path + ": NIfTI has a non-unit trailing dimension (4D+ unsupported)");

    Shape3 shape{(int64_t)dim[1], (int64_t)dim[2], (int64_t)dim[3]};
    for (int a = 0; a < 3; ++a) require(shape[a] >= 1, path + ": NIfTI spatial dims must be >= 1");

    int16_t datatype = nifti::read_at<int16_t>(hdr, 70);
    require(datatype == nifti::DT_UINT8 || datatype == nifti::DT_INT16 || datatype == nifti::DT_FLOAT32,
            path + ": unsupported NIfTI datatype code " + std::to_string(datatype));

    std::array<double, 3> vox_mm;
    for (int a = 0; a < 3; ++a) {
        float p = nifti::read_at<float>(hdr, 76 + 4 * (size_t)(a + 1));
        vox_mm[a] = (std::isfinite(p) && p > 0.0f) ? (double)p : 1.0;
    }

    float vox_offset_f = nifti::read_at<float>(hdr, 108);
    int64_t vox_offset = (int64_t)vox_offset_f;
    require(vox_offset >= 348, path + ": NIfTI vox_offset below header size");

    f.seekg(vox_offset, std::ios::beg);
    require(f.good(), path + ": cannot seek to voxel data");

    int64_t count = voxel_count(shape);
    int64_t elsize = datatype == nifti::DT_UINT8 ? 1 : (datatype == nifti::DT_INT16 ? 2 : 4);
    std::vector<char> payload((size_t)(count * elsize));
    f.read(payload.data(), count * elsize);
    require(f.gcount() == count * elsize, path + ": truncated NIfTI payload");

    auto raw_value = [&](int64_t i) -> double {
        switch (datatype) {
            case nifti::DT_UINT8: return (double)(uint8_t)payload[(size_t)i];
            case nifti::DT_INT16: {
                int16_t v;
                std::memcpy(&v, payload.data() + 2 * i, 2);
                return (double)v;
            }
            default: {
                float v;
                std::memcpy(&v, payload.data() + 4 * i, 4);
                return (double)v;
            }
        }
    };

    IvrData out;
    out.header.shape = shape;
    out.header.voxel_size_mm = vox_mm;
    if (as_labels) {
        out.header.channels = 1;
        out.header.dtype = DType::u16;
        out.header.intent = Intent::labels;
        out.u16.resize((size_t)count);
        for (int64_t i = 0; i < count; ++i) {
            double v = raw_value(i);
            require(std::isfinite(v), path + ": non-finite label value");
            int64_t lab = (int64_t)std::llround(v);
            require(lab >= 0 && lab < 65536, path + ": label value out of u16 range");
            out.u16[(size_t)i] = (uint16_t)lab;
        }
    } else {
        out.header.channels = 1;
        out.header.dtype = DType::f32;
        out.header.intent = Intent::image;
        out.f32.resize((size_t)count);
        for (int64_t i = 0; i < count; ++i) {
            double v = raw_value(i);
            require(std::isfinite(v), path + ": non-finite image value");
            out.f32[(size_t)i] = (float)v;
        }
    }
    out.header.validate();
    return out;
}

}  // namespace invreg
