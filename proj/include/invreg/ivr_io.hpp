#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "invreg/volume.hpp"

namespace invreg {

// IVR container layout:
//   bytes 0..7   ASCII magic "IVRVOL01"
//   bytes 8..11  u32 little-endian JSON header length H
//   bytes 12..   H bytes UTF-8 JSON: shape, channels, dtype, voxel_size_mm, intent
//   remainder    raw payload, little-endian, x-fastest / channel-outermost
inline constexpr char kIvrMagic[9] = "IVRVOL01";

static_assert(std::endian::native == std::endian::little,
              "IVR I/O assumes a little-endian host");

namespace detail {

inline std::string header_json(const VolumeHeader& h) {
    nlohmann::json j;
    j["shape"] = {h.shape[0], h.shape[1], h.shape[2]};
    j["channels"] = h.channels;
    j["dtype"] = dtype_name(h.dtype);
    j["voxel_size_mm"] = {h.voxel_size_mm[0], h.voxel_size_mm[1], h.voxel_size_mm[2]};
    j["intent"] = intent_name(h.intent);
    return j.dump();
}

inline VolumeHeader parse_header_json(const std::string& text, const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": malformed IVR header JSON: " + e.what());
    }
    VolumeHeader h;
    try {
        auto shape = j.at("shape");
        require(shape.is_array() && shape.size() == 3, path + ": IVR header shape must have 3 entries");
        for (int a = 0; a < 3; ++a) h.shape[a] = shape[a].get<int64_t>();
        h.channels = j.at("channels").get<int64_t>();
        std::string dtype = j.at("dtype").get<std::string>();
        if (dtype == "f32")
            h.dtype = DType::f32;
        else if (dtype == "u16")
            h.dtype = DType::u16;
        else
            throw std::runtime_error(path + ": IVR header has unknown dtype '" + dtype + "'");
        auto vox = j.at("voxel_size_mm");
        require(vox.is_array() && vox.size() == 3, path + ": IVR header voxel_size_mm must have 3 entries");
        for (int a = 0; a < 3; ++a) h.voxel_size_mm[a] = vox[a].get<double>();
        std::string intent = j.at("intent").get<std::string>();
        if (intent == "image")
            h.intent = Intent::image;
        else if (intent == "labels")
            h.intent = Intent::labels;
        else if (intent == "flow")
            h.intent = Intent::flow;
        else
            throw std::runtime_error(path + ": IVR header has unknown intent '" + intent + "'");
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": malformed IVR header: " + e.what());
    }
    h.validate();
    return h;
}

}  // namespace detail

inline void save_ivr(const std::string& path, const VolumeHeader& header, const void* data,
                     int64_t data_bytes) {
    header.validate();
    require(data_bytes == header.payload_bytes(),
            path + ": payload size does not match header (" + std::to_string(data_bytes) + " vs " +
                std::to_string(header.payload_bytes()) + " bytes)");
    std::string json = detail::header_json(header);
    require(json.size() <= 0xffffffffu, path + ": header JSON too large");
    uint32_t len = (uint32_t)json.size();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), path + ": cannot open for writing");
    f.write(kIvrMagic, 8);
    f.write(reinterpret_cast<const char*>(&len), 4);
    f.write(json.data(), (std::streamsize)json.size());
    f.write(reinterpret_cast<const char*>(data), (std::streamsize)data_bytes);
    f.flush();
    require(f.good(), path + ": write failed");
}

inline void save_ivr(const std::string& path, const Volume3& v) {
    save_ivr(path, v.header, v.data.data(), (int64_t)v.data.size() * 4);
}
inline void save_ivr(const std::string& path, const LabelVolume3& v) {
    save_ivr(path, v.header, v.data.data(), (int64_t)v.data.size() * 2);
}
inline void save_ivr(const std::string& path, const FlowField3& v) {
    save_ivr(path, v.header, v.data.data(), (int64_t)v.data.size() * 4);
}

/// Parsed IVR file; exactly one of `f32` / `u16` is populated per dtype.
struct IvrData {
    VolumeHeader header;
    std::vector<float> f32;
    std::vector<uint16_t> u16;
};

inline IvrData load_ivr(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), path + ": cannot open");
    char magic[8];
    f.read(magic, 8);
    require(f.gcount() == 8 && std::memcmp(magic, kIvrMagic, 8) == 0, path + ": bad IVR magic");
    uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 4);
    require(f.gcount() == 4, path + ": truncated IVR header length");
    std::string json(len, '\0');
    f.read(json.data(), len);
    require((uint32_t)f.gcount() == len, path + ": truncated IVR header");

    IvrData out;
    out.header = detail::parse_header_json(json, path);

    int64_t bytes = out.header.payload_bytes();
    std::vector<char> payload((size_t)bytes);
    f.read(payload.data(), bytes);
    require(f.gcount() == bytes, path + ": truncated IVR payload");
    f.peek();
    require(f.eof(), path + ": trailing bytes after IVR payload");

    if (out.header.dtype == DType::f32) {
        out.f32.resize((size_t)out.header.element_count());
        std::memcpy(out.f32.data(), payload.data(), (size_t)bytes);
        check_finite(out.f32, path);
    } else {
        out.u16.resize((size_t)out.header.element_count());
        std::memcpy(out.u16.data(), payload.data(), (size_t)bytes);
    }
    return out;
}

inline Volume3 load_image(const std::string& path) {
    IvrData d = load_ivr(path);
    require(d.header.intent == Intent::image, path + ": expected an image volume");
    return Volume3{d.header, std::move(d.f32)};
}

inline LabelVolume3 load_labels(const std::string& path) {
    IvrData d = load_ivr(path);
    require(d.header.intent == Intent::labels, path + ": expected a label volume");
    return LabelVolume3{d.header, std::move(d.u16)};
}

inline FlowField3 load_flow(const std::string& path) {
    IvrData d = load_ivr(path);
    require(d.header.intent == Intent::flow, path + ": expected a flow field");
    return FlowField3{d.header, std::move(d.f32)};
}

}  // namespace invreg
