#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "invreg/tensor.hpp"

namespace invreg {

inline std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    require(!ec, dir + ": cannot create directory: " + ec.message());
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), path + ": cannot open for writing");
    f.write(content.data(), (std::streamsize)content.size());
    f.flush();
    require(f.good(), path + ": write failed");
}

}  // namespace invreg
