// Copyright (c) 2026, The fgzsd authors
// SPDX-License-Identifier: Apache-2.0

#include "fgzsd/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "fgzsd/error.hpp"

namespace fgzsd {

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& base, const char* suffix) {
    return std::filesystem::path(base.string() + suffix);
}

void put_le(std::ostream& os, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    std::array<char, 8> bytes{};
    for (int i = 0; i < 8; ++i) bytes[static_cast<std::size_t>(i)] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    os.write(bytes.data(), 8);
}

double get_le(const char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace

const Matrix& Checkpoint::at(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t.value;
    fail(ErrorCode::InvalidArgument, "checkpoint has no tensor named " + name);
}

void write_checkpoint(const std::filesystem::path& base, const Checkpoint& ckpt) {
    if (base.has_parent_path()) std::filesystem::create_directories(base.parent_path());
    std::ofstream bin(with_suffix(base, ".bin"), std::ios::binary | std::ios::trunc);
    if (!bin) fail(ErrorCode::IoError, "cannot write " + with_suffix(base, ".bin").string());
    nlohmann::json index = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        index.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}, {"offset", offset}});
        for (double v : t.value.data()) put_le(bin, v);
        offset += t.value.size();
    }
    nlohmann::json sidecar = ckpt.meta;
    sidecar["tensors"] = std::move(index);
    sidecar["total_doubles"] = offset;
    std::ofstream js(with_suffix(base, ".json"), std::ios::trunc);
    if (!js) fail(ErrorCode::IoError, "cannot write " + with_suffix(base, ".json").string());
    js << sidecar.dump(2) << '\n';
}

Checkpoint read_checkpoint(const std::filesystem::path& base) {
    std::ifstream js(with_suffix(base, ".json"));
    if (!js) fail(ErrorCode::IoError, "cannot read " + with_suffix(base, ".json").string());
    nlohmann::json sidecar;
    try {
        js >> sidecar;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, e.what());
    }
    std::ifstream bin(with_suffix(base, ".bin"), std::ios::binary);
    if (!bin) fail(ErrorCode::IoError, "cannot read " + with_suffix(base, ".bin").string());
    std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    Checkpoint ckpt;
    for (const auto& t : sidecar.at("tensors")) {
        const auto rows = t.at("rows").get<std::size_t>();
        const auto cols = t.at("cols").get<std::size_t>();
        const auto offset = t.at("offset").get<std::size_t>();
        if ((offset + rows * cols) * 8 > blob.size()) fail(ErrorCode::ParseError, "checkpoint blob is truncated");
        std::vector<double> data(rows * cols);
        for (std::size_t i = 0; i < data.size(); ++i) data[i] = get_le(blob.data() + (offset + i) * 8);
        ckpt.tensors.push_back({t.at("name").get<std::string>(), Matrix(rows, cols, std::move(data))});
    }
    sidecar.erase("tensors");
    sidecar.erase("total_doubles");
    ckpt.meta = std::move(sidecar);
    return ckpt;
}

}  // namespace fgzsd
