#include "alprio/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace alprio {

std::string shape_string(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
           (std::uint32_t{p[3]} << 24);
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const FloatTensor& t) {
    if (t.rank() > std::numeric_limits<std::uint8_t>::max())
        throw FormatError("tensor rank " + std::to_string(t.rank()) + " exceeds container limit");
    std::vector<std::uint8_t> out;
    out.reserve(6 + 4 * t.rank() + 4 * t.size());
    out.insert(out.end(), std::begin(kTensorMagic), std::end(kTensorMagic));
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape) {
        if (d > std::numeric_limits<std::uint32_t>::max())
            throw FormatError("tensor dimension " + std::to_string(d) + " exceeds u32");
        put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (float v : t.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

FloatTensor decode_tensor(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
    if (bytes.size() < 6 || std::memcmp(bytes.data(), kTensorMagic, 5) != 0)
        throw FormatError(origin + ": missing ALPT1 magic");
    const std::size_t rank = bytes[5];
    std::size_t offset = 6;
    if (bytes.size() < offset + 4 * rank) throw FormatError(origin + ": truncated header");
    Shape shape(rank);
    for (std::size_t i = 0; i < rank; ++i, offset += 4) shape[i] = get_u32(bytes.data() + offset);
    const std::size_t count = shape_size(shape);
    if (bytes.size() != offset + 4 * count)
        throw FormatError(origin + ": payload size " + std::to_string(bytes.size() - offset) +
                          " bytes does not match shape " + shape_string(shape));
    FloatTensor t(shape);
    for (std::size_t i = 0; i < count; ++i, offset += 4)
        t.data[i] = std::bit_cast<float>(get_u32(bytes.data() + offset));
    return t;
}

void write_tensor(const std::filesystem::path& path, const FloatTensor& t) {
    write_file_bytes(path, encode_tensor(t));
}

FloatTensor read_tensor(const std::filesystem::path& path) {
    return decode_tensor(read_file_bytes(path), path.string());
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace alprio
