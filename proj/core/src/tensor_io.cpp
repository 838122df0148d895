#include "ei/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "ei/errors.hpp"

namespace ei {

namespace {

void put_bytes(std::string& out, std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_bytes(const std::string& in, std::size_t pos, int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    }
    return v;
}

}  // namespace

void write_tensor(const std::filesystem::path& path, const Tensor& t, FileDtype dtype) {
    if (!t.defined()) throw DataError("write_tensor: undefined tensor");
    if (t.ndim() > 255) throw DataError("write_tensor: rank too large");

    std::string buf;
    buf.reserve(16 + static_cast<std::size_t>(t.numel()) * 8);
    buf += "EITF";
    put_bytes(buf, 1, 2);  // version
    buf.push_back(static_cast<char>(dtype));
    buf.push_back(static_cast<char>(t.ndim()));
    for (std::int64_t i = 0; i < t.ndim(); ++i) {
        if (t.dim(i) > 0xffffffffll) throw DataError("write_tensor: dimension exceeds u32");
        put_bytes(buf, static_cast<std::uint64_t>(t.dim(i)), 4);
    }
    for (double v : t.values()) {
        if (dtype == FileDtype::f32) {
            put_bytes(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
        } else {
            put_bytes(buf, std::bit_cast<std::uint64_t>(v), 8);
        }
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("write_tensor: cannot open " + path.string());
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("write_tensor: short write to " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path, FileDtype* dtype_out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("read_tensor: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (buf.size() < 8) throw DataError("read_tensor: truncated header in " + path.string());
    if (buf.compare(0, 4, "EITF") != 0) throw DataError("read_tensor: bad magic in " + path.string());
    const auto version = get_bytes(buf, 4, 2);
    if (version != 1) {
        throw DataError("read_tensor: unsupported version " + std::to_string(version) + " in " +
                        path.string());
    }
    const auto dtype_raw = get_bytes(buf, 6, 1);
    if (dtype_raw > 1) {
        throw DataError("read_tensor: unknown dtype " + std::to_string(dtype_raw) + " in " +
                        path.string());
    }
    const FileDtype dtype = static_cast<FileDtype>(dtype_raw);
    const auto ndim = static_cast<std::size_t>(get_bytes(buf, 7, 1));
    if (buf.size() < 8 + 4 * ndim) throw DataError("read_tensor: truncated dims in " + path.string());

    std::vector<std::int64_t> shape(ndim);
    std::int64_t numel = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
        shape[i] = static_cast<std::int64_t>(get_bytes(buf, 8 + 4 * i, 4));
        numel *= shape[i];
    }
    const std::size_t width = dtype == FileDtype::f32 ? 4 : 8;
    const std::size_t offset = 8 + 4 * ndim;
    if (buf.size() != offset + static_cast<std::size_t>(numel) * width) {
        throw DataError("read_tensor: payload length mismatch in " + path.string() + " (expected " +
                        std::to_string(numel) + " scalars)");
    }

    std::vector<double> values(static_cast<std::size_t>(numel));
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (dtype == FileDtype::f32) {
            values[i] = static_cast<double>(
                std::bit_cast<float>(static_cast<std::uint32_t>(get_bytes(buf, offset + 4 * i, 4))));
        } else {
            values[i] = std::bit_cast<double>(get_bytes(buf, offset + 8 * i, 8));
        }
    }
    if (dtype_out) *dtype_out = dtype;
    // Bypass Tensor::from so the ambient precision mode cannot requantize
    // stored values; a file must read back bit-identical.
    Tensor t = Tensor::zeros(std::move(shape));
    std::copy(values.begin(), values.end(), t.raw_values().begin());
    return t;
}

Tensor read_tensor_as(const std::filesystem::path& path, FileDtype expected) {
    FileDtype got;
    Tensor t = read_tensor(path, &got);
    if (got != expected) {
        throw DataError("read_tensor: dtype mismatch in " + path.string() + " (expected " +
                        std::to_string(static_cast<int>(expected)) + ", found " +
                        std::to_string(static_cast<int>(got)) + ")");
    }
    return t;
}

}  // namespace ei
