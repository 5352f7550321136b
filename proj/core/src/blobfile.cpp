#include "geossl/blobfile.hpp"

#include <openssl/evp.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstring>
#include <fstream>

namespace geossl::io {

using json = nlohmann::json;

std::string sha256_hex(const void* data, std::size_t n) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int md_len = 0;
    EVP_Digest(data, n, md, &md_len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(md_len * 2);
    for (unsigned int i = 0; i < md_len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

std::uint64_t dtype_size(const std::string& dtype) {
    if (dtype == "float32" || dtype == "int32") return 4;
    throw FileError(FileErrorCode::format, "unsupported dtype: " + dtype);
}

std::uint64_t shape_bytes(const std::string& dtype, const std::vector<int>& shape) {
    std::uint64_t n = dtype_size(dtype);
    for (int d : shape) {
        if (d < 0) throw FileError(FileErrorCode::shape, "negative dimension in shape");
        n *= static_cast<std::uint64_t>(d);
    }
    return n;
}

namespace {

void append_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

// Numeric payloads are stored little-endian; this codebase targets
// little-endian hosts, so blobs are memcpy-ed directly.
static_assert(sizeof(float) == 4 && sizeof(std::int32_t) == 4);

}  // namespace

void BlobWriter::add_raw(const std::string& name, const std::string& dtype,
                         std::vector<int> shape, const void* data, std::uint64_t bytes) {
    if (entries_.count(name))
        throw FileError(FileErrorCode::format, "duplicate blob name: " + name);
    BlobEntry e;
    e.dtype = dtype;
    e.shape = std::move(shape);
    e.bytes = bytes;
    buffers_.emplace_back(static_cast<const unsigned char*>(data),
                          static_cast<const unsigned char*>(data) + bytes);
    buffer_of_[name] = buffers_.size() - 1;
    entries_[name] = std::move(e);
    order_.push_back(name);
}

void BlobWriter::add_f32(const std::string& name, std::vector<int> shape, const float* data) {
    const std::uint64_t bytes = shape_bytes("float32", shape);
    add_raw(name, "float32", std::move(shape), data, bytes);
}

void BlobWriter::add_i32(const std::string& name, std::vector<int> shape,
                         const std::int32_t* data) {
    const std::uint64_t bytes = shape_bytes("int32", shape);
    add_raw(name, "int32", std::move(shape), data, bytes);
}

void BlobWriter::write(const std::string& path, bool with_checksums) const {
    json arrays = json::object();
    std::uint64_t offset = 0;
    for (const auto& name : order_) {
        const BlobEntry& e = entries_.at(name);
        json je;
        je["dtype"] = e.dtype;
        je["shape"] = e.shape;
        je["offset"] = offset;
        if (with_checksums) {
            const auto& buf = buffers_[buffer_of_.at(name)];
            je["sha256"] = sha256_hex(buf.data(), buf.size());
        }
        arrays[name] = std::move(je);
        offset += e.bytes;
    }
    json header;
    header["version"] = 1;
    header["arrays"] = std::move(arrays);
    header["payload_bytes"] = offset;
    header["meta"] = json::parse(meta_json_);

    const std::string hdr = header.dump();
    std::string out = magic_;
    append_u64_le(out, hdr.size());
    out += hdr;

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FileError(FileErrorCode::format, "cannot open for write: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));

    std::string digest_acc;
    if (with_checksums) digest_acc = out;
    for (const auto& name : order_) {
        const auto& buf = buffers_[buffer_of_.at(name)];
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size()));
        if (with_checksums)
            digest_acc.append(reinterpret_cast<const char*>(buf.data()), buf.size());
    }
    if (with_checksums) {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int md_len = 0;
        EVP_Digest(digest_acc.data(), digest_acc.size(), md, &md_len, EVP_sha256(), nullptr);
        f.write(reinterpret_cast<const char*>(md), 32);
    }
    if (!f) throw FileError(FileErrorCode::format, "short write: " + path);
}

BlobReader BlobReader::open(const std::string& path, const std::string& magic,
                            bool with_checksums) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FileError(FileErrorCode::format, "cannot open: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());

    if (bytes.size() < magic.size() + 8)
        throw FileError(FileErrorCode::truncation, "file shorter than header prefix");
    if (std::memcmp(bytes.data(), magic.data(), magic.size()) != 0)
        throw FileError(FileErrorCode::format, "bad magic bytes");

    std::size_t pos = magic.size();
    const std::uint64_t hdr_len = read_u64_le(bytes.data() + pos);
    pos += 8;
    if (bytes.size() < pos + hdr_len)
        throw FileError(FileErrorCode::truncation, "file ends inside header");

    std::string hdr(reinterpret_cast<const char*>(bytes.data() + pos), hdr_len);
    pos += hdr_len;

    json header;
    try {
        header = json::parse(hdr);
    } catch (const json::exception& e) {
        throw FileError(FileErrorCode::format,
                        std::string("header is not valid JSON: ") + e.what());
    }
    if (!header.contains("version") || header["version"].get<int>() != 1)
        throw FileError(FileErrorCode::format, "unsupported container version");

    BlobReader r;
    r.header_json_ = hdr;
    r.meta_json_ = header.value("meta", json()).dump();

    const std::uint64_t declared_payload = header.value("payload_bytes", std::uint64_t{0});
    const std::size_t tail = with_checksums ? 32 : 0;
    if (bytes.size() < pos + tail)
        throw FileError(FileErrorCode::truncation, "file ends before trailing checksum");
    const std::uint64_t actual_payload = bytes.size() - pos - tail;
    if (actual_payload < declared_payload)
        throw FileError(FileErrorCode::truncation, "payload truncated mid-blob");

    if (with_checksums) {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int md_len = 0;
        EVP_Digest(bytes.data(), bytes.size() - 32, md, &md_len, EVP_sha256(), nullptr);
        if (std::memcmp(md, bytes.data() + bytes.size() - 32, 32) != 0)
            throw FileError(FileErrorCode::checksum, "whole-file checksum mismatch");
    }

    if (!header.contains("arrays") || !header["arrays"].is_object())
        throw FileError(FileErrorCode::format, "header missing arrays table");

    // Recover write order from offsets (JSON objects do not preserve it).
    std::vector<std::pair<std::uint64_t, std::string>> by_offset;
    for (auto it = header["arrays"].begin(); it != header["arrays"].end(); ++it) {
        const json& je = it.value();
        BlobEntry e;
        try {
            e.dtype = je.at("dtype").get<std::string>();
            e.shape = je.at("shape").get<std::vector<int>>();
            e.offset = je.at("offset").get<std::uint64_t>();
            if (je.contains("sha256")) e.digest = je["sha256"].get<std::string>();
        } catch (const json::exception& ex) {
            throw FileError(FileErrorCode::format,
                            "malformed array entry '" + it.key() + "': " + ex.what());
        }
        e.bytes = shape_bytes(e.dtype, e.shape);
        if (e.offset + e.bytes > declared_payload)
            throw FileError(FileErrorCode::shape,
                            "tensor '" + it.key() + "' extends past declared payload");
        if (e.offset + e.bytes > actual_payload)
            throw FileError(FileErrorCode::truncation, "tensor '" + it.key() + "' truncated");
        by_offset.emplace_back(e.offset, it.key());
        r.entries_[it.key()] = std::move(e);
    }
    std::sort(by_offset.begin(), by_offset.end());
    std::uint64_t expect = 0;
    for (const auto& [off, name] : by_offset) {
        if (off != expect)
            throw FileError(FileErrorCode::shape,
                            "tensor '" + name + "' shape/offset inconsistent with payload layout");
        expect = off + r.entries_[name].bytes;
        r.order_.push_back(name);
    }
    if (expect != declared_payload)
        throw FileError(FileErrorCode::shape, "payload size disagrees with shapes");

    r.payload_.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.end() - static_cast<std::ptrdiff_t>(tail));

    if (with_checksums) {
        for (const auto& [name, e] : r.entries_) {
            if (e.digest.empty())
                throw FileError(FileErrorCode::format, "tensor '" + name + "' missing digest");
            if (sha256_hex(r.payload_.data() + e.offset, e.bytes) != e.digest)
                throw FileError(FileErrorCode::checksum,
                                "tensor '" + name + "' blob digest mismatch");
        }
    }
    return r;
}

const BlobEntry& BlobReader::entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
        throw FileError(FileErrorCode::format, "missing array: " + name);
    return it->second;
}

const unsigned char* BlobReader::blob_ptr(const BlobEntry& e) const {
    return payload_.data() + e.offset;
}

std::vector<float> BlobReader::read_f32(const std::string& name) const {
    const BlobEntry& e = entry(name);
    if (e.dtype != "float32")
        throw FileError(FileErrorCode::format, "array '" + name + "' is not float32");
    std::vector<float> out(e.bytes / 4);
    std::memcpy(out.data(), blob_ptr(e), e.bytes);
    return out;
}

std::vector<std::int32_t> BlobReader::read_i32(const std::string& name) const {
    const BlobEntry& e = entry(name);
    if (e.dtype != "int32")
        throw FileError(FileErrorCode::format, "array '" + name + "' is not int32");
    std::vector<std::int32_t> out(e.bytes / 4);
    std::memcpy(out.data(), blob_ptr(e), e.bytes);
    return out;
}

}  // namespace geossl::io
