#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace geossl::io {

/// Error categories for the on-disk containers. Each carries a stable
/// numeric code so callers and tests can distinguish failure modes.
enum class FileErrorCode : int {
    format = 10,      // bad magic, malformed header, unsupported version
    shape = 11,       // header shape inconsistent with payload extents
    truncation = 12,  // file ends before a declared blob
    checksum = 13,    // per-tensor or whole-file digest mismatch
};

class FileError : public std::runtime_error {
public:
    FileError(FileErrorCode code, const std::string& msg)
        : std::runtime_error(msg), code_(code) {}
    FileErrorCode code() const { return code_; }

private:
    FileErrorCode code_;
};

std::string sha256_hex(const void* data, std::size_t n);

/// One named array inside a container file.
struct BlobEntry {
    std::string dtype;  // "float32" | "int32"
    std::vector<int> shape;
    std::uint64_t offset = 0;  // relative to payload start
    std::uint64_t bytes = 0;
    std::string digest;  // per-blob sha256 (checkpoint files only)
};

std::uint64_t dtype_size(const std::string& dtype);
std::uint64_t shape_bytes(const std::string& dtype, const std::vector<int>& shape);

/// Writer for "<magic>\n + u64 header length + JSON header + raw blobs"
/// containers. Blob order follows insertion order; offsets are assigned on
/// write. With `with_checksums`, per-blob sha256 digests go into the header
/// and a whole-file sha256 (32 raw bytes) is appended.
class BlobWriter {
public:
    explicit BlobWriter(std::string magic) : magic_(std::move(magic)) {}

    void add_f32(const std::string& name, std::vector<int> shape, const float* data);
    void add_i32(const std::string& name, std::vector<int> shape, const std::int32_t* data);
    void set_meta(std::string meta_json) { meta_json_ = std::move(meta_json); }

    void write(const std::string& path, bool with_checksums) const;

private:
    void add_raw(const std::string& name, const std::string& dtype, std::vector<int> shape,
                 const void* data, std::uint64_t bytes);

    std::string magic_;
    std::string meta_json_ = "null";
    std::vector<std::string> order_;
    std::map<std::string, BlobEntry> entries_;
    std::vector<std::vector<unsigned char>> buffers_;
    std::map<std::string, std::size_t> buffer_of_;
};

/// Parsed container. Payload is held in memory; typed accessors validate
/// dtype and bounds.
class BlobReader {
public:
    static BlobReader open(const std::string& path, const std::string& magic,
                           bool with_checksums);

    const std::vector<std::string>& names() const { return order_; }
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    const BlobEntry& entry(const std::string& name) const;
    const std::string& meta_json() const { return meta_json_; }
    const std::string& header_json() const { return header_json_; }

    std::vector<float> read_f32(const std::string& name) const;
    std::vector<std::int32_t> read_i32(const std::string& name) const;

private:
    const unsigned char* blob_ptr(const BlobEntry& e) const;

    std::vector<std::string> order_;
    std::map<std::string, BlobEntry> entries_;
    std::vector<unsigned char> payload_;
    std::string meta_json_;
    std::string header_json_;
};

}  // namespace geossl::io
