#pragma once

// Line-delimited JSON records, atomic file output and provenance hashing.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace interv {

using json = nlohmann::json;

/// Base class for every error raised by the library. `stage` names the
/// component that failed so the CLI can map it to an exit code.
class error : public std::runtime_error {
public:
    error(std::string stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

inline std::string read_file(const std::filesystem::path& path, std::string_view stage = "io") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error(std::string(stage), "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Calls `fn(record, line_number)` for each non-blank line. Line numbers are
/// 1-based and appear in parse errors.
inline void for_each_record(const std::filesystem::path& path, std::string_view stage,
                            const std::function<void(const json&, std::size_t)>& fn) {
    std::ifstream in(path);
    if (!in) throw error(std::string(stage), "cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw error(std::string(stage), path.string() + ":" + std::to_string(lineno) +
                                                ": malformed line (" + e.what() + ")");
        }
        try {
            fn(rec, lineno);
        } catch (const json::exception& e) {
            throw error(std::string(stage), path.string() + ":" + std::to_string(lineno) +
                                                ": bad record (" + e.what() + ")");
        }
    }
}

inline std::vector<json> read_records(const std::filesystem::path& path, std::string_view stage) {
    std::vector<json> out;
    for_each_record(path, stage, [&](const json& r, std::size_t) { out.push_back(r); });
    return out;
}

/// Writes `content` to a sibling temp file and renames it over `path`, so a
/// reader never observes a partial artifact.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw error("io", "cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw error("io", "short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string dump_records(const std::vector<json>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.dump();
        out += '\n';
    }
    return out;
}

inline void write_records(const std::filesystem::path& path, const std::vector<json>& records) {
    write_file_atomic(path, dump_records(records));
}

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << v;
    return ss.str();
}

/// Hash of the canonical (key-sorted, compact) serialization.
inline std::string content_hash(const json& j) { return hex64(fnv1a(j.dump())); }

}  // namespace interv
