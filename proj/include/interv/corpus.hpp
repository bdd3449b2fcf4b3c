#pragma once

// Tokenized data batches with document boundaries and raw-text sidecars.
//
// On disk a batch is three files: a flat little-endian u32 token array with
// no header, a doc index (one {doc_id, batch_id, token_start, token_end}
// record per line) and a text sidecar (one {doc_id, text} record per line).
// The manifest ties batches together and carries the tokenizer id, sequence
// length and pad token.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "interv/io.hpp"

namespace interv {

using token_t = std::uint32_t;
using batch_id_t = std::int64_t;

struct batch_descriptor {
    batch_id_t batch_id = 0;
    std::filesystem::path token_file;
    std::uint64_t token_count = 0;
    std::filesystem::path doc_index;
    std::filesystem::path text_sidecar;
};

struct corpus_manifest {
    std::vector<batch_descriptor> batches;  // ordered by training step
    std::string tokenizer_id;
    std::size_t sequence_length = 0;
    token_t pad_token = 0;
    std::filesystem::path base_dir;  // relative paths resolve against this

    const batch_descriptor& find(batch_id_t id) const {
        for (const auto& b : batches)
            if (b.batch_id == id) return b;
        throw error("corpus", "unknown batch_id " + std::to_string(id));
    }

    bool contains(batch_id_t id) const {
        return std::any_of(batches.begin(), batches.end(),
                           [&](const batch_descriptor& b) { return b.batch_id == id; });
    }

    std::optional<batch_id_t> successor(batch_id_t id) const {
        for (std::size_t i = 0; i + 1 < batches.size(); ++i)
            if (batches[i].batch_id == id) return batches[i + 1].batch_id;
        return std::nullopt;
    }

    std::filesystem::path resolve(const std::filesystem::path& p) const {
        return p.is_absolute() ? p : base_dir / p;
    }
};

struct document {
    std::string doc_id;
    batch_id_t batch_id = 0;
    std::size_t token_start = 0;
    std::size_t token_end = 0;  // exclusive
    std::string text;

    std::size_t length() const { return token_end - token_start; }

    friend bool operator==(const document&, const document&) = default;
};

/// An immutable view of one data batch. The token buffer is shared, so
/// copies are cheap and rewrites always produce a new buffer.
class data_batch {
public:
    data_batch() : tokens_(std::make_shared<const std::vector<token_t>>()),
                   docs_(std::make_shared<const doc_table>()) {}

    /// Validates span invariants: every span is non-empty, inside the buffer,
    /// sorted by start and disjoint from its neighbours; doc ids are unique.
    data_batch(batch_id_t id, std::vector<token_t> tokens, std::vector<document> docs)
        : id_(id), tokens_(std::make_shared<const std::vector<token_t>>(std::move(tokens))) {
        validate(docs);
        auto table = std::make_shared<doc_table>();
        table->docs = std::move(docs);
        for (std::size_t i = 0; i < table->docs.size(); ++i)
            table->index.emplace(table->docs[i].doc_id, i);
        docs_ = std::move(table);
    }

    batch_id_t id() const { return id_; }
    std::span<const token_t> tokens() const { return *tokens_; }
    std::size_t token_count() const { return tokens_->size(); }
    const std::vector<document>& documents() const { return docs_->docs; }
    bool empty() const { return docs_->docs.empty() && tokens_->empty(); }

    std::span<const token_t> tokens_of(const document& d) const {
        return tokens().subspan(d.token_start, d.length());
    }

    const document* find(std::string_view doc_id) const {
        auto it = docs_->index.find(std::string(doc_id));
        return it == docs_->index.end() ? nullptr : &docs_->docs[it->second];
    }

    friend bool operator==(const data_batch& a, const data_batch& b) {
        return a.id_ == b.id_ && *a.tokens_ == *b.tokens_ && a.docs_->docs == b.docs_->docs;
    }

private:
    struct doc_table {
        std::vector<document> docs;
        std::unordered_map<std::string, std::size_t> index;
    };

    void validate(const std::vector<document>& docs) const {
        std::set<std::string_view> seen;
        std::size_t prev_end = 0;
        const document* prev = nullptr;
        for (const auto& d : docs) {
            if (d.token_end <= d.token_start)
                throw error("corpus", "batch " + std::to_string(id_) + " doc " + d.doc_id +
                                          ": empty or inverted span");
            if (d.token_end > tokens_->size())
                throw error("corpus", "batch " + std::to_string(id_) + " doc " + d.doc_id +
                                          ": span exceeds token_count");
            if (prev && d.token_start < prev_end)
                throw error("corpus", "batch " + std::to_string(id_) + " doc " + d.doc_id +
                                          ": overlapping spans with doc " + prev->doc_id);
            if (!seen.insert(d.doc_id).second)
                throw error("corpus", "batch " + std::to_string(id_) + ": duplicate doc_id " +
                                          d.doc_id);
            prev_end = d.token_end;
            prev = &d;
        }
    }

    batch_id_t id_ = 0;
    std::shared_ptr<const std::vector<token_t>> tokens_;
    std::shared_ptr<const doc_table> docs_;
};

namespace detail {

inline std::vector<token_t> decode_tokens(const std::string& bytes) {
    std::vector<token_t> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + 4 * i);
        out[i] = token_t(p[0]) | token_t(p[1]) << 8 | token_t(p[2]) << 16 | token_t(p[3]) << 24;
    }
    return out;
}

inline std::string encode_tokens(std::span<const token_t> tokens) {
    std::string out(tokens.size() * 4, '\0');
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const token_t t = tokens[i];
        out[4 * i + 0] = static_cast<char>(t & 0xff);
        out[4 * i + 1] = static_cast<char>((t >> 8) & 0xff);
        out[4 * i + 2] = static_cast<char>((t >> 16) & 0xff);
        out[4 * i + 3] = static_cast<char>((t >> 24) & 0xff);
    }
    return out;
}

struct index_entry {
    std::string doc_id;
    batch_id_t batch_id;
    std::size_t token_start;
    std::size_t token_end;
};

inline std::vector<index_entry> read_doc_index(const std::filesystem::path& path) {
    std::vector<index_entry> out;
    for_each_record(path, "corpus", [&](const json& r, std::size_t) {
        out.push_back({r.at("doc_id").get<std::string>(), r.at("batch_id").get<batch_id_t>(),
                       r.at("token_start").get<std::size_t>(),
                       r.at("token_end").get<std::size_t>()});
    });
    return out;
}

inline void check_index(const batch_descriptor& b, const std::vector<index_entry>& entries) {
    const std::string where = "batch " + std::to_string(b.batch_id);
    std::size_t prev_end = 0;
    const index_entry* prev = nullptr;
    for (const auto& e : entries) {
        if (e.batch_id != b.batch_id)
            throw error("corpus", where + " doc " + e.doc_id + ": index names batch " +
                                      std::to_string(e.batch_id));
        if (e.token_end <= e.token_start || e.token_end > b.token_count)
            throw error("corpus", where + " doc " + e.doc_id + ": span [" +
                                      std::to_string(e.token_start) + "," +
                                      std::to_string(e.token_end) + ") out of range");
        if (prev && e.token_start < prev->token_start)
            throw error("corpus", where + " doc " + e.doc_id + ": spans not sorted by start");
        if (prev && e.token_start < prev_end)
            throw error("corpus", where + " doc " + e.doc_id + ": overlapping spans with doc " +
                                      prev->doc_id);
        prev_end = e.token_end;
        prev = &e;
    }
}

}  // namespace detail

/// Parses and validates a manifest. Token buffers are not read; only file
/// sizes and doc index spans are checked.
inline corpus_manifest load_manifest(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    if (!fs::exists(path)) throw error("corpus", "missing manifest " + path.string());
    json j;
    try {
        j = json::parse(read_file(path, "corpus"));
    } catch (const json::parse_error& e) {
        throw error("corpus", "manifest " + path.string() + " does not parse: " + e.what());
    }

    corpus_manifest m;
    m.base_dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    try {
        m.tokenizer_id = j.value("tokenizer_id", std::string());
        m.sequence_length = j.at("sequence_length").get<std::size_t>();
        m.pad_token = j.value("pad_token", token_t{0});
        for (const auto& b : j.at("batches")) {
            batch_descriptor d;
            d.batch_id = b.at("batch_id").get<batch_id_t>();
            d.token_file = b.at("token_file").get<std::string>();
            d.token_count = b.at("token_count").get<std::uint64_t>();
            d.doc_index = b.at("doc_index").get<std::string>();
            d.text_sidecar = b.at("text_sidecar").get<std::string>();
            m.batches.push_back(std::move(d));
        }
    } catch (const json::exception& e) {
        throw error("corpus", "manifest " + path.string() + ": " + e.what());
    }
    if (m.sequence_length == 0) throw error("corpus", "sequence_length must be positive");

    for (std::size_t i = 0; i < m.batches.size(); ++i) {
        const auto& b = m.batches[i];
        if (i > 0 && b.batch_id <= m.batches[i - 1].batch_id)
            throw error("corpus", "batch_ids must be unique and increasing (batch " +
                                      std::to_string(b.batch_id) + ")");
        const auto tok = m.resolve(b.token_file);
        if (!fs::exists(tok))
            throw error("corpus", "batch " + std::to_string(b.batch_id) + ": missing token file " +
                                      tok.string());
        const auto bytes = fs::file_size(tok);
        if (bytes != b.token_count * 4)
            throw error("corpus", "batch " + std::to_string(b.batch_id) + ": size mismatch (" +
                                      std::to_string(bytes) + " bytes, token_count " +
                                      std::to_string(b.token_count) + ")");
        detail::check_index(b, detail::read_doc_index(m.resolve(b.doc_index)));
    }
    return m;
}

inline data_batch read_batch(const corpus_manifest& m, batch_id_t id) {
    const auto& b = m.find(id);
    const std::string bytes = read_file(m.resolve(b.token_file), "corpus");
    if (bytes.size() != b.token_count * 4)
        throw error("corpus", "batch " + std::to_string(id) + ": size mismatch");
    auto entries = detail::read_doc_index(m.resolve(b.doc_index));
    detail::check_index(b, entries);

    std::unordered_map<std::string, std::string> text;
    for_each_record(m.resolve(b.text_sidecar), "corpus", [&](const json& r, std::size_t) {
        text.emplace(r.at("doc_id").get<std::string>(), r.at("text").get<std::string>());
    });

    std::vector<std::string> missing;
    std::vector<document> docs;
    docs.reserve(entries.size());
    for (auto& e : entries) {
        auto it = text.find(e.doc_id);
        if (it == text.end()) {
            missing.push_back(e.doc_id);
            continue;
        }
        docs.push_back({std::move(e.doc_id), id, e.token_start, e.token_end, std::move(it->second)});
        text.erase(it);
    }
    if (!missing.empty()) {
        std::string ids;
        for (const auto& s : missing) ids += (ids.empty() ? "" : ", ") + s;
        throw error("corpus", "batch " + std::to_string(id) + ": sidecar lacks doc_id(s) " + ids);
    }
    if (!text.empty()) {
        std::set<std::string> extra;
        for (const auto& [k, _] : text) extra.insert(k);
        std::string ids;
        for (const auto& s : extra) ids += (ids.empty() ? "" : ", ") + s;
        throw error("corpus", "batch " + std::to_string(id) + ": sidecar has unindexed doc_id(s) " + ids);
    }
    return data_batch(id, detail::decode_tokens(bytes), std::move(docs));
}

/// Writes the three batch files into `out_dir` as batch_<id>.{tokens,docs.jsonl,text.jsonl}
/// and returns a descriptor with paths relative to `out_dir`.
inline batch_descriptor write_batch(const data_batch& batch, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const std::string stem = "batch_" + std::to_string(batch.id());
    batch_descriptor d;
    d.batch_id = batch.id();
    d.token_file = stem + ".tokens";
    d.doc_index = stem + ".docs.jsonl";
    d.text_sidecar = stem + ".text.jsonl";
    d.token_count = batch.token_count();

    std::vector<json> index, sidecar;
    index.reserve(batch.documents().size());
    sidecar.reserve(batch.documents().size());
    for (const auto& doc : batch.documents()) {
        index.push_back({{"doc_id", doc.doc_id},
                         {"batch_id", batch.id()},
                         {"token_start", doc.token_start},
                         {"token_end", doc.token_end}});
        sidecar.push_back({{"doc_id", doc.doc_id}, {"text", doc.text}});
    }
    write_file_atomic(out_dir / d.token_file, detail::encode_tokens(batch.tokens()));
    write_records(out_dir / d.doc_index, index);
    write_records(out_dir / d.text_sidecar, sidecar);
    return d;
}

inline json manifest_to_json(const corpus_manifest& m) {
    json batches = json::array();
    for (const auto& b : m.batches)
        batches.push_back({{"batch_id", b.batch_id},
                           {"token_file", b.token_file.generic_string()},
                           {"token_count", b.token_count},
                           {"doc_index", b.doc_index.generic_string()},
                           {"text_sidecar", b.text_sidecar.generic_string()}});
    return {{"tokenizer_id", m.tokenizer_id},
            {"sequence_length", m.sequence_length},
            {"pad_token", m.pad_token},
            {"batches", std::move(batches)}};
}

inline void write_manifest(const corpus_manifest& m, const std::filesystem::path& path) {
    write_file_atomic(path, manifest_to_json(m).dump(2) + "\n");
}

}  // namespace interv
