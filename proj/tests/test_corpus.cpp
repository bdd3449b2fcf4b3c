#include <gtest/gtest.h>

#include <fstream>

#include "oracles.hpp"

using namespace interv;
namespace fs = std::filesystem;

namespace {

data_batch three_docs(batch_id_t id = 10) {
    return oracle::make_batch(id, {{"a", "alpha text", {1, 2, 3}}, {"b", "beta", {4, 5}}, {"c", "gamma words here", {6, 7, 8, 9}}},
                              1);
}

corpus_manifest write_two_batch_corpus(const fs::path& dir) {
    corpus_manifest m;
    m.tokenizer_id = "test";
    m.sequence_length = 8;
    m.base_dir = dir;
    std::vector<oracle::doc_spec> d1, d2;
    std::vector<token_t> t(500);
    for (std::size_t i = 0; i < 500; ++i) t[i] = static_cast<token_t>(i);
    d1.push_back({"x1", "first", t});
    d1.push_back({"x2", "second", t});
    d2.push_back({"y1", "third", t});
    d2.push_back({"y2", "fourth", t});
    m.batches.push_back(write_batch(oracle::make_batch(1, d1), dir));
    m.batches.push_back(write_batch(oracle::make_batch(2, d2), dir));
    write_manifest(m, dir / "manifest.json");
    return m;
}

std::string expect_error(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const error& e) {
        return e.what();
    }
    ADD_FAILURE() << "no error thrown";
    return {};
}

}  // namespace

TEST(Corpus, ManifestWithTwoBatches) {
    const auto dir = oracle::scratch_dir("corpus_two");
    write_two_batch_corpus(dir);
    const auto m = load_manifest(dir / "manifest.json");
    ASSERT_EQ(m.batches.size(), 2u);
    EXPECT_EQ(m.batches[0].token_count, 1000u);
    EXPECT_EQ(m.batches[1].token_count, 1000u);
    EXPECT_EQ(m.successor(1), std::optional<batch_id_t>(2));
    EXPECT_FALSE(m.successor(2));
}

TEST(Corpus, SizeMismatchIsReported) {
    const auto dir = oracle::scratch_dir("corpus_size");
    const auto m = write_two_batch_corpus(dir);
    const auto tok = dir / m.batches[0].token_file;
    std::string bytes = read_file(tok);
    bytes.resize(3999);
    oracle::write_text(tok, bytes);
    EXPECT_NE(expect_error([&] { load_manifest(dir / "manifest.json"); }).find("size mismatch"), std::string::npos);
}

TEST(Corpus, OverlappingSpansAreReported) {
    const auto dir = oracle::scratch_dir("corpus_overlap");
    const auto m = write_two_batch_corpus(dir);
    std::vector<json> idx = {{{"doc_id", "x1"}, {"batch_id", 1}, {"token_start", 0}, {"token_end", 10}},
                             {{"doc_id", "x2"}, {"batch_id", 1}, {"token_start", 8}, {"token_end", 20}}};
    write_records(dir / m.batches[0].doc_index, idx);
    const auto msg = expect_error([&] { load_manifest(dir / "manifest.json"); });
    EXPECT_NE(msg.find("overlapping spans"), std::string::npos);
    EXPECT_NE(msg.find("batch 1"), std::string::npos);
    EXPECT_NE(msg.find("x2"), std::string::npos);
}

TEST(Corpus, MissingManifest) {
    EXPECT_THROW(load_manifest("/nonexistent/manifest.json"), error);
}

TEST(Corpus, ReadBatchKeepsStartOrder) {
    const auto dir = oracle::scratch_dir("corpus_order");
    const auto b = three_docs();
    corpus_manifest m;
    m.sequence_length = 4;
    m.batches.push_back(write_batch(b, dir));
    write_manifest(m, dir / "manifest.json");
    const auto r = read_batch(load_manifest(dir / "manifest.json"), 10);
    ASSERT_EQ(r.documents().size(), 3u);
    EXPECT_EQ(r.documents()[0].doc_id, "a");
    EXPECT_EQ(r.documents()[1].doc_id, "b");
    EXPECT_EQ(r.documents()[2].doc_id, "c");
    EXPECT_EQ(r, b);
}

TEST(Corpus, EmptyBatchRoundTrips) {
    const auto dir = oracle::scratch_dir("corpus_empty");
    const data_batch empty(3, {}, {});
    corpus_manifest m;
    m.sequence_length = 4;
    m.batches.push_back(write_batch(empty, dir));
    write_manifest(m, dir / "manifest.json");
    const auto r = read_batch(load_manifest(dir / "manifest.json"), 3);
    EXPECT_TRUE(r.empty());
    EXPECT_EQ(r.token_count(), 0u);
}

TEST(Corpus, SidecarMissingDocIsNamed) {
    const auto dir = oracle::scratch_dir("corpus_sidecar");
    corpus_manifest m;
    m.sequence_length = 4;
    m.batches.push_back(write_batch(three_docs(), dir));
    write_manifest(m, dir / "manifest.json");
    write_records(dir / m.batches[0].text_sidecar, {{{"doc_id", "a"}, {"text", "x"}}, {{"doc_id", "c"}, {"text", "y"}}});
    const auto msg = expect_error([&] { read_batch(load_manifest(dir / "manifest.json"), 10); });
    EXPECT_NE(msg.find("b"), std::string::npos);
    EXPECT_NE(msg.find("sidecar lacks"), std::string::npos);
}

TEST(Corpus, UnknownBatchId) {
    const auto dir = oracle::scratch_dir("corpus_unknown");
    write_two_batch_corpus(dir);
    const auto m = load_manifest(dir / "manifest.json");
    EXPECT_THROW(read_batch(m, 99), error);
}

TEST(Corpus, WriteIsByteIdenticalForUnmodifiedBatch) {
    const auto dir = oracle::scratch_dir("corpus_identity");
    const auto m = write_two_batch_corpus(dir);
    const auto b = read_batch(load_manifest(dir / "manifest.json"), 1);
    write_batch(b, dir / "copy");
    EXPECT_EQ(read_file(dir / m.batches[0].token_file), read_file(dir / "copy" / m.batches[0].token_file));
}

TEST(Corpus, TokensAreLittleEndian) {
    const auto dir = oracle::scratch_dir("corpus_le");
    const data_batch b(1, {0x01020304u, 0xA0B0C0D0u}, {{"d", 1, 0, 2, "t"}});
    const auto d = write_batch(b, dir);
    const auto bytes = read_file(dir / d.token_file);
    ASSERT_EQ(bytes.size(), 8u);
    EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 0x04);
    EXPECT_EQ(static_cast<unsigned char>(bytes[3]), 0x01);
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 0xD0);
    EXPECT_EQ(static_cast<unsigned char>(bytes[7]), 0xA0);
}

TEST(Corpus, RoundTripRandomBatches) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const auto dir = oracle::scratch_dir("corpus_rt");
        const auto b = oracle::random_packed_batch(rng, 5, 4, 16, 6, "p", 100);
        corpus_manifest m;
        m.sequence_length = 16;
        m.batches.push_back(write_batch(b, dir));
        write_manifest(m, dir / "manifest.json");
        const auto m2 = load_manifest(dir / "manifest.json");
        const auto r = read_batch(m2, 5);
        EXPECT_EQ(r, b);
        write_batch(r, dir / "again");
        EXPECT_EQ(read_batch(m2, 5), r);
    }
}

TEST(Corpus, SpanInvariantsRejectBadBatches) {
    EXPECT_THROW(data_batch(1, {1, 2, 3}, {{"a", 1, 0, 2, ""}, {"b", 1, 1, 3, ""}}), error);
    EXPECT_THROW(data_batch(1, {1, 2, 3}, {{"a", 1, 0, 4, ""}}), error);
    EXPECT_THROW(data_batch(1, {1, 2, 3}, {{"a", 1, 2, 2, ""}}), error);
    EXPECT_THROW(data_batch(1, {1, 2, 3}, {{"a", 1, 0, 1, ""}, {"a", 1, 1, 2, ""}}), error);
    EXPECT_NO_THROW(data_batch(1, {1, 2, 3}, {{"a", 1, 0, 1, ""}, {"b", 1, 2, 3, ""}}));
}

TEST(Corpus, CopiesShareTheBuffer) {
    const auto b = three_docs();
    const data_batch c = b;
    EXPECT_EQ(b.tokens().data(), c.tokens().data());
}

TEST(Io, AtomicWriteLeavesNoTempFile) {
    const auto dir = oracle::scratch_dir("io_atomic");
    write_file_atomic(dir / "f.txt", "hello");
    write_file_atomic(dir / "f.txt", "again");
    EXPECT_EQ(read_file(dir / "f.txt"), "again");
    std::size_t n = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++n;
    EXPECT_EQ(n, 1u);
}

TEST(Io, MalformedRecordLineIsReported) {
    const auto dir = oracle::scratch_dir("io_malformed");
    oracle::write_text(dir / "r.jsonl", "{\"a\":1}\n{oops\n");
    try {
        read_records(dir / "r.jsonl", "io");
        FAIL();
    } catch (const error& e) {
        EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
    }
}

TEST(Io, Fnv1aKnownVectors) {
    EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Items, RoundTripAndValidation) {
    const auto dir = oracle::scratch_dir("items");
    eval_item it{"q1", "The capital city of France is", {"Paris", "Lyon"}, 0, "France", "Paris", "capital", "pararel"};
    save_items(dir / "items.jsonl", {it});
    const auto back = load_items(dir / "items.jsonl");
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].answer(), "Paris");
    EXPECT_EQ(back[0].subject, it.subject);
    EXPECT_THROW(item_from_json({{"item_id", "q"}, {"question", "x"}, {"choices", {"a"}}, {"answer_index", 0}}), error);
    EXPECT_THROW(item_from_json({{"item_id", "q"}, {"question", "x"}, {"choices", {"a", "b"}}, {"answer_index", 2}}), error);
}
