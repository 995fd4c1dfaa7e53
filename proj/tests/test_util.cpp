#include "ram2c/error.hpp"
#include "ram2c/util.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <set>

using namespace ram2c;

TEST(Fnv1a64, PublishedVectors) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Fnv1a64, ChainingEqualsConcatenation) {
    EXPECT_EQ(fnv1a64("bar", fnv1a64("foo")), fnv1a64("foobar"));
}

TEST(Hex, FixedWidth) {
    EXPECT_EQ(to_hex(0), "0000000000000000");
    EXPECT_EQ(to_hex(0xabcULL), "0000000000000abc");
}

TEST(SplitMix64, ReferenceSequenceFromZero) {
    // First outputs of the reference implementation seeded with 0.
    std::uint64_t s = 0;
    EXPECT_EQ(splitmix64(s), 0xe220a8397b1dcdafULL);
    EXPECT_EQ(splitmix64(s), 0x6e789e6aa1b965f4ULL);
}

TEST(MakeId, PrefixAndUniqueness) {
    std::set<std::string> ids;
    for (int i = 0; i < 1000; ++i) {
        auto id = make_id("rec");
        ASSERT_EQ(id.rfind("rec-", 0), 0u);
        ASSERT_EQ(id.size(), 4u + 16u);
        ids.insert(id);
    }
    EXPECT_EQ(ids.size(), 1000u);
}

TEST(Utf8, RoundTripMixedScripts) {
    const std::string s = "aé中\U0001F600z";
    auto cps = utf8_decode(s);
    ASSERT_EQ(cps.size(), 5u);
    EXPECT_EQ(cps[2], U'中');
    EXPECT_EQ(cps[3], U'\U0001F600');
    EXPECT_EQ(utf8_encode(cps, 0, cps.size()), s);
    EXPECT_EQ(utf8_encode(cps, 1, 3), "é中");
}

TEST(Utf8, InvalidBytesBecomeReplacement) {
    auto cps = utf8_decode("a\xff" "b\xe4\xb8");
    ASSERT_EQ(cps.size(), 4u);
    EXPECT_EQ(cps[1], U'�');
    EXPECT_EQ(cps[2], U'b');
    EXPECT_EQ(cps[3], U'�');
}

TEST(Strings, TrimAndSplit) {
    EXPECT_EQ(trim("  x y \n"), "x y");
    EXPECT_EQ(trim(" \t "), "");
    EXPECT_EQ(split("a,,b", ','), (std::vector<std::string>{"a", "", "b"}));
}

TEST(Files, AtomicWriteCreatesParentsAndReplaces) {
    ram2c::testing::TempDir dir;
    auto p = dir / "a/b/c.txt";
    write_file_atomic(p, "one");
    write_file_atomic(p, "two");
    EXPECT_EQ(read_file(p), "two");
    for (const auto& e : std::filesystem::directory_iterator(p.parent_path()))
        EXPECT_EQ(e.path().filename(), "c.txt");
}

TEST(Files, MissingFileIsUnreadable) {
    try {
        read_file("/nonexistent/ram2c");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::unreadable_file);
    }
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
    std::vector<std::atomic<int>> hits(500);
    parallel_for(hits.size(), 8, [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(ParallelFor, RethrowsAfterJoin) {
    std::atomic<int> ran{0};
    EXPECT_THROW(parallel_for(64, 4,
                              [&](std::size_t i) {
                                  ran++;
                                  if (i == 10) fail(Errc::precondition, "boom");
                              }),
                 Error);
    EXPECT_GE(ran.load(), 1);
}

TEST(Errc, KebabNames) {
    EXPECT_EQ(to_string(Errc::backend_unreachable), "backend-unreachable");
    EXPECT_EQ(to_string(Errc::config_not_found), "config-not-found");
    EXPECT_EQ(to_string(Errc::invalid_flag), "invalid-flag");
}
