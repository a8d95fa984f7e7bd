#include <doctest.h>

#include <fstream>

#include "alprio/tensor_io.hpp"
#include "test_support.hpp"

using namespace alprio;

TEST_CASE("tensor container round-trips bit-exactly") {
    testing::TempDir dir("tensor");
    FloatTensor t({2, 3, 4});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i) * 0.37f - 1.5f;
    t[5] = -0.0f;
    t[7] = 1e-38f;
    write_tensor(dir / "a.alpt", t);
    const FloatTensor back = read_tensor(dir / "a.alpt");
    CHECK(back.shape == t.shape);
    CHECK(encode_tensor(back) == encode_tensor(t));
    CHECK(std::signbit(back[5]));
}

TEST_CASE("encoded header layout is magic, rank, u32 little-endian dims") {
    const FloatTensor t({2, 1}, std::vector<float>{1.0f, 2.0f});
    const auto bytes = encode_tensor(t);
    REQUIRE(bytes.size() == 5 + 1 + 2 * 4 + 2 * 4);
    CHECK(std::string(bytes.begin(), bytes.begin() + 5) == "ALPT1");
    CHECK(bytes[5] == 2);
    CHECK(bytes[6] == 2);
    CHECK(bytes[7] == 0);
    CHECK(bytes[10] == 1);
    // 1.0f little-endian is 00 00 80 3f.
    CHECK(bytes[14] == 0x00);
    CHECK(bytes[16] == 0x80);
    CHECK(bytes[17] == 0x3f);
}

TEST_CASE("corrupt containers are format errors naming the origin") {
    const FloatTensor t({3}, std::vector<float>{1, 2, 3});
    auto bytes = encode_tensor(t);
    SUBCASE("bad magic") {
        bytes[0] = 'X';
        CHECK_THROWS_WITH_AS(decode_tensor(bytes, "probe"), doctest::Contains("probe"), FormatError);
    }
    SUBCASE("truncated payload") {
        bytes.pop_back();
        CHECK_THROWS_AS(decode_tensor(bytes, "probe"), FormatError);
    }
    SUBCASE("truncated header") {
        bytes.resize(7);
        CHECK_THROWS_AS(decode_tensor(bytes, "probe"), FormatError);
    }
}

TEST_CASE("missing tensor file is an I/O error naming the path") {
    testing::TempDir dir("tensor-missing");
    CHECK_THROWS_WITH_AS(read_tensor(dir / "nope.alpt"), doctest::Contains("nope.alpt"), IoError);
}

TEST_CASE("text helpers round-trip") {
    testing::TempDir dir("text");
    write_text_file(dir / "sub" / "x.txt", "line1\nline2\n");
    CHECK(read_text_file(dir / "sub" / "x.txt") == "line1\nline2\n");
}
