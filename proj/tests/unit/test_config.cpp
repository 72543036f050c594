#include <gtest/gtest.h>

#include "nmt/config.hpp"

using nmt::InvalidArgument;
using nmt::KeyValueConfig;

TEST(Config, ParsesCommentsAndWhitespace) {
    const auto c = KeyValueConfig::parse_string("# header\n a = 1.5 # trailing\n\nname=  hello world \n");
    EXPECT_DOUBLE_EQ(c.get_double("a"), 1.5);
    EXPECT_EQ(c.get_string("name"), "hello world");
    EXPECT_FALSE(c.has("header"));
    EXPECT_THROW(static_cast<void>(KeyValueConfig::parse_string("novalue\n")), InvalidArgument);
    EXPECT_THROW(static_cast<void>(KeyValueConfig::parse_string(" = 3\n")), InvalidArgument);
}

TEST(Config, TypedGetters) {
    auto c = KeyValueConfig::parse_string("i = 12\nx = 0.25\nbad = 1.5x\nseed = 18446744073709551615\n");
    EXPECT_EQ(c.get_int("i"), 12);
    EXPECT_THROW(static_cast<void>(c.get_int("x")), InvalidArgument);
    EXPECT_THROW(static_cast<void>(c.get_double("bad")), InvalidArgument);
    EXPECT_THROW(static_cast<void>(c.get_double("missing")), InvalidArgument);
    EXPECT_DOUBLE_EQ(c.get_double("missing", 3.0), 3.0);
    EXPECT_FALSE(c.get_optional("missing"));
    EXPECT_EQ(c.get_u64("seed", 0), 18446744073709551615ULL);
}

TEST(Config, ListsAndRanges) {
    const auto c = KeyValueConfig::parse_string("a = 1, 2,3\nr = 0:0.5:2\ns = 0:0.05:4\nbad = 1:0:2\nempty =\n");
    EXPECT_EQ(c.get_list("a"), (std::vector<double>{1, 2, 3}));
    EXPECT_EQ(c.get_list("r"), (std::vector<double>{0, 0.5, 1, 1.5, 2}));
    EXPECT_EQ(c.get_list("s").size(), 81U);
    EXPECT_THROW(static_cast<void>(c.get_list("bad")), InvalidArgument);
    EXPECT_TRUE(c.get_list("empty").empty());
}

TEST(Config, OverridesAndCanonicalForm) {
    auto c = KeyValueConfig::parse_string("b = 2\na = 1\n");
    c.set_assignment("b=3");
    c.set("c", 0.1);
    EXPECT_EQ(c.canonical(), "a = 1\nb = 3\nc = 0.1\n");
    auto d = KeyValueConfig::parse_string(c.canonical());
    EXPECT_EQ(d.canonical(), c.canonical());
    EXPECT_NE(nmt::fnv1a64(c.canonical()), nmt::fnv1a64("a = 1\nb = 2\n"));
    EXPECT_EQ(nmt::fnv1a64(""), 0xcbf29ce484222325ULL);
}
