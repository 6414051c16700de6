#pragma once

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "atoken/binary_io.hpp"

// Golden feature maps live in tests/golden. Set ATOKEN_REGEN_GOLDEN=1 to
// rewrite them instead of comparing.
inline void expect_matches_golden(const atoken::FeatureMap& fm, const std::string& name) {
    std::string path = std::string(ATOKEN_GOLDEN_DIR) + "/" + name;
    if (std::getenv("ATOKEN_REGEN_GOLDEN")) {
        atoken::write_feature_map(path, fm);
        GTEST_SKIP() << "regenerated " << path;
    }
    ASSERT_TRUE(std::filesystem::exists(path)) << "missing golden file " << path;
    EXPECT_EQ(atoken::read_file_bytes(path), atoken::encode_feature_map(fm)) << "differs from " << path;
}
