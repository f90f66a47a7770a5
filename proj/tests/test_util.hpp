#pragma once

#include <string>

#include <gtest/gtest.h>

#include "trot/error.hpp"

// Expects `stmt` to throw trot::Error carrying `tag`.
#define EXPECT_TROT_ERROR(stmt, tag)                                       \
  do {                                                                     \
    try {                                                                  \
      stmt;                                                                \
      ADD_FAILURE() << "expected error '" << (tag) << "'";                 \
    } catch (const trot::Error& e) {                                       \
      EXPECT_EQ(e.code(), std::string(tag)) << e.what();                   \
    }                                                                      \
  } while (0)
