#include <gtest/gtest.h>

#include "ssn/gradcheck.hpp"

TEST(GradcheckSuite, EveryOpAndLayerWithinTolerance) {
  for (const auto& r : ssn::gradcheck::run_suite(7, 10)) {
    EXPECT_TRUE(r.passed()) << r.name << ": " << r.worst_error << " >= " << r.tolerance;
  }
}
