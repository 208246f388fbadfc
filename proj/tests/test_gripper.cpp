#include <catch2/catch_amalgamated.hpp>

#include "crossgrip/gripper.hpp"

using namespace crossgrip;
using Catch::Approx;

TEST_CASE("mapping parameters derive from plain geometry") {
  const GripperConfig ref{"G0", 0.200, 0.080, 0.0};
  const GripperConfig novel{"G5", 0.210, 0.115, 0.0};
  const GripperMapping m = derive_mapping(ref, novel);
  CHECK(m.delta_h == Approx(-0.010).margin(1e-15));
  CHECK(m.alpha == Approx(0.080 / 0.115).epsilon(1e-15));

  const GripperMapping m4 = derive_mapping(ref, {"G4", 0.160, 0.100, 0.0});
  CHECK(m4.delta_h == Approx(0.040).margin(1e-15));
  CHECK(m4.alpha == Approx(0.8).epsilon(1e-15));
}

TEST_CASE("height mapping is additive, width mapping multiplicative") {
  const GripperMapping m{0.035, 0.8};
  CHECK(map_height(0.10, m) == Approx(0.135).margin(1e-15));
  CHECK(map_width(0.05, m) == Approx(0.04).epsilon(1e-15));
  // Command inversion: a reference-scale command divided by alpha actuates
  // the same mapped width.
  const double cmd = 0.063;
  CHECK(map_width(unmap_width_command(cmd, m), m) == Approx(cmd).epsilon(1e-12));
}

TEST_CASE("identity mapping and self-derivation agree") {
  const GripperConfig ref{"G0", 0.200, 0.080, 0.0};
  const GripperMapping self = derive_mapping(ref, ref);
  CHECK(self.delta_h == 0.0);
  CHECK(self.alpha == 1.0);
  CHECK(identity_mapping().delta_h == 0.0);
  CHECK(identity_mapping().alpha == 1.0);
  CHECK(map_height(0.123, identity_mapping()) == 0.123);
  CHECK(map_width(0.07, identity_mapping()) == 0.07);
}

TEST_CASE("gripper validation rejects non-physical geometry") {
  GripperConfig g{"X", 0.2, 0.08, 0.0};
  CHECK_NOTHROW(g.validate());

  GripperConfig bad = g;
  bad.finger_length = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = g;
  bad.finger_length = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = g;
  bad.width_min = -0.01;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = g;
  bad.width_min = 0.08;  // width_min must be strictly below width_max
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = g;
  bad.width_min = 0.09;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("out-of-envelope geometry warns but validates") {
  GripperConfig g{"Y", 0.30, 0.08, 0.0};  // much longer than the tested family
  CHECK_NOTHROW(g.validate());
  CHECK_FALSE(g.range_warnings().empty());

  GripperConfig inside{"Z", 0.20, 0.08, 0.0};
  CHECK(inside.range_warnings().empty());

  GripperConfig wide{"W", 0.20, 0.2, 0.0};
  CHECK_FALSE(wide.range_warnings().empty());
}
