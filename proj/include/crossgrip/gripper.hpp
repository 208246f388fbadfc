#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace crossgrip {

/// Two-finger parallel gripper geometry. finger_length is the distance from
/// the flange (tool mount) to the fingertip plane; width_* bound the jaw
/// opening.
struct GripperConfig {
  std::string id;
  double finger_length = 0.0;  // meters, flange to fingertip
  double width_max = 0.0;      // meters, fully open jaw
  double width_min = 0.0;      // meters, fully closed jaw

  void validate() const {
    if (id.empty()) throw std::invalid_argument("gripper: empty id");
    if (!(finger_length > 0.0))
      throw std::invalid_argument("gripper " + id +
                                  ": finger_length must be > 0");
    // Fully-closing jaws (width_min == 0) are legal hardware, so the lower
    // bound is inclusive.
    if (!(width_min >= 0.0) || !(width_min < width_max))
      throw std::invalid_argument("gripper " + id +
                                  ": need 0 <= width_min < width_max");
  }

  /// Dimensions outside the experimentally validated range are allowed but
  /// flagged, since transfer quality is only established inside it.
  std::vector<std::string> range_warnings() const {
    constexpr double kFingerLo = 0.16, kFingerHi = 0.235;
    constexpr double kWidthLo = 0.075, kWidthHi = 0.115;
    std::vector<std::string> warnings;
    char buf[160];
    if (finger_length < kFingerLo || finger_length > kFingerHi) {
      std::snprintf(buf, sizeof buf,
                    "gripper %s: finger_length %.4f outside validated range "
                    "[%.3f, %.3f]",
                    id.c_str(), finger_length, kFingerLo, kFingerHi);
      warnings.emplace_back(buf);
    }
    if (width_max < kWidthLo || width_max > kWidthHi) {
      std::snprintf(buf, sizeof buf,
                    "gripper %s: width_max %.4f outside validated range "
                    "[%.3f, %.3f]",
                    id.c_str(), width_max, kWidthLo, kWidthHi);
      warnings.emplace_back(buf);
    }
    return warnings;
  }
};

/// Zero-shot transfer parameters from a reference gripper to a novel one:
/// heights shift by delta_h, widths scale by alpha.
struct GripperMapping {
  double delta_h = 0.0;  // reference length minus novel length
  double alpha = 1.0;    // reference max width over novel max width
};

inline GripperMapping identity_mapping() { return GripperMapping{0.0, 1.0}; }

inline GripperMapping derive_mapping(const GripperConfig& reference,
                                     const GripperConfig& novel) {
  return GripperMapping{reference.finger_length - novel.finger_length,
                        reference.width_max / novel.width_max};
}

/// Reported height -> height the reference-trained policy should see.
inline double map_height(double z, const GripperMapping& m) {
  return z + m.delta_h;
}

/// Actual jaw width -> reference-scale width.
inline double map_width(double g, const GripperMapping& m) {
  return m.alpha * g;
}

/// Reference-scale width command -> width for the actual gripper.
inline double unmap_width_command(double g, const GripperMapping& m) {
  return g / m.alpha;
}

}  // namespace crossgrip
