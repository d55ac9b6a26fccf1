#pragma once

namespace snnball {

struct Pixel {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Decoded ball position. A detection with zero confidence in either
/// population carries no position information.
struct Detection {
  Pixel local;
  Pixel global;
  double confidence_x = 0.0;
  double confidence_y = 0.0;

  bool confident() const { return confidence_x > 0.0 && confidence_y > 0.0; }
  friend bool operator==(const Detection&, const Detection&) = default;
};

}  // namespace snnball
