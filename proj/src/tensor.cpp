#include "gahb/tensor.hpp"

namespace gahb {

std::string to_string(const Dims& d) {
  return "(" + std::to_string(d.batch) + ", " + std::to_string(d.channels) + ", " +
         std::to_string(d.height) + ", " + std::to_string(d.width) + ")";
}

void require_same_dims(const Dims& a, const Dims& b, const char* context) {
  const char* axis = nullptr;
  if (a.batch != b.batch) axis = "batch";
  else if (a.channels != b.channels) axis = "channels";
  else if (a.height != b.height) axis = "height";
  else if (a.width != b.width) axis = "width";
  if (axis) {
    throw DimensionError(axis, std::string(context) + ": " + axis + " mismatch " + to_string(a) +
                                   " vs " + to_string(b));
  }
}

}  // namespace gahb
