#include "terraseg/tensor.hpp"

// Tensor is header-only; this translation unit anchors the target.
