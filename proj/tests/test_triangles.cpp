#include <doctest.h>

#include "trikit/triangles.hpp"
