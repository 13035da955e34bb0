#include <doctest.h>

#include "trikit/normals.hpp"
