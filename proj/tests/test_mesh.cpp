#include <doctest.h>

#include "trikit/mesh.hpp"
