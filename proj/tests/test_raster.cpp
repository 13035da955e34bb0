#include <doctest.h>

#include "trikit/raster.hpp"
