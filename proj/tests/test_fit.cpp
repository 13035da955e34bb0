#include <doctest.h>

#include "trikit/fit.hpp"
