#include <doctest.h>

#include "trikit/io.hpp"
