#include <doctest.h>

#include "trikit/scene.hpp"
