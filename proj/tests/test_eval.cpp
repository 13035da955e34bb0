#include <doctest.h>

#include "trikit/eval.hpp"
