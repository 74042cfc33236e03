#pragma once

#include <doctest.h>

#include "oracles.hpp"

