#pragma once

#include "fdl/exponents.hpp"
#include "fdl/geometry.hpp"
#include "fdl/intrinsic.hpp"
#include "fdl/parallel.hpp"
#include "fdl/quadrature.hpp"
#include "fdl/report.hpp"
#include "fdl/solutions.hpp"
#include "fdl/solver.hpp"
#include "fdl/verify.hpp"
