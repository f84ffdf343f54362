#pragma once

#include "mbsde/geometry/chart.hpp"
#include "mbsde/geometry/charts.hpp"
#include "mbsde/geometry/custom_chart.hpp"
#include "mbsde/geometry/geodesic.hpp"
#include "mbsde/geometry/hessian.hpp"
