#pragma once

#include "roughflow/analytic.hpp"
#include "roughflow/conjheat.hpp"
#include "roughflow/error.hpp"
#include "roughflow/field_io.hpp"
#include "roughflow/fit.hpp"
#include "roughflow/flow.hpp"
#include "roughflow/geometry.hpp"
#include "roughflow/grid.hpp"
#include "roughflow/lab.hpp"
#include "roughflow/mollify.hpp"
#include "roughflow/parallel.hpp"
#include "roughflow/singular.hpp"
#include "roughflow/tensor.hpp"
