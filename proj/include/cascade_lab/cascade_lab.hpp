#pragma once

#include "cascade_lab/analysis.hpp"
#include "cascade_lab/cg.hpp"
#include "cascade_lab/config.hpp"
#include "cascade_lab/dynamics.hpp"
#include "cascade_lab/error.hpp"
#include "cascade_lab/geometry.hpp"
#include "cascade_lab/hum.hpp"
#include "cascade_lab/operators.hpp"
#include "cascade_lab/parallel.hpp"
#include "cascade_lab/report.hpp"
