#pragma once

#include "cast/bundle.hpp"
#include "cast/common.hpp"
#include "cast/error.hpp"
#include "cast/estimation.hpp"
#include "cast/kernel.hpp"
#include "cast/linalg.hpp"
#include "cast/metrics.hpp"
#include "cast/phases.hpp"
#include "cast/pipeline.hpp"
#include "cast/report.hpp"
#include "cast/statistics.hpp"
#include "cast/version.hpp"
