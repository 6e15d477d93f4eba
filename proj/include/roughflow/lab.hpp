#pragma once

// Experiment orchestration: scenario configs, pipelines and artifacts.

#include "roughflow/lab/config.hpp"
#include "roughflow/lab/report.hpp"
#include "roughflow/lab/scenarios.hpp"
