#pragma once

#include "dlmdecode/core.hpp"
#include "dlmdecode/denoiser.hpp"
#include "dlmdecode/error.hpp"
#include "dlmdecode/metrics.hpp"
#include "dlmdecode/policy.hpp"
#include "dlmdecode/scheduler.hpp"
#include "dlmdecode/spatial.hpp"
#include "dlmdecode/tracefmt.hpp"
#include "dlmdecode/config.hpp"
#include "dlmdecode/harness.hpp"
#include "dlmdecode/cli.hpp"
