#pragma once

#include "diffreason/anomaly.hpp"
#include "diffreason/backends.hpp"
#include "diffreason/config.hpp"
#include "diffreason/diff_engine.hpp"
#include "diffreason/error.hpp"
#include "diffreason/eval_harness.hpp"
#include "diffreason/feature_space.hpp"
#include "diffreason/fusion.hpp"
#include "diffreason/history_store.hpp"
#include "diffreason/llm_gateway.hpp"
#include "diffreason/statistics.hpp"
