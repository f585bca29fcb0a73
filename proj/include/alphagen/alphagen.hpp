#pragma once

#include "alphagen/backtest.hpp"
#include "alphagen/core.hpp"
#include "alphagen/dsl.hpp"
#include "alphagen/env.hpp"
#include "alphagen/evaluator.hpp"
#include "alphagen/io.hpp"
#include "alphagen/metrics.hpp"
#include "alphagen/nn.hpp"
#include "alphagen/panel.hpp"
#include "alphagen/pool.hpp"
#include "alphagen/ppo.hpp"
#include "alphagen/synth.hpp"
