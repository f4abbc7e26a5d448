#ifndef POLYFOLIO_POLYFOLIO_HPP
#define POLYFOLIO_POLYFOLIO_HPP

#include "polyfolio/backtest.hpp"
#include "polyfolio/config.hpp"
#include "polyfolio/errors.hpp"
#include "polyfolio/forecast.hpp"
#include "polyfolio/hermite_ridge.hpp"
#include "polyfolio/itf.hpp"
#include "polyfolio/month.hpp"
#include "polyfolio/panel.hpp"
#include "polyfolio/parallel.hpp"
#include "polyfolio/pipeline.hpp"
#include "polyfolio/risk_features.hpp"
#include "polyfolio/rng.hpp"
#include "polyfolio/significance.hpp"
#include "polyfolio/synth.hpp"

#endif
