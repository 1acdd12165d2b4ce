#pragma once

#include "bohm.hpp"
#include "cli.hpp"
#include "config.hpp"
#include "error.hpp"
#include "evolve.hpp"
#include "fft.hpp"
#include "parallel.hpp"
#include "polar.hpp"
#include "qgrid.hpp"
#include "rng.hpp"
#include "scenarios.hpp"
#include "selftest.hpp"
#include "stats.hpp"
#include "weakmeas.hpp"
#include "wf_io.hpp"
