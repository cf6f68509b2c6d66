#pragma once

#include "hcrf/attention.hpp"
#include "hcrf/core.hpp"
#include "hcrf/cpel.hpp"
#include "hcrf/inference.hpp"
#include "hcrf/io.hpp"
#include "hcrf/metrics.hpp"
#include "hcrf/potentials.hpp"
#include "hcrf/serialize.hpp"
#include "hcrf/synth.hpp"
