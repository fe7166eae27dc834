#pragma once

#include "spcrf/config.hpp"
#include "spcrf/error.hpp"
#include "spcrf/imaging.hpp"
#include "spcrf/meanfield.hpp"
#include "spcrf/metrics.hpp"
#include "spcrf/oracle.hpp"
#include "spcrf/parallel.hpp"
#include "spcrf/permutohedral.hpp"
#include "spcrf/potentials.hpp"
#include "spcrf/superpixel.hpp"
#include "spcrf/tuner.hpp"
