#pragma once

#include "bridgekit/error.hpp"
#include "bridgekit/rng.hpp"
#include "bridgekit/types.hpp"
#include "bridgekit/core.hpp"
#include "bridgekit/coupling.hpp"
#include "bridgekit/net.hpp"
#include "bridgekit/sim.hpp"
#include "bridgekit/data.hpp"
#include "bridgekit/eval.hpp"
#include "bridgekit/uba.hpp"
#include "bridgekit/config.hpp"
