#pragma once

#include "syndesi/automation.hpp"
#include "syndesi/error.hpp"
#include "syndesi/fingerprint.hpp"
#include "syndesi/floorplan.hpp"
#include "syndesi/gateway.hpp"
#include "syndesi/gateway_http.hpp"
#include "syndesi/harness.hpp"
#include "syndesi/motion.hpp"
#include "syndesi/ranging.hpp"
#include "syndesi/simulator.hpp"
#include "syndesi/tracker.hpp"
