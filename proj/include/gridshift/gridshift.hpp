#pragma once

#include "gridshift/error.hpp"
#include "gridshift/netmodel.hpp"
#include "gridshift/powerflow.hpp"
#include "gridshift/dynamics.hpp"
#include "gridshift/optim/config.hpp"
#include "gridshift/optim/lp.hpp"
#include "gridshift/optim/qcqp.hpp"
#include "gridshift/optim/sdp.hpp"
#include "gridshift/lyapunov.hpp"
#include "gridshift/planner.hpp"
#include "gridshift/io.hpp"
#include "gridshift/cli.hpp"
