#pragma once

#include "fedbal/client.hpp"
#include "fedbal/config.hpp"
#include "fedbal/data.hpp"
#include "fedbal/io.hpp"
#include "fedbal/model.hpp"
#include "fedbal/rng.hpp"
#include "fedbal/server.hpp"
#include "fedbal/sim.hpp"
