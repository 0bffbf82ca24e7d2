#pragma once

// Umbrella header.
#include "poissonet/errors.hpp"
#include "poissonet/graph.hpp"
#include "poissonet/model.hpp"
#include "poissonet/structured_fisher.hpp"
#include "poissonet/solver.hpp"
#include "poissonet/inference.hpp"
#include "poissonet/simulator.hpp"
#include "poissonet/io.hpp"
#include "poissonet/cli.hpp"
