#pragma once

#include "ssdu/autodiff.hpp"
#include "ssdu/conv.hpp"
#include "ssdu/errors.hpp"
#include "ssdu/experiments.hpp"
#include "ssdu/fft.hpp"
#include "ssdu/io.hpp"
#include "ssdu/metrics.hpp"
#include "ssdu/network.hpp"
#include "ssdu/operators.hpp"
#include "ssdu/params.hpp"
#include "ssdu/sim.hpp"
#include "ssdu/solvers.hpp"
#include "ssdu/tensor.hpp"
#include "ssdu/training.hpp"
