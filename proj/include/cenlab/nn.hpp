#pragma once

#include "cenlab/nn/adam.hpp"
#include "cenlab/nn/blas.hpp"
#include "cenlab/nn/checkpoint.hpp"
#include "cenlab/nn/gradcheck.hpp"
#include "cenlab/nn/graph.hpp"
#include "cenlab/nn/layers.hpp"
#include "cenlab/nn/tensor.hpp"
