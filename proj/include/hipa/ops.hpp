#pragma once

#include "hipa/ops_elementwise.hpp"
#include "hipa/ops_linalg.hpp"
#include "hipa/ops_shape.hpp"
#include "hipa/tensor.hpp"
