#pragma once

#include "persona/numerics/gradcheck.hpp"
#include "persona/numerics/ops.hpp"
#include "persona/numerics/tape.hpp"
#include "persona/numerics/tensor.hpp"
