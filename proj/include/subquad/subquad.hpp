#ifndef SUBQUAD_SUBQUAD_HPP
#define SUBQUAD_SUBQUAD_HPP

#include "subquad/common.hpp"
#include "subquad/net_core.hpp"
#include "subquad/lrm.hpp"
#include "subquad/sketch.hpp"
#include "subquad/solver.hpp"
#include "subquad/ntk_oracle.hpp"
#include "subquad/trainer.hpp"
#include "subquad/io.hpp"
#include "subquad/bench.hpp"
#include "subquad/checks.hpp"

#endif  // SUBQUAD_SUBQUAD_HPP
