#pragma once

#include "igm/error.hpp"
#include "igm/expr.hpp"
#include "igm/quadrature.hpp"
#include "igm/manifold.hpp"
#include "igm/crf.hpp"
#include "igm/conjugate.hpp"
#include "igm/extensions.hpp"
#include "igm/numerics.hpp"
#include "igm/manifest.hpp"
#include "igm/report.hpp"
