#pragma once

#include <admkit/arithmetic.hpp>
#include <admkit/dimension.hpp>
#include <admkit/clifford.hpp>
#include <admkit/autodiff.hpp>
#include <admkit/snn.hpp>
#include <admkit/adapt.hpp>
#include <admkit/rotation.hpp>
#include <admkit/harness.hpp>
