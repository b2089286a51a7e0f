#pragma once

#include <admkit/posit.hpp>
#include <admkit/quire.hpp>
