#pragma once

#include <admkit/canonical.hpp>
#include <admkit/certificate.hpp>
#include <admkit/engine.hpp>
#include <admkit/model.hpp>
#include <admkit/record.hpp>
#include <admkit/signing.hpp>
