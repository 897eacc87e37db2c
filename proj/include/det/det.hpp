#pragma once

//! Convenience umbrella for the whole library. Include individual headers
//! instead when compile time matters; cli.hpp is kept out because it pulls
//! in the command-line parser.

#include "algebra.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "integrate.hpp"
#include "io.hpp"
#include "sample.hpp"
#include "train.hpp"
#include "tree.hpp"
