#pragma once

#include "unik/checkpoint.hpp"
#include "unik/dataset.hpp"
#include "unik/error.hpp"
#include "unik/gradcheck.hpp"
#include "unik/layout.hpp"
#include "unik/metrics.hpp"
#include "unik/net.hpp"
#include "unik/ops.hpp"
#include "unik/optim.hpp"
#include "unik/rng.hpp"
#include "unik/skeleton.hpp"
#include "unik/slsu.hpp"
#include "unik/synth.hpp"
#include "unik/tensor.hpp"
#include "unik/tlsu.hpp"
#include "unik/train.hpp"
