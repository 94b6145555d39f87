#pragma once

#include "bracketlearn/rng.hpp"
#include "bracketlearn/dataset.hpp"
#include "bracketlearn/model.hpp"
#include "bracketlearn/losses.hpp"
#include "bracketlearn/sgd.hpp"
#include "bracketlearn/oneside.hpp"
#include "bracketlearn/bracketing.hpp"
#include "bracketlearn/baselines.hpp"
#include "bracketlearn/finite.hpp"
#include "bracketlearn/geometry.hpp"
#include "bracketlearn/report.hpp"
#include "bracketlearn/experiment.hpp"
#include "bracketlearn/verify.hpp"
