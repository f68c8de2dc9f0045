#pragma once

#include "looptune/autodiff.hpp"
#include "looptune/config.hpp"
#include "looptune/csv.hpp"
#include "looptune/disturbance_feedback.hpp"
#include "looptune/errors.hpp"
#include "looptune/lti.hpp"
#include "looptune/pid.hpp"
#include "looptune/simloop.hpp"
#include "looptune/tuner.hpp"
#include "looptune/verification.hpp"
