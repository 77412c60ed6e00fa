#pragma once

#include "alignlab/advantage.hpp"
#include "alignlab/config.hpp"
#include "alignlab/data.hpp"
#include "alignlab/errors.hpp"
#include "alignlab/io.hpp"
#include "alignlab/math.hpp"
#include "alignlab/mdp.hpp"
#include "alignlab/metrics.hpp"
#include "alignlab/objectives.hpp"
#include "alignlab/optimizer.hpp"
#include "alignlab/oracle.hpp"
#include "alignlab/pipeline.hpp"
#include "alignlab/policy.hpp"
#include "alignlab/rl.hpp"
#include "alignlab/rng.hpp"
