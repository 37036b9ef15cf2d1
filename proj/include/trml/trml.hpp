#pragma once

#include "trml/autodiff.hpp"
#include "trml/dataset.hpp"
#include "trml/errors.hpp"
#include "trml/evaluation.hpp"
#include "trml/grad_check.hpp"
#include "trml/matrix.hpp"
#include "trml/model.hpp"
#include "trml/objective.hpp"
#include "trml/param_store.hpp"
#include "trml/rng.hpp"
#include "trml/trainer.hpp"
