#pragma once

#include "earlypsd/types.hpp"
#include "earlypsd/rng.hpp"
#include "earlypsd/matrix_kernels.hpp"
#include "earlypsd/scene_model.hpp"
#include "earlypsd/subspace_estimator.hpp"
#include "earlypsd/conventional_solver.hpp"
#include "earlypsd/procrustes_solver.hpp"
#include "earlypsd/retf_updater.hpp"
#include "earlypsd/metrics.hpp"
#include "earlypsd/stft_io.hpp"
#include "earlypsd/experiments.hpp"
