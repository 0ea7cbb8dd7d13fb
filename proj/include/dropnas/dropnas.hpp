#ifndef DROPNAS_DROPNAS_HPP
#define DROPNAS_DROPNAS_HPP

#include "dropnas/core/errors.hpp"
#include "dropnas/core/ops.hpp"
#include "dropnas/core/optim.hpp"
#include "dropnas/core/rng.hpp"
#include "dropnas/core/tape.hpp"
#include "dropnas/core/tensor.hpp"
#include "dropnas/diag/harness.hpp"
#include "dropnas/diag/linalg.hpp"
#include "dropnas/dropsched.hpp"
#include "dropnas/geno.hpp"
#include "dropnas/io/checkpoint.hpp"
#include "dropnas/io/config.hpp"
#include "dropnas/io/dataset.hpp"
#include "dropnas/io/run_dir.hpp"
#include "dropnas/space.hpp"
#include "dropnas/standalone.hpp"
#include "dropnas/supernet/supernet.hpp"
#include "dropnas/trainer.hpp"

#endif
