#pragma once

// Umbrella header.

#include "mixcert/attacks.hpp"
#include "mixcert/certification.hpp"
#include "mixcert/classifier.hpp"
#include "mixcert/config.hpp"
#include "mixcert/data.hpp"
#include "mixcert/error.hpp"
#include "mixcert/harness.hpp"
#include "mixcert/linalg.hpp"
#include "mixcert/mixing.hpp"
#include "mixcert/model.hpp"
#include "mixcert/model_io.hpp"
#include "mixcert/oracle.hpp"
#include "mixcert/parallel.hpp"
#include "mixcert/random.hpp"
#include "mixcert/smoothing.hpp"
#include "mixcert/svg.hpp"
#include "mixcert/training.hpp"
#include "mixcert/version.hpp"
