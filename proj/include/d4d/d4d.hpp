#pragma once

// Umbrella header.

#include "d4d/camera.hpp"
#include "d4d/checkpoint.hpp"
#include "d4d/config.hpp"
#include "d4d/core.hpp"
#include "d4d/fields.hpp"
#include "d4d/grad.hpp"
#include "d4d/gridenc.hpp"
#include "d4d/guidance.hpp"
#include "d4d/image_io.hpp"
#include "d4d/losses.hpp"
#include "d4d/mlp.hpp"
#include "d4d/optim.hpp"
#include "d4d/protocol.hpp"
#include "d4d/remote.hpp"
#include "d4d/renderer.hpp"
#include "d4d/toml.hpp"
#include "d4d/toy.hpp"
#include "d4d/trainer.hpp"
#include "d4d/verify.hpp"
