#pragma once

#include "defo/contact.hpp"
#include "defo/core.hpp"
#include "defo/geometry.hpp"
#include "defo/inference.hpp"
#include "defo/io.hpp"
#include "defo/losses.hpp"
#include "defo/model.hpp"
#include "defo/nn.hpp"
#include "defo/reconstruct.hpp"
#include "defo/synthgen.hpp"
#include "defo/tape.hpp"
#include "defo/trainer.hpp"
