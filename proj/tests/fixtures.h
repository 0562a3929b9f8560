#pragma once

#include "defo/defo.hpp"

namespace defo_test {

// A small dataset and model trained once and shared across test cases.
struct TrainedFixture {
  defo::GenConfig gen;
  defo::Dataset dataset;
  defo::ModelConfig model_cfg;
  defo::TrainConfig pretrain_cfg, dynamics_cfg;
  defo::Checkpoint pretrained;
  defo::Checkpoint trained;
};

const TrainedFixture& trained_fixture();

}  // namespace defo_test
