#include "fixtures.h"

namespace defo_test {

using namespace defo;

const TrainedFixture& trained_fixture() {
  static TrainedFixture fx = [] {
    TrainedFixture f;
    f.gen.train_objects = 2;
    f.gen.unseen_objects = 0;
    f.gen.train_trajectories = 3;
    f.gen.test_trajectories = 1;
    f.gen.steps = 10;
    f.gen.surface_samples = 128;
    f.gen.query_samples = 384;
    f.gen.nominal_surface = 384;
    f.gen.nominal_query = 1024;
    f.gen.cloud_points = 512;
    f.gen.dense_oracle_points = 4096;
    f.gen.def_probe_points = 64;
    f.dataset = generate_dataset(f.gen, 4242);

    f.model_cfg.l_alpha = 6;
    f.model_cfg.l_z = 6;
    f.model_cfg.hypo_hidden = 48;
    f.model_cfg.hyper_hidden = 48;
    f.model_cfg.force_hidden = 48;
    f.model_cfg.action_hidden = 48;

    f.pretrain_cfg.epochs = 80;
    f.pretrain_cfg.steps_per_epoch = 8;
    f.pretrain_cfg.surface_batch = 64;
    f.pretrain_cfg.query_batch = 128;
    f.pretrain_cfg.lr = 3e-4;  // small fixture: fewer steps, larger lr
    f.pretrain_cfg.seed = 7;

    f.dynamics_cfg = f.pretrain_cfg;
    f.dynamics_cfg.epochs = 50;
    f.dynamics_cfg.windows_per_epoch = 12;
    f.dynamics_cfg.dyn_surface_batch = 16;
    f.dynamics_cfg.dyn_query_batch = 48;
    f.dynamics_cfg.dyn_cloud_batch = 64;
    f.dynamics_cfg.dyn_field_points = 24;

    auto pre = pretrain_nominal(f.dataset, f.model_cfg, f.pretrain_cfg);
    f.pretrained = pre.checkpoint;
    auto dyn = train_dynamics(f.dataset, f.pretrained, f.dynamics_cfg);
    f.trained = dyn.checkpoint;
    return f;
  }();
  return fx;
}

}  // namespace defo_test
