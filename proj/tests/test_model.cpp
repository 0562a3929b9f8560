#include <catch2/catch_amalgamated.hpp>

#include "defo/model.hpp"

using namespace defo;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.l_alpha = 4;
  c.l_z = 4;
  c.l_c = 6;
  c.hypo_hidden = 8;
  c.hyper_hidden = 12;
  c.force_hidden = 10;
  c.action_hidden = 10;
  c.softplus_beta = 20.0;
  return c;
}

}  // namespace

TEST_CASE("decode_hypo_weights") {
  ModelConfig cfg = tiny_config();
  Model m = Model::init(cfg, 7);
  std::vector<Real> alpha = {0.1, -0.2, 0.05, 0.3};

  SECTION("zero hyper weights decode to zero hypo weights") {
    ParamVector zero_hyper(make_hyper_o(cfg).layout());
    ParamVector w = decode_hypo_weights(make_hyper_o(cfg), zero_hyper, alpha);
    for (Real v : w.values()) REQUIRE(v == 0.0);
    // and the field is then identically its (zero) output bias
    DecodedField f{cfg.hypo_o_spec(),
                   {w.values().begin(), w.values().end()}};
    MlpWork work;
    REQUIRE(field_eval(f, {0.3, -0.7, 0.2}, work) == 0.0);
    REQUIRE(field_eval(f, {0, 0, 0}, work) == 0.0);
  }

  SECTION("same conditioning twice gives identical weights") {
    auto a = m.decode_object(alpha);
    auto b = m.decode_object(alpha);
    REQUIRE(a.weights == b.weights);
  }

  SECTION("conditioning dim mismatch rejected") {
    std::vector<Real> bad = {0.1, 0.2};
    REQUIRE_THROWS_AS(decode_hypo_weights(make_hyper_o(cfg), m.hyper_o, bad),
                      ConfigError);
  }

  SECTION("gradient of decoded weights w.r.t. alpha matches finite differences") {
    HyperSpec hs = make_hyper_o(cfg);
    const Real h = 1e-6;
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
      Tape t;
      int an = t.leaf(alpha, true);
      int wn = tape_decode(t, hs, m.hyper_o, an, false).weights;
      int wi = rng.uniform_int(t.length(wn));
      std::vector<Real> seed(size_t(t.length(wn)), 0.0);
      seed[size_t(wi)] = 1.0;
      t.backward(wn, seed);
      auto ag = t.grad(an);
      for (size_t k = 0; k < alpha.size(); ++k) {
        auto ap = alpha, am = alpha;
        ap[k] += h;
        am[k] -= h;
        Real fd = (decode_plain(hs, m.hyper_o, ap)[size_t(wi)] -
                   decode_plain(hs, m.hyper_o, am)[size_t(wi)]) /
                  (2 * h);
        bool ok = std::fabs(ag[k] - fd) < 1e-8 ||
                  std::fabs(ag[k] - fd) /
                          std::max(std::fabs(fd), std::fabs(ag[k])) <
                      1e-5;
        REQUIRE(ok);
      }
    }
  }
}

TEST_CASE("field evaluation") {
  ModelConfig cfg = tiny_config();
  Model m = Model::init(cfg, 42);
  std::vector<Real> alpha = {0.2, 0.1, -0.3, 0.15};
  std::vector<Real> z = {0.05, -0.1, 0.2, 0.0};

  SECTION("spatial gradient matches finite differences") {
    DecodedField f = m.decode_object(alpha);
    MlpWork w;
    Rng rng(5);
    const Real h = 1e-6;
    for (int i = 0; i < 20; ++i) {
      Vec3 x = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      auto [s, g] = field_eval_grad(f, x, w);
      for (int k = 0; k < 3; ++k) {
        Vec3 xp = x, xm = x;
        xp[k] += h;
        xm[k] -= h;
        Real fd = (field_eval(f, xp, w) - field_eval(f, xm, w)) / (2 * h);
        REQUIRE(g[k] == Catch::Approx(fd).margin(1e-5));
      }
    }
  }

  SECTION("deterministic evaluation") {
    Vec3 x = {0.3, 0.3, -0.4};
    auto [s1, g1] = eval_nominal_sdf(m, alpha, x);
    auto [s2, g2] = eval_nominal_sdf(m, alpha, x);
    REQUIRE(s1 == s2);
    REQUIRE((g1 - g2).norm() == 0.0);
  }

  SECTION("compositional identity is exact") {
    MlpWork w;
    DecodedField O = m.decode_object(alpha);
    DecodedField D = m.decode_deformation(alpha, z);
    Rng rng(6);
    for (int i = 0; i < 20; ++i) {
      Vec3 x = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      Real composed = eval_deformed_sdf(m, alpha, z, x);
      Vec3 dx = field_eval3(D, x, w);
      Real manual = field_eval(O, x + dx, w);
      REQUIRE(composed == manual);  // bit-for-bit
    }
  }

  SECTION("zero deformation module gives identity composition") {
    Model zm = m;
    zm.hyper_d = ParamVector(make_hyper_d(cfg).layout());  // zeros
    Rng rng(7);
    for (int i = 0; i < 10; ++i) {
      Vec3 x = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      REQUIRE(eval_deformation(zm, alpha, z, x).norm() == 0.0);
      auto [s, g] = eval_nominal_sdf(zm, alpha, x);
      REQUIRE(eval_deformed_sdf(zm, alpha, z, x) == s);
    }
  }

  SECTION("constant-shift deformation translates the level set") {
    // hand-built fields: O(x) = x_z (plane), D(x) = t constant
    MlpSpec plane{3, {{1, Act::Identity}}, "O"};
    DecodedField O{plane, {0, 0, 1, 0}};  // W=(0,0,1), b=0
    MlpSpec shift{3, {{3, Act::Identity}}, "D"};
    Vec3 t = {0.2, -0.1, 0.35};
    DecodedField D{shift, {0, 0, 0, 0, 0, 0, 0, 0, 0, t.x, t.y, t.z}};
    MlpWork w;
    // composed zero level set: x_z + t_z = 0, the nominal plane moved by -t_z
    Vec3 on_level = {0.5, 0.4, -t.z};
    Vec3 dx = field_eval3(D, on_level, w);
    REQUIRE(field_eval(O, on_level + dx, w) == Catch::Approx(0.0).margin(1e-15));
  }

  SECTION("rigid ablation forces zero deformation") {
    Model rm = m;
    rm.cfg.rigid = true;
    REQUIRE(eval_deformation(rm, alpha, z, {0.3, 0.1, 0.2}).norm() == 0.0);
    auto [s, g] = eval_nominal_sdf(rm, alpha, {0.3, 0.1, 0.2});
    REQUIRE(eval_deformed_sdf(rm, alpha, z, {0.3, 0.1, 0.2}) == s);
  }
}

TEST_CASE("force and action modules") {
  ModelConfig cfg = tiny_config();
  Model m = Model::init(cfg, 99);
  std::vector<Real> alpha = {0.2, 0.1, -0.3, 0.15};
  Vec6 wrench = {0.4, -0.2, 1.3, 0.05, -0.02, 0.0};
  Vec6 pose = {0.1, 0.2, 0.04, 0, 0, 0};
  Vec6 action = {0.01, -0.005, -0.002, 0, 0, 0};
  std::vector<Real> c = {0.02, -0.01, 0.03, 0.0, 0.01, -0.02};

  SECTION("zero force net maps everything to the bias") {
    Model zm = m;
    zm.force_net = ParamVector(cfg.force_spec().layout());
    auto z = force_encode(zm, wrench, c, pose);
    for (Real v : z) REQUIRE(v == 0.0);
  }

  SECTION("zero action net predicts the mean wrench and zero contact") {
    Model zm = m;
    zm.action_net = ParamVector(cfg.action_spec().layout());
    auto z = force_encode(zm, wrench, c, pose);
    auto pred = action_predict(zm, alpha, z, action);
    for (int i = 0; i < 6; ++i)
      REQUIRE(pred.wrench[size_t(i)] == zm.stats.wrench.mean[size_t(i)]);
    for (Real v : pred.contact) REQUIRE(v == 0.0);
  }

  SECTION("dz/dc matches finite differences") {
    const Real h = 1e-6;
    Tape t;
    Vec6 fs = m.stats.wrench.standardize(wrench);
    Vec6 ps = m.stats.pose.standardize(pose);
    int fn = t.leaf(fs, false);
    int cn = t.leaf(c, true);
    int pn = t.leaf(ps, false);
    int in = t.concat(t.concat(fn, cn), pn);
    auto wb = mlp_param_leaves(t, cfg.force_spec(), m.force_net, false);
    int zn = mlp_apply(t, cfg.force_spec(), wb, in);
    for (int zi = 0; zi < cfg.l_z; ++zi) {
      std::vector<Real> seed(size_t(cfg.l_z), 0.0);
      seed[size_t(zi)] = 1.0;
      t.backward(zn, seed);
      auto cg = t.grad(cn);
      for (size_t k = 0; k < c.size(); ++k) {
        auto cp = c, cm = c;
        cp[k] += h;
        cm[k] -= h;
        Real fd = (force_encode(m, wrench, cp, pose)[size_t(zi)] -
                   force_encode(m, wrench, cm, pose)[size_t(zi)]) /
                  (2 * h);
        REQUIRE(cg[k] == Catch::Approx(fd).margin(1e-5));
      }
    }
  }

  SECTION("action gradients w.r.t. z match finite differences") {
    std::vector<Real> z = force_encode(m, wrench, c, pose);
    const Real h = 1e-6;
    Tape t;
    Vec6 as = m.stats.action.standardize(action);
    int an = t.leaf(alpha, false);
    int zn = t.leaf(z, true);
    int actn = t.leaf(as, false);
    int in = t.concat(t.concat(an, zn), actn);
    auto wb = mlp_param_leaves(t, cfg.action_spec(), m.action_net, false);
    int outn = mlp_apply(t, cfg.action_spec(), wb, in);
    int odim = cfg.action_output_dim();
    for (int oi = 0; oi < odim; ++oi) {
      std::vector<Real> seed(size_t(odim), 0.0);
      seed[size_t(oi)] = 1.0;
      t.backward(outn, seed);
      auto zg = t.grad(zn);
      for (size_t k = 0; k < z.size(); ++k) {
        auto zp = z, zm2 = z;
        zp[k] += h;
        zm2[k] -= h;
        auto outp = action_predict(m, alpha, zp, action);
        auto outm = action_predict(m, alpha, zm2, action);
        Real fp, fm;
        if (oi < 6) {
          // de-standardized outputs: undo the scale for the raw-net check
          fp = (outp.wrench[size_t(oi)] - m.stats.wrench.mean[size_t(oi)]) /
               m.stats.wrench.std[size_t(oi)];
          fm = (outm.wrench[size_t(oi)] - m.stats.wrench.mean[size_t(oi)]) /
               m.stats.wrench.std[size_t(oi)];
        } else {
          fp = outp.contact[size_t(oi - 6)];
          fm = outm.contact[size_t(oi - 6)];
        }
        REQUIRE(zg[k] == Catch::Approx((fp - fm) / (2 * h)).margin(1e-5));
      }
    }
  }

  SECTION("distinct contact embeddings give distinct force codes") {
    std::vector<Real> c2 = c, c3 = c;
    c2[0] += 0.5;
    c3[2] -= 0.7;
    auto z1 = force_encode(m, wrench, c, pose);
    auto z2 = force_encode(m, wrench, c2, pose);
    auto z3 = force_encode(m, wrench, c3, pose);
    auto differs = [](const std::vector<Real>& a, const std::vector<Real>& b) {
      Real d = 0;
      for (size_t i = 0; i < a.size(); ++i) d += std::fabs(a[i] - b[i]);
      return d > 1e-9;
    };
    REQUIRE(differs(z1, z2));
    REQUIRE(differs(z1, z3));
    REQUIRE(differs(z2, z3));
  }

  SECTION("no-contact-embedding ablation is well-formed") {
    ModelConfig ab = cfg;
    ab.no_contact_embedding = true;
    Model am = Model::init(ab, 99);
    auto z = force_encode(am, wrench, {}, pose);
    REQUIRE(int(z.size()) == ab.l_z);
    auto pred = action_predict(am, alpha, z, action);
    REQUIRE(pred.contact.empty());
    for (Real v : pred.wrench) REQUIRE(std::isfinite(v));
  }
}
