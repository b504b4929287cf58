import numpy as np
import pytest
from fdutil import REL_TOL, numeric_grad, relative_error

from zeroair import gradtape as gt
from zeroair.gradtape import Tensor
from zeroair.tdg import (
    GuidanceConfig,
    GuidanceError,
    ResidualDiscriminator,
    Stage,
    guidance_stage1,
    guidance_stage2,
    guidance_stage3,
    residual_discriminator_step,
    stage_of,
    tv_loss,
)
from zeroair.tdm import DegradationNet, FeatureExtractor


def identity(x):
    return x


def images(seed, n=1, side=6):
    return np.random.default_rng(seed).uniform(-0.9, 0.9, size=(n, 3, side, side))


# --- stage partition ----------------------------------------------------------------


def test_stage_examples():
    cfg = GuidanceConfig()
    assert (cfg.b1, cfg.b2) == (600, 50)
    assert stage_of(999, cfg) == Stage.FIRST
    assert stage_of(601, cfg) == Stage.FIRST
    assert stage_of(600, cfg) == Stage.SECOND
    assert stage_of(51, cfg) == Stage.SECOND
    assert stage_of(50, cfg) == Stage.THIRD
    assert stage_of(0, cfg) == Stage.THIRD


@pytest.mark.parametrize("T", [10, 100, 1000])
def test_stages_partition_timesteps(T):
    cfg = GuidanceConfig(T=T)
    stages = [stage_of(t, cfg) for t in range(T)]
    assert set(stages) == {Stage.FIRST, Stage.SECOND, Stage.THIRD}
    # monotone: THIRD block, then SECOND, then FIRST as t grows
    assert stages == sorted(stages, reverse=True)
    for bad in (-1, T):
        with pytest.raises(ValueError):
            stage_of(bad, cfg)


@pytest.mark.parametrize(
    "kwargs",
    [dict(T=100, b1=99), dict(T=100, b1=20, b2=20), dict(T=100, b1=20, b2=-1), dict(gammas=(1, 1)), dict(s=-1)],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        GuidanceConfig(**kwargs)


# --- total variation -----------------------------------------------------------------


def test_tv_ramp_example():
    x = Tensor(np.array([0.0, 1.0, 2.0]).reshape(1, 1, 1, 3), requires_grad=True)
    loss = tv_loss(x)
    (g,) = gt.backward(loss, [x])
    assert loss.item() == 2.0
    np.testing.assert_array_equal(g.ravel(), [-1.0, 0.0, 1.0])


def test_tv_constant_and_shift_invariance():
    x = images(0)
    assert tv_loss(Tensor(np.full((1, 3, 5, 5), 0.3))).item() == 0.0
    assert tv_loss(Tensor(x + 0.25)).item() == pytest.approx(tv_loss(Tensor(x)).item(), rel=1e-5)


def test_tv_checkerboard_is_maximal():
    board = np.array([[0.0, 1.0], [1.0, 0.0]]).reshape(1, 1, 2, 2)
    assert tv_loss(Tensor(board)).item() == 4.0
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert tv_loss(Tensor(rng.uniform(size=(1, 1, 2, 2)))).item() <= 4.0


def test_tv_subgradient_zero_at_ties():
    x = Tensor(np.zeros((1, 1, 3, 3)), requires_grad=True)
    (g,) = gt.backward(tv_loss(x), [x])
    assert np.all(g == 0)


# --- stage 1 -------------------------------------------------------------------------


def test_stage1_examples():
    G, _ = guidance_stage1(np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)), identity, 1.0)
    assert G.ravel().tolist() == [2.0]
    x = images(1)
    assert np.all(guidance_stage1(x, images(2), identity, 0.0)[0] == 0)
    assert np.all(guidance_stage1(x, x, identity, 3.0)[0] == 0)


def test_stage1_batch_gives_each_image_its_own_gradient():
    phi = DegradationNet(rng=np.random.default_rng(0))
    x, y = images(3, n=2), images(4)
    G, _ = guidance_stage1(x, y, phi, 1.5)
    G0, _ = guidance_stage1(x[:1], y, phi, 1.5)
    G1, _ = guidance_stage1(x[1:], y, phi, 1.5)
    np.testing.assert_allclose(G, np.concatenate([G0, G1]), rtol=1e-5, atol=1e-7)


def test_stage1_shape_mismatch():
    with pytest.raises(gt.ShapeError):
        guidance_stage1(images(0), images(0, side=4), identity, 1.0)


def test_stage1_leaves_phi_untouched():
    phi = DegradationNet()
    before = phi.state()
    guidance_stage1(images(0), images(1), phi, 1.0)
    assert all(p.grad is None for p in phi.params())
    for a, b in zip(before, phi.state()):
        np.testing.assert_array_equal(a, b)


# --- stages 2 and 3 ------------------------------------------------------------------


def nets(seed=0):
    rng = np.random.default_rng(seed)
    return DegradationNet(rng=rng), FeatureExtractor(), ResidualDiscriminator(rng=rng)


def test_stage2_zero_weights_give_zero():
    phi, V, Dres = nets()
    cfg = GuidanceConfig(gammas=(1, 0, 0, 0, 0))
    G, _ = guidance_stage2(images(0), images(1), images(2), phi, V, Dres, cfg)
    assert np.all(G == 0)


def test_stage2_without_adversarial_weight_never_touches_dres():
    phi, V, _ = nets()

    class Exploding:
        def __call__(self, x):
            raise AssertionError("residual discriminator must not run")

    cfg = GuidanceConfig(gammas=(2, 1, 1e-3, 0, 1e-4))
    state = gt.AdamState.for_params([])
    G, losses = guidance_stage2(images(0), images(1), images(2), phi, V, Exploding(), cfg, state)
    assert "L_dres" not in losses and np.all(np.isfinite(G))


def test_stage2_reconstruction_equals_stage1_formula():
    phi, V, Dres = nets()
    x, y = images(3), images(4)
    G2, _ = guidance_stage2(x, None, y, phi, V, Dres, GuidanceConfig(gammas=(0, 0.7, 0, 0, 0)))
    G1, _ = guidance_stage1(x, y, phi, 0.7)
    np.testing.assert_allclose(G2, G1, rtol=1e-6)


def test_stage3_without_tv_equals_stage2():
    phi, V, Dres = nets()
    cfg = GuidanceConfig(gammas=(1, 1, 0.5, 0.2, 0))
    args = (images(3), images(5), images(4), phi, V, Dres, cfg)
    np.testing.assert_array_equal(guidance_stage3(*args)[0], guidance_stage2(*args)[0])


def test_stage3_tv_on_constant_image_adds_nothing():
    phi, V, Dres = nets()
    x = np.full((1, 3, 6, 6), 0.2)
    with_tv = GuidanceConfig(gammas=(1, 1, 0, 0, 5.0))
    no_tv = GuidanceConfig(gammas=(1, 1, 0, 0, 0))
    G3, _ = guidance_stage3(x, None, images(1), phi, V, Dres, with_tv)
    G2, _ = guidance_stage2(x, None, images(1), phi, V, Dres, no_tv)
    np.testing.assert_array_equal(G3, G2)


def test_stage2_updates_residual_discriminator_once():
    phi, V, Dres = nets()
    state = gt.AdamState.for_params(Dres.params())
    before = Dres.state()
    _, losses = guidance_stage2(images(0), images(1), images(2), phi, V, Dres, GuidanceConfig(gammas=(1, 1, 0, 1, 0)), state)
    assert state.step == 1 and "L_dres" in losses
    assert any(not np.array_equal(a, b) for a, b in zip(before, Dres.state()))


def test_non_finite_guidance_aborts_with_timestep():
    phi, V, Dres = nets()
    x = images(0)
    x[0, 0, 0, 0] = np.nan
    with pytest.raises(GuidanceError, match="timestep 13"):
        guidance_stage3(x, None, images(1), phi, V, Dres, GuidanceConfig(gammas=(0, 0, 0, 0, 1)), t=13)


def fd_guidance_error(rule, gammas, with_referred=True, seed=0):
    """Compare G to finite differences of the weighted scalar loss it should differentiate."""
    with gt.precision(np.float64):
        phi, V, Dres = nets(seed)
        x0g = images(seed + 10)
        x0r = images(seed + 11) if with_referred else None
        y = images(seed + 12)
        cfg = GuidanceConfig(gammas=gammas)
        G, _ = rule(x0g, x0r, y, phi, V, Dres, cfg)
        _, g2, g3, g4, g5 = cfg.gammas

        def total(x):
            xt, yt = Tensor(x), Tensor(y)
            out = phi(xt)
            val = g2 * gt.mse(yt, out).item() + g3 * gt.mse(V(yt), V(out)).item()
            val += g4 * gt.log_loss_terms(Dres(xt - yt), "log_1md").item()
            if rule is guidance_stage3:
                val += g5 * tv_loss(xt).item()
            return val

        num = numeric_grad(total, [x0g], 0)
    return relative_error(G, num)


@pytest.mark.parametrize(
    "gammas",
    [(0, 1, 0, 0, 0), (0, 0, 1, 0, 0), (0, 0, 0, 1, 0), (0, 1, 0.5, 0.3, 0)],
    ids=["rec", "pec", "adv", "combined"],
)
def test_stage2_gradient_matches_finite_differences(gammas):
    assert fd_guidance_error(guidance_stage2, gammas) <= REL_TOL


@pytest.mark.parametrize("gammas", [(0, 0, 0, 0, 1), (0, 1, 0.5, 0.3, 0.2)], ids=["tv", "combined"])
def test_stage3_gradient_matches_finite_differences(gammas):
    assert fd_guidance_error(guidance_stage3, gammas) <= REL_TOL


def stage1_fd_error():
    with gt.precision(np.float64):
        phi, _, _ = nets(3)
        x, y = images(20), images(21)
        G, _ = guidance_stage1(x, y, phi, 1.3)
        num = numeric_grad(lambda a: 1.3 * gt.mse(Tensor(y), phi(Tensor(a))).item(), [x], 0)
    return relative_error(G, num)


def test_stage1_gradient_matches_finite_differences():
    assert stage1_fd_error() <= REL_TOL


def residual_discriminator_fd_error():
    with gt.precision(np.float64):
        phi, _, Dres = nets(4)
        x0g, x0r, y = images(30), images(31), images(32)
        p = Dres.params()[0]

        def loss(w):
            p.data = w
            real = Tensor(np.concatenate([x0g, x0r]) - phi(Tensor(np.concatenate([x0g, x0r]))).data)
            fake = Tensor(x0g - y)
            return (gt.neg(gt.log_loss_terms(Dres(real), "log_d")) - gt.log_loss_terms(Dres(fake), "log_1md")).item()

        w0 = p.data.copy()
        num = numeric_grad(loss, [w0], 0)
        p.data = w0.copy()
        state = gt.AdamState.for_params(Dres.params(), lr=0.0)
        captured = {}
        orig = gt.adam_step

        def capture(params, grads, st):
            captured["g"] = grads[0]
            return orig(params, grads, st)

        import zeroair.tdg as tdg_mod

        tdg_mod.gt.adam_step, saved = capture, tdg_mod.gt.adam_step
        try:
            residual_discriminator_step(x0g, x0r, y, phi, Dres, state)
        finally:
            tdg_mod.gt.adam_step = saved
    return relative_error(captured["g"], num)


def test_residual_discriminator_loss_gradient():
    assert residual_discriminator_fd_error() <= REL_TOL
