import numpy as np
import pytest

from nssda import physics
from nssda.core import PHYSICAL, Grid1D, PositivityError, relative_l2
from nssda.physics import EulerFlux, NoiseModel, SweFlux


@pytest.fixture(scope="module")
def dam_truth():
    return physics.generate_truth(physics.get_preset("dam-break"))


@pytest.fixture(scope="module")
def shu_truth():
    return physics.generate_truth(physics.get_preset("shu-osher"))


def test_swe_flux_examples():
    f = SweFlux(1.0)
    np.testing.assert_array_equal(f.flux(np.array([2.0, 0.0])), [0.0, 2.0])
    np.testing.assert_array_equal(f.flux(np.array([1.0, 1.0])), [1.0, 1.5])
    assert f.speed(np.array([4.0, 0.0])) == 2.0
    with pytest.raises(PositivityError):
        f.flux(np.array([0.0, 1.0]))


def test_euler_flux_examples():
    f = EulerFlux(1.4)
    np.testing.assert_allclose(f.flux(np.array([1.0, 0.0, 2.5])), [0.0, 1.0, 0.0], atol=1e-15)
    assert f.speed(np.array([1.0, 0.0, 2.5])) == pytest.approx(1.1832, abs=1e-4)
    assert f.pressure(np.array([1.0, 2.0, 4.5])) == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(f.flux(np.array([1.0, 2.0, 4.5])), [2.0, 5.0, 11.0], rtol=1e-14)
    with pytest.raises(PositivityError):
        f.flux(np.array([1.0, 2.0, 1.0]))


def test_preset_constants_verbatim():
    assert physics.DAM_BREAK == dict(h_l=3.5691196, h_r=1.178673, u_l=-0.064667, u_r=-0.045197, x0=0.003832)
    so = physics.SHU_OSHER
    assert (so["rho_l"], so["u_l"], so["p_l"], so["x1"], so["gamma"]) == (3.857135, 2.62936, 10.33333, 3.29867, 1.4)
    db = physics.get_preset("dam-break")
    assert (db.a, db.b, db.n, db.dt, db.J, db.epochs) == (-5.0, 5.0, 512, 0.005, 200, 100)
    sh = physics.get_preset("shu-osher")
    assert (sh.n, sh.dt, sh.J, sh.l_train, sh.sigma2, sh.epochs) == (512, 0.002, 800, 20, 0.2, 500)
    with pytest.raises(ValueError):
        physics.get_preset("sod")


def _at(preset_name, x):
    pr = physics.get_preset(preset_name)
    return physics.make_initial(pr, Grid1D(x - 0.5, x + 0.5, 1)).values[0]


def test_make_initial_examples():
    assert _at("dam-break", -1.0)[0] == 3.5691196
    assert _at("dam-break", 1.0)[0] == 1.178673
    np.testing.assert_array_equal(_at("shu-osher", -4.5), [3.857135, 2.62936, 10.33333])
    x = 3.29867 + 0.5
    assert _at("shu-osher", x)[0] == pytest.approx(1 + 0.2 * np.sin(5 * x) * np.exp(-(0.5**4)))


def test_boundary_states_from_ic():
    spec = physics.get_preset("dam-break").spec()
    np.testing.assert_allclose(spec.boundary[0], [3.5691196, 3.5691196 * -0.064667])
    np.testing.assert_allclose(spec.boundary[1], [1.178673, 1.178673 * -0.045197])


def test_truth_initial_and_frame(dam_truth):
    pr = physics.get_preset("dam-break")
    assert dam_truth.frame == PHYSICAL and dam_truth.states.shape == (201, 512, 2)
    np.testing.assert_array_equal(dam_truth.states[0], physics.make_initial(pr).values)


def test_truth_deterministic(dam_truth):
    again = physics.generate_truth(physics.get_preset("dam-break"))
    assert np.array_equal(again.states, dam_truth.states)


def test_dam_break_shock_and_rarefaction(dam_truth):
    pr = physics.get_preset("dam-break")
    x = pr.grid.centers
    h = dam_truth.states[-1, :, 0]
    dh = np.diff(h)
    shock = int(np.argmin(dh))
    assert x[shock] > 0.5  # moved right
    assert -dh[shock] > 0.5 * (h.max() - h.min()) / 4
    # h decreases across the shock neighbourhood, up to wiggles far below the jump
    assert np.all(np.diff(h[shock - 5:shock + 6]) <= 1e-4 * (h.max() - h.min()))
    # the left-going rarefaction: a smooth decrease from h_l, entirely left of the dam
    h_l = physics.DAM_BREAK["h_l"]
    fan = (h < h_l - 0.05) & (h > h[shock - 5] + 0.05)
    assert fan.sum() > 20 and x[fan].max() < 0
    assert np.all(np.diff(h[fan]) < 0)
    assert h[np.searchsorted(x, -4.5)] == pytest.approx(physics.DAM_BREAK["h_l"], rel=1e-6)


def test_shu_osher_oscillatory_region(shu_truth):
    pr = physics.get_preset("shu-osher")
    x = pr.grid.centers
    rho = shu_truth.states[-1, :, 0]
    drho = np.diff(rho)
    sel = (x[:-1] >= 0) & (x[:-1] <= 2)
    d = drho[sel]
    changes = np.count_nonzero(np.sign(d[1:]) * np.sign(d[:-1]) < 0)
    assert changes >= 4


@pytest.mark.slow
def test_shu_osher_truth_refinement(shu_truth):
    fine = physics.generate_truth(physics.get_preset("shu-osher"), refine=8)
    err = relative_l2(shu_truth.states[-1], fine.states[-1], shu_truth.dx)
    assert err[0] < 0.02


def test_observe_noiseless_and_seeded(dam_truth):
    clean = physics.observe(dam_truth, NoiseModel(0.0, 3))
    assert np.array_equal(clean.states, dam_truth.states)
    a = physics.observe(dam_truth, NoiseModel(0.1, 3))
    b = physics.observe(dam_truth, NoiseModel(0.1, 3))
    c = physics.observe(dam_truth, NoiseModel(0.1, 4))
    assert np.array_equal(a.states, b.states) and not np.array_equal(a.states, c.states)


def test_observe_statistics(dam_truth):
    y = physics.observe(dam_truth, NoiseModel(0.1, 0))
    eta = (y.states - dam_truth.states)[1:]
    var = eta.reshape(-1, 2).var(axis=0)
    assert np.all((var > 0.095) & (var < 0.105))
    bound = 3 * np.sqrt(0.1) / np.sqrt(eta.size)
    assert abs(eta.mean()) < bound


def test_observe_draw_order(dam_truth):
    # draws are laid out (time, channel, cell)
    from nssda import rng
    y = physics.observe(dam_truth, NoiseModel(1.0, 5))
    first = rng.stream(5, "observation").standard_normal(3)
    np.testing.assert_allclose((y.states - dam_truth.states)[0, :3, 0], first, rtol=1e-12)


def test_observe_requires_physical(dam_truth):
    spec = physics.get_preset("dam-break").spec()
    cons = physics.to_conserved_trajectory(dam_truth, spec)
    with pytest.raises(ValueError):
        physics.observe(cons, NoiseModel(0.1, 0))


def test_truth_volume_bookkeeping(dam_truth):
    pr = physics.get_preset("dam-break")
    spec = pr.spec()
    vol = dam_truth.states[:, :, 0].sum(axis=1) * pr.grid.dx
    f = SweFlux()
    influx = (f.flux(spec.boundary[0])[0] - f.flux(spec.boundary[1])[0]) * pr.dt * pr.J
    assert abs(vol[-1] - vol[0] - influx) < 1e-8
