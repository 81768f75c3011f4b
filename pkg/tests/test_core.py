import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nssda import core
from nssda.core import FieldState, FloorLog, Grid1D, Trajectory


@pytest.fixture
def swe():
    return core.shallow_water(1.0)


@pytest.fixture
def euler():
    return core.euler(1.4)


def test_grid_basics():
    g = Grid1D(-5.0, 5.0, 512)
    assert g.dx == pytest.approx(10 / 512)
    d = np.diff(g.centers)
    assert np.all(d > 0)
    np.testing.assert_allclose(d, g.dx, rtol=1e-12)
    assert g.centers[0] == pytest.approx(-5 + g.dx / 2)


@pytest.mark.parametrize("a,b,n", [(0, 0, 4), (1, 0, 4), (0, 1, 0)])
def test_grid_rejects_bad(a, b, n):
    with pytest.raises(ValueError):
        Grid1D(a, b, n)


def test_phi_examples(swe, euler):
    np.testing.assert_array_equal(swe.to_conserved(np.array([2.0, 3.0])), [2.0, 6.0])
    np.testing.assert_allclose(euler.to_conserved(np.array([1.0, 2.0, 1.0])), [1.0, 2.0, 4.5], rtol=1e-15)
    np.testing.assert_allclose(euler.to_conserved(np.array([1.0, 0.0, 1.0])), [1.0, 0.0, 2.5], rtol=1e-15)


def test_phi_inverse_examples(swe, euler):
    np.testing.assert_array_equal(swe.to_physical(np.array([2.0, 6.0])), [2.0, 3.0])
    np.testing.assert_allclose(euler.to_physical(np.array([1.0, 2.0, 4.5])), [1.0, 2.0, 1.0], rtol=1e-14)


def test_phi_inverse_floor(swe):
    log = FloorLog()
    v = swe.to_physical(np.array([1e-9, 0.0]), log)
    assert v[0] == core.FLOOR and v[1] == 0.0
    assert log.count == 1


def test_euler_energy_floor(euler):
    log = FloorLog()
    v = euler.to_physical(np.array([1.0, 2.0, 1.0]), log)  # E below kinetic energy
    assert v[2] > 0 and log.count >= 1


@pytest.mark.parametrize("bad", [[0.0, 1.0], [-1.0, 0.0]])
def test_phi_positivity_error(swe, bad):
    with pytest.raises(core.PositivityError):
        swe.to_conserved(np.array(bad))


def test_phi_euler_pressure_error(euler):
    with pytest.raises(core.PositivityError):
        euler.to_conserved(np.array([1.0, 0.0, -1.0]))


def test_fieldstate_wrappers(swe):
    s = FieldState(np.array([[2.0, 3.0], [1.0, -1.0]]), core.PHYSICAL, swe.physical_names)
    c = core.phi(s, swe)
    assert c.frame == core.CONSERVED
    np.testing.assert_array_equal(c.values, [[2.0, 6.0], [1.0, -1.0]])
    back = core.phi_inverse(c, swe)
    np.testing.assert_array_equal(back.values, s.values)
    with pytest.raises(ValueError):
        core.phi(c, swe)
    with pytest.raises(ValueError):
        s.values[0, 0] = 1.0  # immutable


def test_round_trip_random_states(swe, euler):
    gen = np.random.default_rng(0)
    v = np.column_stack([gen.uniform(0.1, 5, 10_000), gen.uniform(-3, 3, 10_000)])
    np.testing.assert_allclose(swe.to_physical(swe.to_conserved(v)), v, rtol=1e-12, atol=1e-12)
    v = np.column_stack([gen.uniform(0.1, 5, 10_000), gen.uniform(-3, 3, 10_000), gen.uniform(0.1, 10, 10_000)])
    np.testing.assert_allclose(euler.to_physical(euler.to_conserved(v)), v, rtol=1e-12, atol=1e-12)


def test_relative_l2_examples():
    u = np.array([[3.0], [4.0]])
    assert core.relative_l2(u, u, 1.0)[0] == 0.0
    assert core.relative_l2(2 * u, u, 1.0)[0] == pytest.approx(1.0)
    assert core.relative_l2(np.array([[3.0], [0.0]]), u, 1.0)[0] == pytest.approx(0.8)
    with pytest.raises(ZeroDivisionError):
        core.relative_l2(u, np.zeros_like(u), 1.0)


@settings(max_examples=50, deadline=None)
@given(c=st.floats(0.01, 10.0), dx=st.floats(0.01, 2.0))
def test_relative_l2_scale_reporting(c, dx):
    u = np.random.default_rng(1).uniform(0.5, 2.0, (16, 2))
    np.testing.assert_allclose(core.relative_l2(c * u, u, dx), abs(c - 1), rtol=1e-12, atol=1e-14)


def test_snapshot_round_trip_bitwise(tmp_path):
    gen = np.random.default_rng(3)
    states = gen.standard_normal((5, 7, 3)) * 10.0 ** gen.integers(-20, 20, (5, 7, 3))
    traj = Trajectory("euler", core.PHYSICAL, 0.1, 0.002, states)
    core.write_snapshots(tmp_path / "t.csv", traj)
    back = core.read_snapshots(tmp_path / "t.csv")
    assert np.array_equal(back.states, states)
    assert (back.system, back.frame, back.dx, back.dt) == ("euler", "physical", 0.1, 0.002)
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header.startswith("# system=euler n=7 p=3")


def test_snapshot_bad_files(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1,2,3\n")
    with pytest.raises(core.SnapshotFormatError):
        core.read_snapshots(p)
    p.write_text("# system=swe n=2 p=2 dx=1 dt=1 frame=physical\n1,2,3\n")
    with pytest.raises(core.SnapshotFormatError):
        core.read_snapshots(p)
