import math

import numpy as np
import pytest

from scatgeo.errors import NumericError, ParameterError
from scatgeo.geometry import MassSpec, build_frame, change_frame
from scatgeo.grid import (
    GridSpec,
    GridState,
    HamiltonianSpec,
    ModelSpec,
    PairPotential,
    Propagator,
    apply_hamiltonian,
    edge_mass,
    energy,
    gaussian_state,
    imaginary_time_ground_state,
    load_state,
    position_moments,
    propagate,
    residual_norm,
    save_state,
    solve_bound_states,
    thresholds,
    transform_state,
)
from scatgeo.lattice import ClusterDecomposition, PairIndex

D = ClusterDecomposition
PT = PairPotential(1, 2, "poschl_teller", -1.0)


def two_body(pairs=(PT,), L=20.0, M=256):
    # masses 2, 2 give reduced mass 1 for the relative coordinate
    return ModelSpec(MassSpec((2.0, 2.0)), tuple(pairs), L, M).hamiltonian()


def test_grid_spec_validation():
    g = GridSpec(1, 10.0, 64)
    assert g.spacing == pytest.approx(20 / 64)
    assert g.axis[0] == -10.0 and g.axis[-1] == pytest.approx(10 - g.spacing)
    for bad in [(3, 1.0, 64), (1, -1.0, 64), (1, 1.0, 8), (1, 1.0, 100)]:
        with pytest.raises(ParameterError):
            GridSpec(*bad)


def test_potential_kinds():
    x = np.array([0.0, 1.0, 3.0])
    np.testing.assert_allclose(PairPotential(1, 2, "poschl_teller", -2.0)(x), -2 / np.cosh(x) ** 2)
    lr = PairPotential(1, 2, "long_range_power", 0.5, 0.8)
    np.testing.assert_allclose(lr(x), 0.5 * (1 + x * x) ** -0.4)
    assert np.all(PairPotential(1, 2)(x) == 0)
    with pytest.raises(ParameterError):
        PairPotential(1, 2, "coulomb", 1.0)
    with pytest.raises(ParameterError):
        PairPotential(1, 2, "long_range_power", 1.0, 1.5)


def test_plane_wave_eigenvalue():
    h = two_body(pairs=())
    g = h.grid
    k = 2 * np.pi * 5 / (2 * g.extent)
    psi = GridState(np.exp(1j * k * g.axis), g, h.frame)
    hpsi = apply_hamiltonian(psi, h)
    np.testing.assert_allclose(hpsi.values, k**2 / 2 * psi.values, atol=1e-12)
    const = GridState(np.ones(g.shape), g, h.frame)
    np.testing.assert_allclose(apply_hamiltonian(const, h).values, 0.0, atol=1e-12)


def test_hamiltonian_is_hermitian():
    m = ModelSpec(MassSpec((1.0, 2.0, 3.0)), (PT, PairPotential(2, 3, "long_range_power", 0.7, 0.6)), 10.0, 32)
    h = m.hamiltonian()
    rng = np.random.default_rng(0)
    psi = GridState(rng.normal(size=h.grid.shape) + 1j * rng.normal(size=h.grid.shape), h.grid, h.frame)
    phi = GridState(rng.normal(size=h.grid.shape) + 1j * rng.normal(size=h.grid.shape), h.grid, h.frame)
    assert abs(psi.inner(apply_hamiltonian(psi, h)).imag) <= 1e-12 * psi.norm_sq() * 100
    lhs = psi.inner(apply_hamiltonian(phi, h))
    rhs = np.conj(phi.inner(apply_hamiltonian(psi, h)))
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_restrictions():
    lr = PairPotential(2, 3, "long_range_power", 0.7, 0.6)
    m = ModelSpec(MassSpec((1.0, 1.0, 1.0)), (PT, lr), 10.0, 32)
    h = m.hamiltonian()
    a = D([[1, 2], [3]])
    assert h.restricted("internal", a).pairs == (PT,)
    assert h.restricted("intercluster", a).pairs == (lr,)
    psi = gaussian_state(h.grid, h.frame, [0, 0], [1, 1])
    full = apply_hamiltonian(psi, h).values
    parts = apply_hamiltonian(psi, h, "internal", a).values + apply_hamiltonian(
        psi, h, "intercluster", a, kinetic=False
    ).values
    np.testing.assert_allclose(full, parts, atol=1e-13)
    with pytest.raises(ParameterError):
        h.restricted("internal")


def test_dimension_mismatch():
    frame = build_frame(MassSpec((1.0, 1.0, 1.0)), D([[1], [2], [3]]))
    with pytest.raises(ParameterError):
        HamiltonianSpec(frame, GridSpec(1, 5.0, 32))
    h = two_body()
    other = GridState(np.zeros(128), GridSpec(1, 20.0, 128), h.frame)
    with pytest.raises(ParameterError):
        apply_hamiltonian(other, h)


def test_free_gaussian_variance():
    h = two_body(pairs=(), L=40.0, M=4096)
    psi = gaussian_state(h.grid, h.frame, [0.0], [1.0])
    assert position_moments(psi)[1][0, 0] == pytest.approx(1.0, abs=1e-12)
    out = propagate(psi, h, 0.01, 100)
    assert out.time == pytest.approx(1.0)
    assert abs(position_moments(out)[1][0, 0] - 1.25) <= 1e-6


def test_zero_steps_is_identity():
    h = two_body()
    psi = gaussian_state(h.grid, h.frame, [1.0], [1.0], [0.3])
    np.testing.assert_array_equal(propagate(psi, h, 0.1, 0).values, psi.values)


def test_backward_undoes_forward():
    h = two_body()
    psi = gaussian_state(h.grid, h.frame, [1.0], [1.0], [0.3])
    there = propagate(psi, h, 0.01, 50)
    back = propagate(there, h, 0.01, 50, backward=True)
    np.testing.assert_allclose(back.values, psi.values, atol=1e-12)
    assert back.time == pytest.approx(0.0, abs=1e-14)


def test_poschl_teller_ground_state():
    h = two_body()
    states = solve_bound_states(h, 3)
    assert len(states) == 1
    e0, psi0 = states[0]
    assert abs(e0 + 0.5) <= 1e-6
    assert residual_norm(psi0, e0, h) <= 1e-8
    exact = np.sqrt(0.5) / np.cosh(h.grid.axis)
    np.testing.assert_allclose(psi0.values.real, exact, atol=1e-8)
    e_it, _ = imaginary_time_ground_state(h, dtau=1e-3, total=20.0)
    assert abs(e_it - e0) <= 1e-6


def test_eigenstate_keeps_its_phase():
    h = two_body()
    e0, psi0 = solve_bound_states(h)[0]
    period = 2 * np.pi / abs(e0)
    steps = 2000
    out = propagate(psi0, h, period / steps, steps)
    fidelity = abs(psi0.inner(out)) ** 2
    assert fidelity >= 1 - 1e-8
    assert psi0.inner(out).real == pytest.approx(1.0, abs=1e-6)


def test_no_bound_states_for_free_pair():
    assert solve_bound_states(two_body(pairs=()), 2) == []


def test_norm_and_energy_conservation():
    h = two_body()
    psi = gaussian_state(h.grid, h.frame, [0.5], [1.0], [0.5])
    e0 = energy(psi, h)
    out = propagate(psi, h, 1e-4, 10_000)
    assert abs(out.norm_sq() - 1) <= 1e-8
    assert abs(energy(out, h) - e0) / abs(e0) <= 1e-8


def test_strang_second_order():
    h = two_body(pairs=(PairPotential(1, 2, "long_range_power", -1.0, 0.6),), L=20.0, M=256)
    psi = gaussian_state(h.grid, h.frame, [0.5], [1.0], [0.8])
    ref = propagate(psi, h, 1 / 800, 800).values
    errs = []
    for steps in (25, 50, 100):
        out = propagate(psi, h, 1 / steps, steps).values
        errs.append(np.sqrt(np.sum(np.abs(out - ref) ** 2) * h.grid.cell))
    for coarse, fine in zip(errs, errs[1:]):
        assert 3.5 < coarse / fine < 4.5


def test_non_finite_raises():
    h = two_body()
    psi = gaussian_state(h.grid, h.frame, [0.0], [1.0])
    psi.values[3] = np.nan
    with pytest.raises(NumericError, match="step 1"):
        propagate(psi, h, 0.01, 5, check_every=1)
    with pytest.raises(ParameterError):
        Propagator(h, -0.1)


def test_thresholds():
    single = ModelSpec(MassSpec((2.0, 2.0, 2.0)), (PT,), 20.0, 128)
    t = thresholds(single)
    assert len(t) == 2 and abs(t[0] + 0.5) <= 1e-6 and t[1] == 0.0
    free = ModelSpec(MassSpec((1.0, 1.0, 1.0)), (), 20.0, 64)
    assert thresholds(free) == [0.0]
    deeper = PairPotential(2, 3, "poschl_teller", -3.0)
    two = ModelSpec(MassSpec((2.0, 2.0, 2.0)), (PT, deeper), 20.0, 128)
    t2 = thresholds(two)
    # -3 sech^2 with reduced mass 1: lambda(lambda + 1) = 6, so lambda = 2
    assert any(abs(e + 2.0) <= 1e-6 for e in t2)
    assert any(abs(e + 0.5) <= 1e-6 for e in t2)
    assert set(t) <= {round(e, 9) for e in t2} | set(t)


def test_three_body_grid_search_ignores_continuum_edge():
    single = ModelSpec(MassSpec((2.0, 2.0, 2.0)), (PT,), 20.0, 64)
    assert len(thresholds(single, include_three_body=True)) == 2


def test_frame_independence():
    model = ModelSpec(
        MassSpec((1.0, 2.0, 3.0)),
        (PT, PairPotential(2, 3, "long_range_power", 0.5, 0.8)),
        24.0,
        256,
    )
    h1 = model.hamiltonian(D([[1], [2], [3]]))
    h2 = model.hamiltonian(D([[1, 3], [2]]))
    psi = gaussian_state(h1.grid, h1.frame, [0.3, -0.2], [1.0, 1.2], [0.4, 0.1])
    moved = transform_state(psi, h2.frame)
    assert moved.norm_sq() == pytest.approx(1.0, abs=1e-12)
    assert energy(moved, h2) == pytest.approx(energy(psi, h1), rel=1e-10)
    a = transform_state(propagate(psi, h1, 0.01, 100), h2.frame)
    b = propagate(moved, h2, 0.01, 100)
    assert np.max(np.abs(a.values - b.values)) <= 1e-8
    assert edge_mass(a) <= 1e-12


def test_snapshot_round_trip(tmp_path):
    h = two_body()
    psi = gaussian_state(h.grid, h.frame, [1.0], [1.0], [0.2])
    psi.time = 2.5
    path = tmp_path / "state.bin"
    save_state(path, psi)
    header = path.read_bytes().split(b"\n", 1)[0]
    assert b'"spacing"' in header and b'"time": 2.5' in header
    back = load_state(path)
    np.testing.assert_array_equal(back.values, psi.values)
    assert back.time == 2.5 and back.grid == psi.grid
    np.testing.assert_allclose(back.frame.weights, psi.frame.weights)


def test_model_validation():
    with pytest.raises(ParameterError):
        ModelSpec(MassSpec((1.0,) * 4), (), 10.0, 32)
    with pytest.raises(ParameterError):
        ModelSpec(MassSpec((1.0, 1.0)), (PairPotential(1, 3),), 10.0, 32)
    with pytest.raises(ParameterError):
        ModelSpec(MassSpec((1.0, 1.0, 1.0)), (PT, PT), 10.0, 32)
