"""Integrators and steady-state solvers against closed forms and each other."""

import math

import numpy as np
import pytest

from atomlink.dynamics import (
    DegenerateSteadyStateError,
    LindbladGenerator,
    SuperoperatorSizeError,
    TraceDriftError,
    Trajectory,
    apply_generator,
    atomic_populations,
    evolve,
    liouvillian_matrix,
    manifold_recorder,
    population_recorder,
    reduced_atom_matrix,
    steady_state,
)
from atomlink.model import (
    build_collapse_ops,
    build_hamiltonian_parts,
    build_space_for,
    fig3_params,
    ground_state_vector,
    random_ground_state,
)
from atomlink.qspace import SparseOp, atom3, build_space, local_operator, mode


def random_generator(seed: int, d: int = 5, n_collapse: int = 2) -> LindbladGenerator:
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    h = SparseOp(0.5 * (a + a.conj().T))
    cols = []
    for _ in range(n_collapse):
        c = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        cols.append(SparseOp(0.5 * c))
    return LindbladGenerator(h, cols)


def random_density(seed: int, d: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def fig3_generator(theta_m: float = 0.0, excitation_cap: int = 1):
    p = fig3_params(theta_m)
    space, layout = build_space_for(p, excitation_cap=excitation_cap, per_mode_cap=excitation_cap)
    parts = build_hamiltonian_parts(p, space, layout)
    gen = LindbladGenerator(parts.total, build_collapse_ops(p, space, layout))
    return gen, space, layout


def test_amplitude_damping_closed_form():
    # single damped mode: <n>(t) = n0 exp(-kappa t), exact for the Lindblad flow
    kappa = 0.3
    space = build_space([mode(3)], None)
    num = local_operator(space, 0, "number")
    gen = LindbladGenerator(
        SparseOp.zeros(space.dim), [math.sqrt(kappa) * local_operator(space, 0, "annihilate")]
    )
    rho0 = np.zeros((4, 4), dtype=complex)
    rho0[3, 3] = 1.0
    numd = num.to_dense()

    def rec(rho):
        return {"n": float(np.real(np.trace(numd @ rho)))}

    t_final = 15.0
    for kwargs in ({"method": "rk4", "dt": 0.01}, {"method": "adaptive", "rtol": 1e-10}):
        traj = evolve(gen, rho0, t_final, record_interval=1.0, recorder=rec, **kwargs)
        exact = 3.0 * np.exp(-kappa * traj.times)
        dev = float(np.max(np.abs(traj.records["n"] - exact)))
        assert dev < 1e-6, f"{kwargs['method']}: max deviation {dev:.2e}"


def test_rabi_oscillation_closed_form():
    # closed two-level drive inside the three-level atom: P2 = sin^2(omega t / 2)
    omega = 0.8
    space = build_space([atom3()], None)
    h = (omega / 2.0) * (
        local_operator(space, 0, "transition", 2, 0) + local_operator(space, 0, "transition", 0, 2)
    )
    gen = LindbladGenerator(h, [])
    rho0 = np.zeros((3, 3), dtype=complex)
    rho0[0, 0] = 1.0

    def rec(rho):
        return {"P2": float(np.real(rho[2, 2]))}

    t_final = 20.0
    for kwargs in ({"method": "rk4", "dt": 0.005}, {"method": "adaptive", "rtol": 1e-10}):
        traj = evolve(gen, rho0, t_final, record_interval=0.5, recorder=rec, **kwargs)
        exact = np.sin(omega * traj.times / 2.0) ** 2
        dev = float(np.max(np.abs(traj.records["P2"] - exact)))
        assert dev < 1e-6, f"{kwargs['method']}: max deviation {dev:.2e}"


def test_matrix_free_application_matches_superoperator():
    for seed in (0, 1, 2):
        gen = random_generator(seed)
        liou = liouvillian_matrix(gen)
        rho = random_density(seed + 100, gen.dim)
        direct = apply_generator(gen, rho)
        via_matrix = (liou @ rho.flatten(order="F")).reshape((gen.dim, gen.dim), order="F")
        assert np.max(np.abs(direct - via_matrix)) < 1e-12


def test_rk4_matrix_free_path_matches_superoperator_path():
    gen = random_generator(5)
    rho0 = random_density(6, gen.dim)
    a = evolve(gen, rho0, 3.0, dt=0.01)
    b = evolve(gen, rho0, 3.0, dt=0.01, superop_ceiling=1)  # forces operator products
    assert np.max(np.abs(a.final.array - b.final.array)) < 1e-12


def test_adaptive_fallback_above_ceiling_agrees():
    gen = random_generator(8)
    rho0 = random_density(9, gen.dim)
    a = evolve(gen, rho0, 4.0, method="adaptive", rtol=1e-10)
    b = evolve(gen, rho0, 4.0, method="adaptive", rtol=1e-10, superop_ceiling=1)
    assert np.max(np.abs(a.final.array - b.final.array)) < 1e-7


def test_adaptive_matches_rk4_on_model_dynamics():
    gen, space, layout = fig3_generator()
    rho0 = np.outer(ground_state_vector(space, layout), ground_state_vector(space, layout).conj())
    rec = population_recorder(space, layout)
    a = evolve(gen, rho0, 200.0, method="rk4", dt=0.02, record_interval=10.0, recorder=rec)
    b = evolve(gen, rho0, 200.0, method="adaptive", rtol=1e-8, record_interval=10.0, recorder=rec)
    assert np.array_equal(a.times, b.times)
    for name in ("P00", "PS", "PT", "P11"):
        dev = float(np.max(np.abs(a.records[name] - b.records[name])))
        assert dev < 1e-6, f"{name}: adaptive vs rk4 deviation {dev:.2e}"


def test_state_invariants_on_every_solver_path():
    # trace, hermiticity and positivity of the propagated state, all paths
    for seed in (11, 12, 13):
        gen = random_generator(seed)
        rho0 = random_density(seed + 50, gen.dim)
        finals = [
            evolve(gen, rho0, 5.0, dt=0.01).final,
            evolve(gen, rho0, 5.0, dt=0.01, superop_ceiling=1).final,
            evolve(gen, rho0, 5.0, method="adaptive", rtol=1e-9).final,
            evolve(gen, rho0, 5.0, method="adaptive", rtol=1e-9, superop_ceiling=1).final,
            steady_state(gen, "null_space").rho,
        ]
        for dm in finals:
            dm.validate(trace_tol=1e-8, herm_tol=1e-10, psd_tol=1e-7)


def test_steady_state_methods_and_initial_conditions_agree():
    gen = random_generator(21)
    ns = steady_state(gen, "null_space")
    assert ns.residual < 1e-8
    lt1 = steady_state(gen, "long_time", rho0=random_density(1, gen.dim))
    lt2 = steady_state(gen, "long_time", rho0=random_density(2, gen.dim))
    assert np.max(np.abs(ns.rho.array - lt1.rho.array)) < 1e-5
    assert np.max(np.abs(lt1.rho.array - lt2.rho.array)) < 1e-3
    assert steady_state(gen, "auto").method == "null_space"
    assert steady_state(gen, "auto", superop_ceiling=1).method == "long_time"


def test_degenerate_steady_state_is_reported():
    # no dissipation at all: every density matrix is stationary
    gen = LindbladGenerator(SparseOp.zeros(3), [])
    with pytest.raises(DegenerateSteadyStateError):
        steady_state(gen, "null_space")
    # decay 1 -> 0 leaves level 2 untouched: two disconnected sinks
    c = np.zeros((3, 3), dtype=complex)
    c[0, 1] = 1.0
    gen2 = LindbladGenerator(SparseOp.zeros(3), [SparseOp(c)])
    with pytest.raises(DegenerateSteadyStateError):
        steady_state(gen2, "null_space")
    # purely coherent model dynamics: the pinned solve goes through
    # numerically but lands on an indefinite stationary combination
    p = fig3_params().with_(kappa=0.0, gamma0=0.0, gamma1=0.0)
    space, layout = build_space_for(p, 1, 1)
    parts = build_hamiltonian_parts(p, space, layout)
    gen3 = LindbladGenerator(parts.total, build_collapse_ops(p, space, layout))
    with pytest.raises(DegenerateSteadyStateError, match="indefinite"):
        steady_state(gen3, "null_space")


def test_trace_drift_aborts_unstable_run():
    # rk4 far outside its stability region: the defect is caught, not returned
    kappa = 3.0
    space = build_space([mode(1)], None)
    gen = LindbladGenerator(
        SparseOp.zeros(space.dim), [math.sqrt(kappa) * local_operator(space, 0, "annihilate")]
    )
    rho0 = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)
    with pytest.raises(TraceDriftError):
        evolve(gen, rho0, 40.0, dt=2.0, record_interval=2.0)


def test_record_grid_structure():
    gen = random_generator(31)
    rho0 = random_density(32, gen.dim)
    for method, kwargs in (("rk4", {"dt": 0.01}), ("adaptive", {})):
        traj = evolve(gen, rho0, 10.0, method=method, record_interval=1.0, **kwargs)
        assert traj.times[0] == 0.0
        assert traj.times[-1] == pytest.approx(10.0, abs=1e-9)
        assert np.all(np.diff(traj.times) > 0)
        assert len(traj.times) == 11
        for arr in traj.records.values():
            assert arr.shape == traj.times.shape
        assert traj.trace_err.shape == traj.times.shape
        assert float(np.max(traj.trace_err)) < 1e-8


def test_trajectory_csv_and_validation():
    gen, space, layout = fig3_generator()
    rho0 = np.outer(ground_state_vector(space, layout), ground_state_vector(space, layout).conj())
    traj = evolve(gen, rho0, 5.0, dt=0.02, record_interval=1.0, recorder=population_recorder(space, layout))
    traj.validate()
    csv = traj.to_csv()
    lines = csv.strip().split("\n")
    assert lines[0] == "t,P00,PS,PT,P11,leak,trace_err"
    assert len(lines) == len(traj.times) + 1
    first = dict(zip(Trajectory.CSV_COLUMNS, (float(x) for x in lines[1].split(","))))
    assert first["t"] == 0.0
    assert first["P00"] == pytest.approx(1.0, abs=1e-12)
    roundtrip = [float(x) for x in lines[-1].split(",")]
    assert roundtrip[0] == pytest.approx(5.0, rel=1e-10)

    traj.records["PS"][0] = 1.5
    with pytest.raises(ValueError, match="PS"):
        traj.validate()


def test_reduced_matrix_and_populations():
    gen, space, layout = fig3_generator()
    s2 = math.sqrt(2.0)

    v00 = ground_state_vector(space, layout)
    red = reduced_atom_matrix(np.outer(v00, v00.conj()), space, layout)
    assert red.shape == (9, 9)
    assert red[0, 0] == pytest.approx(1.0)
    assert np.real(np.trace(red)) == pytest.approx(1.0)

    singlet = (ground_state_vector(space, layout, (1, 0)) - ground_state_vector(space, layout, (0, 1))) / s2
    pops = atomic_populations(np.outer(singlet, singlet.conj()), space, layout)
    assert pops["PS"] == pytest.approx(1.0, abs=1e-12)
    assert pops["PT"] == pytest.approx(0.0, abs=1e-12)
    assert pops["leak"] == pytest.approx(0.0, abs=1e-12)

    # |10> splits evenly between the symmetric and antisymmetric combinations
    pops10 = atomic_populations(
        np.outer(ground_state_vector(space, layout, (1, 0)), ground_state_vector(space, layout, (1, 0)).conj()),
        space,
        layout,
    )
    assert pops10["PS"] == pytest.approx(0.5, abs=1e-12)
    assert pops10["PT"] == pytest.approx(0.5, abs=1e-12)

    # excited-level weight shows up only in the leak
    e_vec = np.zeros(space.dim, dtype=complex)
    e_vec[space.index((2, 0, 0, 0, 0))] = 1.0
    pops_e = atomic_populations(np.outer(e_vec, e_vec.conj()), space, layout)
    assert pops_e["leak"] == pytest.approx(1.0, abs=1e-12)
    assert pops_e["P00"] == pops_e["PS"] == pops_e["PT"] == pops_e["P11"] == 0.0

    rnd = random_ground_state(space, layout, seed=5)
    pops_r = atomic_populations(np.outer(rnd, rnd.conj()), space, layout)
    assert sum(pops_r.values()) == pytest.approx(1.0, abs=1e-10)


def test_argument_errors():
    gen = random_generator(41)
    rho0 = random_density(42, gen.dim)
    with pytest.raises(ValueError, match="t_final"):
        evolve(gen, rho0, 0.0)
    with pytest.raises(ValueError, match="shape"):
        evolve(gen, np.eye(3, dtype=complex) / 3.0, 1.0)
    with pytest.raises(ValueError, match="method"):
        evolve(gen, rho0, 1.0, method="euler")
    with pytest.raises(ValueError, match="method"):
        steady_state(gen, "exact")
    with pytest.raises(SuperoperatorSizeError):
        liouvillian_matrix(gen, max_columns=10)
    with pytest.raises(ValueError, match="dimension"):
        LindbladGenerator(SparseOp.zeros(3), [SparseOp.zeros(4)])
