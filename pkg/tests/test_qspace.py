"""Capped composite spaces and the sparse operator algebra on them."""

import itertools

import numpy as np
import pytest

from atomlink.qspace import (
    CompositeSpace,
    DensityMatrix,
    SparseOp,
    atom3,
    build_space,
    embed_product,
    local_operator,
    mode,
)


def brute_force_basis(subsystems, cap):
    """Independent enumeration: filter the full product basis by weight."""
    ranges = [range(s.levels) for s in subsystems]
    out = []
    for multi in itertools.product(*ranges):
        w = sum(s.weights[l] for s, l in zip(subsystems, multi))
        if cap is None or w <= cap:
            out.append(multi)
    return out


def projection_matrix(space):
    """Selection matrix from the uncapped product basis onto the capped one."""
    full = list(itertools.product(*[range(s.levels) for s in space.subsystems]))
    pos = {m: i for i, m in enumerate(full)}
    p = np.zeros((space.dim, len(full)))
    for k, multi in enumerate(space.basis):
        p[k, pos[multi]] = 1.0
    return p


def kron_all(mats):
    out = np.array([[1.0 + 0j]])
    for m in mats:
        out = np.kron(out, m)
    return out


def model_subsystems(n_mediating, n_max):
    return [atom3(), atom3()] + [mode(n_max) for _ in range(2 + n_mediating)]


def test_subsystem_specs():
    a = atom3()
    assert a.levels == 3 and a.weights == (0, 0, 1)
    m = mode(2)
    assert m.levels == 3 and m.weights == (0, 1, 2)
    with pytest.raises(ValueError):
        mode(0)
    with pytest.raises(ValueError):
        CompositeSpace([], excitation_cap=1)
    with pytest.raises(ValueError):
        CompositeSpace([atom3()], excitation_cap=-1)


def test_capped_dimensions_match_brute_force():
    # (n_mediating, per-mode n_max, cap) -> dim used by the simulator presets
    cases = [
        ((1, 1, 1), 20),
        ((1, 2, 2), 57),
        ((2, 2, 2), 81),
        ((3, 2, 2), 109),
        ((5, 1, 1), 36),
    ]
    for (n_med, n_max, cap), expected in cases:
        subs = model_subsystems(n_med, n_max)
        space = build_space(subs, cap)
        brute = brute_force_basis(subs, cap)
        assert space.dim == len(brute) == expected, (n_med, n_max, cap, space.dim)
        assert list(space.basis) == brute  # same lexicographic order


def test_basis_order_and_weights():
    space = build_space([atom3(), mode(2)], excitation_cap=2)
    # subsystem 0 slowest: (0,0), (0,1), (0,2), (1,0), ...
    assert space.basis[0] == (0, 0)
    assert space.basis[1] == (0, 1)
    assert space.basis[2] == (0, 2)
    assert space.basis[3] == (1, 0)
    # |2> on the atom carries weight 1, so (2, 2) is capped away
    assert space.index((2, 2)) is None
    assert space.index((2, 1)) is not None
    ws = space.weights()
    for k in range(space.dim):
        assert space.weight(k) == ws[k] <= 2


def test_basis_vector_roundtrip():
    space = build_space([atom3(), mode(1)], excitation_cap=1)
    v = space.basis_vector((1, 0))
    assert v.shape == (space.dim,)
    assert np.count_nonzero(v) == 1
    assert v[space.index((1, 0))] == 1.0
    with pytest.raises(ValueError):
        space.basis_vector((2, 1))  # weight 2, capped away


def test_local_operator_equals_projected_kron():
    space = build_space([atom3(), mode(2)], excitation_cap=2)
    p = projection_matrix(space)
    eye3 = np.eye(3)
    a = np.diag(np.sqrt([1.0, 2.0]), k=1)

    got = local_operator(space, 1, "annihilate").to_dense()
    want = p @ kron_all([eye3, a]) @ p.T
    assert np.max(np.abs(got - want)) < 1e-14

    t20 = np.zeros((3, 3))
    t20[2, 0] = 1.0
    got = local_operator(space, 0, "transition", 2, 0).to_dense()
    want = p @ kron_all([t20, np.eye(3)]) @ p.T
    assert np.max(np.abs(got - want)) < 1e-14

    got = local_operator(space, 1, "number").to_dense()
    want = p @ kron_all([eye3, np.diag([0.0, 1.0, 2.0])]) @ p.T
    assert np.max(np.abs(got - want)) < 1e-14


def test_local_operator_errors():
    space = build_space([atom3(), mode(1)], excitation_cap=1)
    with pytest.raises(ValueError):
        local_operator(space, 0, "annihilate")  # ladder on an atom
    with pytest.raises(ValueError):
        local_operator(space, 5, "number")  # bad subsystem
    with pytest.raises(ValueError):
        local_operator(space, 0, "transition", 3, 0)  # level out of range
    with pytest.raises(ValueError):
        local_operator(space, 0, "no_such_kind")


def test_embed_product_multi_factor_is_projected_kron():
    # the product of two separately capped embeddings loses through-cap
    # paths; the multi-factor embedding must match the projected kron
    subs = [atom3(), mode(2), mode(2)]
    space = build_space(subs, excitation_cap=2)
    p = projection_matrix(space)
    rng = np.random.default_rng(11)
    for _ in range(5):
        m0 = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        m2 = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        got = embed_product(space, [(0, m0), (2, m2)]).to_dense()
        want = p @ kron_all([m0, np.eye(3), m2]) @ p.T
        assert np.max(np.abs(got - want)) < 1e-12


def test_embed_product_argument_checks():
    space = build_space([atom3(), mode(1)], excitation_cap=1)
    m = np.eye(3)
    with pytest.raises(ValueError):
        embed_product(space, [(0, m), (0, m)])  # same subsystem twice
    with pytest.raises(ValueError):
        embed_product(space, [(1, m)])  # wrong local shape (mode(1) is 2x2)
    with pytest.raises(ValueError):
        embed_product(space, [(7, m)])


def test_sparse_op_algebra_matches_dense():
    rng = np.random.default_rng(23)
    dim = 7
    for _ in range(5):
        a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        b = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        sa, sb = SparseOp(a), SparseOp(b)
        assert np.max(np.abs((sa + sb).to_dense() - (a + b))) < 1e-14
        assert np.max(np.abs((sa - sb).to_dense() - (a - b))) < 1e-14
        assert np.max(np.abs((sa @ sb).to_dense() - (a @ b))) < 1e-13
        assert np.max(np.abs((2.5j * sa).to_dense() - 2.5j * a)) < 1e-14
        assert np.max(np.abs(sa.dag().to_dense() - a.conj().T)) < 1e-14
        v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        assert np.max(np.abs(sa.apply(v) - a @ v)) < 1e-13


def test_sparse_op_zero_purge_and_hermiticity():
    a = SparseOp(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert (a - a).nnz == 0
    assert (a - a).norm_max() == 0.0
    h = SparseOp(np.array([[1.0, 1j], [-1j, 2.0]]))
    assert h.is_hermitian()
    assert not a.is_hermitian()
    with pytest.raises(ValueError):
        SparseOp(np.zeros((2, 3)))
    with pytest.raises(TypeError):
        a * a  # operator product must use @


def test_density_matrix_checks():
    v = np.array([3.0, 4.0])
    dm = DensityMatrix.pure(v)
    assert abs(dm.trace() - 1.0) < 1e-14
    assert dm.min_eigenvalue() > -1e-14
    dm.validate()

    bad_trace = DensityMatrix(np.diag([0.7, 0.7]).astype(complex))
    with pytest.raises(ValueError, match="trace"):
        bad_trace.validate()

    nonherm = DensityMatrix(np.array([[0.5, 0.2], [0.0, 0.5]], dtype=complex))
    with pytest.raises(ValueError, match="hermiticity"):
        nonherm.validate()

    negative = DensityMatrix(np.diag([1.5, -0.5]).astype(complex))
    with pytest.raises(ValueError, match="eigenvalue"):
        negative.validate()

    with pytest.raises(ValueError):
        DensityMatrix.pure(np.zeros(3))

    op = SparseOp(np.diag([1.0, 2.0]))
    mixed = DensityMatrix(np.diag([0.25, 0.75]).astype(complex))
    assert abs(mixed.expectation(op) - 1.75) < 1e-14
