"""Physical model: two driven three-level atoms in cavities linked by fiber modes.

Geometry and conventions
------------------------
Two atoms with ground levels |0>, |1> and upper level |2> sit in separate
single-mode cavities (annihilation operators a1, a2).  The cavities are
connected through N mediating bosonic modes b_n (a fiber or resonator
chain), each coupled to both cavities with strength nu.  All couplings are
written in the frame rotating with the drives, so only detunings appear:

* classical drive on |0> -> |2| with Rabi rate Omega and detuning Delta,
* cavity coupling g on |1> <-> |2| with cavity detuning delta,
* mediating mode n detuned by Delta_n relative to the cavities,
* a two-ground-state (microwave/Raman) drive Omega_M on |0> -> |1> with a
  relative phase theta_M between the two atoms.

Rates are expressed in units of g (g = 1 by default).  Dissipation: field
amplitude decay kappa on every cavity and mediating mode, atomic decay
gamma0 (|2> -> |0>) and gamma1 (|2> -> |1>) on both atoms.

The drive part of the Hamiltonian is split as V_plus + V_minus with
V_plus = (Omega/2)(|2><0|_1 + |2><0|_2); the weak-drive reduction in
:mod:`atomlink.effective` relies on that split.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .qspace import CompositeSpace, SparseOp, atom3, build_space, embed_product, local_operator, mode

__all__ = [
    "PhysicalParams",
    "ModeLayout",
    "HamiltonianParts",
    "fig3_params",
    "params_for_cooperativity",
    "mediating_detunings_for",
    "standard_layout",
    "build_space_for",
    "build_hamiltonian_parts",
    "build_collapse_ops",
    "collapse_labels",
    "delocalized_collapse_ops",
    "delocalized_transform",
    "delocalized_frequencies",
    "cooperativity",
    "ground_state_vector",
    "random_ground_state",
    "WeakCouplingWarning",
]

HERMITICITY_TOL = 1e-12


class WeakCouplingWarning(UserWarning):
    """Raised when loss rates are not small against the coherent scales."""


@dataclass(frozen=True)
class PhysicalParams:
    """All model rates, in units of the atom-cavity coupling g.

    ``mediating_detunings`` fixes the number of mediating modes; its length
    is exposed as ``n_mediating``.
    """

    omega: float  # drive |0>->|2>
    omega_m: float  # ground-state drive |0>->|1>
    theta_m: float  # relative phase of the ground-state drive, atom 2
    delta_cap: float  # detuning of level |2>  (Delta)
    delta: float  # cavity detuning
    nu: float  # cavity <-> mediating mode coupling
    kappa: float  # field amplitude decay
    gamma0: float  # |2> -> |0> decay
    gamma1: float  # |2> -> |1> decay
    mediating_detunings: tuple[float, ...] = (0.0,)
    g: float = 1.0

    def __post_init__(self):
        if self.g <= 0:
            raise ValueError("coupling g must be positive")
        for name in ("omega", "omega_m", "kappa", "gamma0", "gamma1", "nu"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if len(self.mediating_detunings) < 1:
            raise ValueError("at least one mediating mode is required")

    @property
    def n_mediating(self) -> int:
        return len(self.mediating_detunings)

    @property
    def gamma(self) -> float:
        """Total decay rate of |2>."""
        return self.gamma0 + self.gamma1

    def check_weak_coupling(self, factor: float = 0.25) -> None:
        """Warn unless the loss rates are small against their coherent scales.

        kappa (field decay) is compared with the field scales g, |delta|,
        nu; gamma (excited-state decay) with the drive detuning |Delta|,
        which is what suppresses the excited population.
        """
        field_scale = min(self.g, abs(self.delta), self.nu)
        atom_scale = abs(self.delta_cap)
        if (
            field_scale == 0
            or atom_scale == 0
            or self.kappa > factor * field_scale
            or self.gamma > factor * atom_scale
        ):
            warnings.warn(
                f"loss rates kappa={self.kappa:.4g}, gamma={self.gamma:.4g} are not "
                f"small against the coherent scales (field {field_scale:.4g}, "
                f"atom {atom_scale:.4g}); the weak-drive reduction and rate "
                "formulas degrade in this regime",
                WeakCouplingWarning,
                stacklevel=2,
            )

    def with_(self, **kwargs) -> "PhysicalParams":
        return replace(self, **kwargs)


def fig3_params(theta_m: float = 0.0) -> PhysicalParams:
    """Reference working point used throughout the reproduction presets.

    Cooperativity 150 with gamma = 2 kappa, one resonant mediating mode.
    theta_m = 0 prepares the singlet-like state, pi the triplet-like one.
    """
    kappa = 0.0577
    gamma = 2.0 * kappa
    return PhysicalParams(
        omega=0.06,
        omega_m=0.0138,
        theta_m=theta_m,
        delta_cap=1.3,
        delta=0.2875,
        nu=0.4528,
        kappa=kappa,
        gamma0=gamma / 2.0,
        gamma1=gamma / 2.0,
        mediating_detunings=(0.0,),
    )


def params_for_cooperativity(c: float, base: PhysicalParams | None = None) -> PhysicalParams:
    """Rescale kappa, gamma to cooperativity ``c`` in the gamma = 2 kappa family."""
    if c <= 0:
        raise ValueError("cooperativity must be positive")
    base = base if base is not None else fig3_params()
    kappa = base.g / math.sqrt(2.0 * c)  # C = g^2/(kappa*gamma), gamma = 2 kappa
    gamma = 2.0 * kappa
    return base.with_(kappa=kappa, gamma0=gamma / 2.0, gamma1=gamma / 2.0)


def mediating_detunings_for(n: int, delta_x: float) -> tuple[float, ...]:
    """Detuning layout of the mediating modes used by the multi-mode presets.

    n = 1 -> (0,);  n = 2 -> (0, delta_x);  odd n -> k*delta_x for
    k = -(n-1)/2 .. (n-1)/2.  Every layout keeps one resonant mode.
    """
    if n < 1:
        raise ValueError("need at least one mediating mode")
    if n == 1:
        return (0.0,)
    if n == 2:
        return (0.0, float(delta_x))
    if n % 2 == 1:
        half = (n - 1) // 2
        return tuple(float(k * delta_x) for k in range(-half, half + 1))
    raise ValueError(f"no detuning layout defined for even n = {n} > 2")


@dataclass(frozen=True)
class ModeLayout:
    """Subsystem indices of the physical components inside a composite space."""

    atom1: int
    atom2: int
    cavity1: int
    cavity2: int
    mediating: tuple[int, ...]

    @property
    def fields(self) -> tuple[int, ...]:
        return (self.cavity1, self.cavity2) + self.mediating

    @property
    def atoms(self) -> tuple[int, int]:
        return (self.atom1, self.atom2)


def standard_layout(n_mediating: int) -> ModeLayout:
    """Atoms first, then the two cavities, then the mediating modes."""
    return ModeLayout(
        atom1=0,
        atom2=1,
        cavity1=2,
        cavity2=3,
        mediating=tuple(range(4, 4 + n_mediating)),
    )


def build_space_for(
    p: PhysicalParams,
    excitation_cap: int | None = 2,
    per_mode_cap: int = 2,
) -> tuple[CompositeSpace, ModeLayout]:
    """Composite space for a parameter set: 2 atoms + (N+2) field modes.

    The per-mode truncation is subordinate to the global cap: a mode never
    needs more photons than the cap allows.
    """
    n_max = per_mode_cap if excitation_cap is None else max(1, min(per_mode_cap, excitation_cap))
    subs = [atom3(), atom3()] + [mode(n_max) for _ in range(2 + p.n_mediating)]
    space = build_space(subs, excitation_cap)
    return space, standard_layout(p.n_mediating)


@dataclass(frozen=True)
class HamiltonianParts:
    """The interaction-frame Hamiltonian, split for the effective reduction.

    h0      atoms + fields + their couplings (everything except the drives)
    h_g     the two-ground-state drive
    v_plus  raising part of the |0> -> |2> drive
    v_minus its adjoint
    """

    h0: SparseOp
    h_g: SparseOp
    v_plus: SparseOp
    v_minus: SparseOp

    @property
    def total(self) -> SparseOp:
        return self.h0 + self.h_g + self.v_plus + self.v_minus

    def check_hermiticity(self, tol: float = HERMITICITY_TOL) -> None:
        for name, op in (("h0", self.h0), ("h_g", self.h_g), ("total", self.total)):
            defect = op.hermiticity_defect()
            if defect > tol:
                raise ValueError(f"{name} hermiticity defect {defect:.3e} exceeds {tol:.1e}")
        vd = (self.v_plus.dag() - self.v_minus).norm_max()
        if vd > tol:
            raise ValueError(f"v_minus is not the adjoint of v_plus (defect {vd:.3e})")


def _annihilator(space: CompositeSpace, sub: int) -> SparseOp:
    return local_operator(space, sub, "annihilate")


def build_hamiltonian_parts(p: PhysicalParams, space: CompositeSpace, layout: ModeLayout) -> HamiltonianParts:
    """Assemble H = h0 + h_g + v_plus + v_minus on the given space.

    Every term is embedded through a single multi-factor product so the
    capped matrices equal the projected uncapped ones.
    """
    if len(layout.mediating) != p.n_mediating:
        raise ValueError("layout does not match the number of mediating modes")

    terms_h0: list[SparseOp] = []

    for atom, cav in ((layout.atom1, layout.cavity1), (layout.atom2, layout.cavity2)):
        terms_h0.append(p.delta_cap * local_operator(space, atom, "project", 2))
        terms_h0.append(p.delta * local_operator(space, cav, "number"))
        # g |2><1| a + h.c.
        t21 = np.zeros((3, 3), dtype=complex)
        t21[2, 1] = 1.0
        a_loc = _local_dense(space, cav, "annihilate")
        jc = embed_product(space, [(atom, p.g * t21), (cav, a_loc)])
        terms_h0.append(jc + jc.dag())

    for det, med in zip(p.mediating_detunings, layout.mediating):
        terms_h0.append((det + p.delta) * local_operator(space, med, "number"))
        # nu b_n (a1^dag + a2^dag) + h.c.
        b_loc = _local_dense(space, med, "annihilate")
        for cav in (layout.cavity1, layout.cavity2):
            adag_loc = _local_dense(space, cav, "create")
            hop = embed_product(space, [(med, p.nu * b_loc), (cav, adag_loc)])
            terms_h0.append(hop + hop.dag())

    h0 = _sum_ops(terms_h0, space.dim)

    # ground-state drive with the relative phase on atom 2
    t10 = np.zeros((3, 3), dtype=complex)
    t10[1, 0] = 1.0
    hg_raise = (p.omega_m / 2.0) * (
        embed_product(space, [(layout.atom1, t10)])
        + np.exp(-1j * p.theta_m) * embed_product(space, [(layout.atom2, t10)])
    )
    h_g = hg_raise + hg_raise.dag()

    t20 = np.zeros((3, 3), dtype=complex)
    t20[2, 0] = 1.0
    v_plus = (p.omega / 2.0) * (
        embed_product(space, [(layout.atom1, t20)]) + embed_product(space, [(layout.atom2, t20)])
    )

    parts = HamiltonianParts(h0=h0, h_g=h_g, v_plus=v_plus, v_minus=v_plus.dag())
    parts.check_hermiticity()
    return parts


def _local_dense(space: CompositeSpace, sub: int, kind: str) -> np.ndarray:
    from .qspace import _local_matrix  # shared level conventions

    return _local_matrix(space.subsystems[sub], kind, None, None)


def _sum_ops(ops: list[SparseOp], dim: int) -> SparseOp:
    total = SparseOp.zeros(dim)
    for op in ops:
        total = total + op
    return total


def build_collapse_ops(p: PhysicalParams, space: CompositeSpace, layout: ModeLayout) -> list[SparseOp]:
    """Collapse operators in the lab mode basis.

    Order: sqrt(kappa) a1, sqrt(kappa) a2, sqrt(kappa) b_n (n = 1..N),
    then sqrt(gamma0) |0><2| and sqrt(gamma1) |1><2| for each atom.
    """
    ops: list[SparseOp] = []
    sk = math.sqrt(p.kappa)
    for cav in (layout.cavity1, layout.cavity2):
        ops.append(sk * _annihilator(space, cav))
    for med in layout.mediating:
        ops.append(sk * _annihilator(space, med))
    s0, s1 = math.sqrt(p.gamma0), math.sqrt(p.gamma1)
    for atom in layout.atoms:
        ops.append(s0 * local_operator(space, atom, "transition", 0, 2))
    for atom in layout.atoms:
        ops.append(s1 * local_operator(space, atom, "transition", 1, 2))
    return ops


def collapse_labels(p: PhysicalParams) -> list[str]:
    """Channel names matching :func:`build_collapse_ops` order."""
    labels = ["kappa_a1", "kappa_a2"]
    labels += [f"kappa_b{n + 1}" for n in range(p.n_mediating)]
    labels += ["gamma0_atom1", "gamma0_atom2", "gamma1_atom1", "gamma1_atom2"]
    return labels


def delocalized_collapse_ops(p: PhysicalParams, space: CompositeSpace, layout: ModeLayout) -> list[SparseOp]:
    """Field decay written in the delocalized mode basis (N = 1 only).

    With equal decay rates on all field modes the dissipator is invariant
    under the unitary mode mixing, so these are equivalent to the lab-basis
    field operators; the delocalized labels are what the effective-channel
    bookkeeping wants.  Atomic channels are appended unchanged.
    """
    cs, _ = delocalized_transform(p, space, layout)
    sk = math.sqrt(p.kappa)
    ops = [sk * cs[name] for name in ("c1", "c2", "c3")]
    s0, s1 = math.sqrt(p.gamma0), math.sqrt(p.gamma1)
    for atom in layout.atoms:
        ops.append(s0 * local_operator(space, atom, "transition", 0, 2))
    for atom in layout.atoms:
        ops.append(s1 * local_operator(space, atom, "transition", 1, 2))
    return ops


def delocalized_labels() -> list[str]:
    return ["kappa_c1", "kappa_c2", "kappa_c3", "gamma0_atom1", "gamma0_atom2", "gamma1_atom1", "gamma1_atom2"]


def delocalized_transform(
    p: PhysicalParams, space: CompositeSpace, layout: ModeLayout
) -> tuple[dict[str, SparseOp], SparseOp]:
    """Delocalized field modes for the single-mediator resonant case.

    Returns the mode operators

        c1 = (a1 - a2)/sqrt(2)
        c2 = (a1 + a2 + sqrt(2) b)/2
        c3 = (a1 + a2 - sqrt(2) b)/2

    together with the field+coupling Hamiltonian rewritten on them,

        delta c1^dag c1 + (delta + sqrt(2) nu) c2^dag c2
                        + (delta - sqrt(2) nu) c3^dag c3,

    which is verified against the lab-basis form before returning.  Only
    defined for one resonant mediating mode.
    """
    if p.n_mediating != 1 or p.mediating_detunings[0] != 0.0:
        raise ValueError("delocalized transform requires exactly one resonant mediating mode")

    a1 = _annihilator(space, layout.cavity1)
    a2 = _annihilator(space, layout.cavity2)
    b = _annihilator(space, layout.mediating[0])
    s2 = math.sqrt(2.0)
    cs = {
        "c1": (1.0 / s2) * (a1 - a2),
        "c2": 0.5 * (a1 + a2 + s2 * b),
        "c3": 0.5 * (a1 + a2 - s2 * b),
    }

    freqs = delocalized_frequencies(p)
    # number operators built annihilator-first, so the capped products are exact
    h_deloc = _sum_ops(
        [f * (c.dag() @ c) for f, c in zip(freqs, (cs["c1"], cs["c2"], cs["c3"]))],
        space.dim,
    )

    h_lab_terms = [
        p.delta * local_operator(space, layout.cavity1, "number"),
        p.delta * local_operator(space, layout.cavity2, "number"),
        p.delta * local_operator(space, layout.mediating[0], "number"),
    ]
    b_loc = _local_dense(space, layout.mediating[0], "annihilate")
    for cav in (layout.cavity1, layout.cavity2):
        adag_loc = _local_dense(space, cav, "create")
        hop = embed_product(space, [(layout.mediating[0], p.nu * b_loc), (cav, adag_loc)])
        h_lab_terms.append(hop + hop.dag())
    h_lab = _sum_ops(h_lab_terms, space.dim)

    defect = (h_deloc - h_lab).norm_max()
    if defect > 1e-12:
        raise AssertionError(f"delocalized rewrite does not match the lab form (defect {defect:.3e})")
    return cs, h_deloc


def delocalized_frequencies(p: PhysicalParams) -> np.ndarray:
    """Frequencies of the delocalized field modes.

    For one resonant mediator this is (delta, delta + sqrt(2) nu,
    delta - sqrt(2) nu) in the c1, c2, c3 order of
    :func:`delocalized_transform`.  In general the frequencies are the
    eigenvalues of the single-photon coupling matrix on
    (a1, a2, b_1 .. b_N): diagonal (delta, delta, delta + Delta_n ...),
    off-diagonal nu between each cavity and every mediating mode.
    """
    if p.n_mediating == 1 and p.mediating_detunings[0] == 0.0:
        s2nu = math.sqrt(2.0) * p.nu
        return np.array([p.delta, p.delta + s2nu, p.delta - s2nu])
    n = p.n_mediating
    m = np.zeros((n + 2, n + 2))
    m[0, 0] = m[1, 1] = p.delta
    for k, det in enumerate(p.mediating_detunings):
        m[2 + k, 2 + k] = p.delta + det
        m[0, 2 + k] = m[2 + k, 0] = p.nu
        m[1, 2 + k] = m[2 + k, 1] = p.nu
    return np.sort(np.linalg.eigvalsh(m))


def single_photon_coupling_matrix(p: PhysicalParams) -> np.ndarray:
    """The (N+2)x(N+2) field coupling matrix used for mode analysis."""
    n = p.n_mediating
    m = np.zeros((n + 2, n + 2))
    m[0, 0] = m[1, 1] = p.delta
    for k, det in enumerate(p.mediating_detunings):
        m[2 + k, 2 + k] = p.delta + det
        m[0, 2 + k] = m[2 + k, 0] = p.nu
        m[1, 2 + k] = m[2 + k, 1] = p.nu
    return m


def cooperativity(p: PhysicalParams) -> float:
    """C = g^2 / (kappa * gamma) with gamma = gamma0 + gamma1."""
    if p.kappa <= 0 or p.gamma <= 0:
        raise ValueError("cooperativity needs positive kappa and gamma")
    return p.g ** 2 / (p.kappa * p.gamma)


# -- initial states -------------------------------------------------------


def ground_state_vector(space: CompositeSpace, layout: ModeLayout, atom_levels: tuple[int, int] = (0, 0)) -> np.ndarray:
    """|atom1 atom2> with every field mode empty."""
    multi = [0] * space.n_subsystems
    multi[layout.atom1], multi[layout.atom2] = atom_levels
    return space.basis_vector(tuple(multi))


def random_ground_state(space: CompositeSpace, layout: ModeLayout, seed: int) -> np.ndarray:
    """Haar-random pure state on the four-dimensional atomic ground manifold.

    Fields start empty.  The generator seed fully determines the state and
    is meant to be recorded alongside any run that uses it.
    """
    rng = np.random.default_rng(seed)
    amps = rng.normal(size=4) + 1j * rng.normal(size=4)
    amps /= np.linalg.norm(amps)
    vec = np.zeros(space.dim, dtype=complex)
    for amp, levels in zip(amps, ((0, 0), (0, 1), (1, 0), (1, 1))):
        vec += amp * ground_state_vector(space, layout, levels)
    return vec
