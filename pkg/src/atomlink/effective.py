"""Weak-drive reduction to the four-state ground manifold.

For weak Omega the excited sector is only virtually populated and the
dynamics closes on the atomic ground manifold spanned by

    |00>, |S> = (|10> - |01>)/sqrt(2), |T> = (|10> + |01>)/sqrt(2), |11>

with all field modes empty.  The reduction follows the standard effective
operator recipe for weakly driven dissipative systems:

    H_nh   = H0 - (i/2) sum_x L_x^dag L_x
    H_eff  = -(1/2) V_minus [H_nh^{-1} + (H_nh^{-1})^dag] V_plus + H_g
    L_eff^x = L_x  H_nh^{-1} V_plus

where the inverse only ever acts inside the single-excitation block
reached by V_plus.  The numeric reduction here is the source of truth;
closed-form rate expressions come in three variants ("printed",
"b_corrected", "corrected") because several published coefficient forms
do not survive the comparison against the direct block inversion, see
``analytic_rates``.  The fully corrected forms are the adjudicated
default for channel comparisons; the rate-equation estimate layer uses
"b_corrected".
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import LindbladGenerator
from .model import (
    ModeLayout,
    PhysicalParams,
    build_collapse_ops,
    build_hamiltonian_parts,
    build_space_for,
    collapse_labels,
    delocalized_collapse_ops,
    delocalized_labels,
    ground_state_vector,
)
from .qspace import CompositeSpace, SparseOp

__all__ = [
    "GroundManifold",
    "EffectiveModel",
    "AnalyticRates",
    "MANIFOLD_LABELS",
    "DEFAULT_VARIANT",
    "ESTIMATE_VARIANT",
    "ground_manifold",
    "nonhermitian_hamiltonian",
    "single_excitation_indices",
    "effective_hamiltonian",
    "effective_lindblads",
    "hg_block",
    "analytic_rates",
    "analytic_stark_shifts",
    "build_effective_model",
    "build_effective_generator",
    "rate_deviations",
]

MANIFOLD_LABELS = ("00", "S", "T", "11")

# "corrected" tracks the numeric reduction and is the reference for channel
# structure and rate comparisons; the published 1/C scaling numbers follow
# the minimally repaired published forms, so the rate-equation estimate
# defaults to "b_corrected" instead.
DEFAULT_VARIANT = "corrected"
ESTIMATE_VARIANT = "b_corrected"


@dataclass(frozen=True)
class GroundManifold:
    """Orthonormal ground-manifold vectors embedded in a composite space.

    ``states`` has one column per manifold state, ordered as
    :data:`MANIFOLD_LABELS`.
    """

    states: np.ndarray  # (space.dim, 4)
    labels: tuple[str, ...] = MANIFOLD_LABELS

    def project(self, op_matrix) -> np.ndarray:
        """Compress a full-space operator to the 4x4 manifold block."""
        return self.states.conj().T @ (op_matrix @ self.states)


def ground_manifold(space: CompositeSpace, layout: ModeLayout) -> GroundManifold:
    v00 = ground_state_vector(space, layout, (0, 0))
    v01 = ground_state_vector(space, layout, (0, 1))
    v10 = ground_state_vector(space, layout, (1, 0))
    v11 = ground_state_vector(space, layout, (1, 1))
    s = (v10 - v01) / math.sqrt(2.0)
    t = (v10 + v01) / math.sqrt(2.0)
    return GroundManifold(states=np.stack([v00, s, t, v11], axis=1))


def single_excitation_indices(space: CompositeSpace) -> np.ndarray:
    return np.nonzero(space.weights() == 1)[0]


def nonhermitian_hamiltonian(h0: SparseOp, collapse: list[SparseOp]) -> SparseOp:
    """H0 minus i/2 times the summed jump normal products."""
    acc = SparseOp.zeros(h0.dim)
    for op in collapse:
        acc = acc + (op.dag() @ op)
    return h0 + (-0.5j) * acc


def _reduce(parts, collapse, space, layout):
    """Shared worker: manifold, inverse block and lifted V+ columns."""
    manifold = ground_manifold(space, layout)
    idx1 = single_excitation_indices(space)
    if len(idx1) == 0:
        raise ValueError("space has no single-excitation block; raise the cap")
    hnh = nonhermitian_hamiltonian(parts.h0, collapse)
    block = hnh.to_dense()[np.ix_(idx1, idx1)]
    minv = np.linalg.inv(block)
    v_cols = parts.v_plus.matrix @ manifold.states  # (dim, 4)
    leak = np.delete(v_cols, idx1, axis=0)
    if leak.size and np.max(np.abs(leak)) > 1e-12:
        raise ValueError("V_plus leaves the single-excitation block; inconsistent space")
    v_block = v_cols[idx1, :]
    w_block = minv @ v_block  # H_nh^{-1} V+ |g_j>, block coordinates
    w_full = np.zeros((space.dim, 4), dtype=complex)
    w_full[idx1, :] = w_block
    return manifold, idx1, minv, v_block, w_full


def effective_hamiltonian(parts, collapse, space: CompositeSpace, layout: ModeLayout) -> np.ndarray:
    """Numeric 4x4 effective Hamiltonian (Stark shifts plus the ground drive)."""
    manifold, _idx1, minv, v_block, _w = _reduce(parts, collapse, space, layout)
    stark = -0.5 * v_block.conj().T @ ((minv + minv.conj().T) @ v_block)
    return stark + manifold.project(parts.h_g.matrix)


def effective_lindblads(parts, collapse, space: CompositeSpace, layout: ModeLayout) -> list[np.ndarray]:
    """Numeric 4x4 effective collapse operators, one per input channel."""
    manifold, _idx1, _minv, _v, w_full = _reduce(parts, collapse, space, layout)
    out = []
    for op in collapse:
        out.append(manifold.states.conj().T @ (op.matrix @ w_full))
    return out


def hg_block(p: PhysicalParams) -> np.ndarray:
    """The two-ground-state drive on (|00>, |S>, |T>, |11>), closed form."""
    ph = cmath.exp(-1j * p.theta_m)
    s2 = math.sqrt(2.0)
    h = np.zeros((4, 4), dtype=complex)
    h[1, 0] = (p.omega_m / 2.0) * (1.0 - ph) / s2  # <S|Hg|00>
    h[2, 0] = (p.omega_m / 2.0) * (1.0 + ph) / s2  # <T|Hg|00>
    h[3, 1] = (p.omega_m / (2.0 * s2)) * (ph - 1.0)  # <11|Hg|S>
    h[3, 2] = (p.omega_m / (2.0 * s2)) * (ph + 1.0)  # <11|Hg|T>
    return h + h.conj().T


@dataclass(frozen=True)
class AnalyticRates:
    """Closed-form reduction coefficients and effective rates.

    ``variant`` records which coefficient forms were used: "printed" keeps
    the published expressions verbatim, "b_corrected" repairs only the
    non-evaluable B coefficient, "corrected" the full set validated
    against the numeric block inversion.
    """

    variant: str
    g_e: float
    delta_p: complex
    delta_cap_p: complex
    r1: complex
    r2: complex
    r3: complex
    a_coef: float
    b_coef: float
    c1_coef: float
    d1_coef: float
    c2_coef: float
    d2_coef: float
    kappa_c1_1: float
    kappa_c1_2: float
    kappa_c2_1: float
    kappa_c2_2: float
    kappa_c3_1: float
    kappa_c3_2: float
    gamma_e: float
    gamma_s_12: float
    gamma_s_34: float
    gamma_t_12: float
    gamma_t_34: float

    def pump_rate(self, target: str) -> float:
        if target == "S":
            return self.kappa_c1_1
        if target == "T":
            return self.kappa_c2_1 + self.kappa_c3_1
        raise ValueError("target must be 'S' or 'T'")

    def loss_rate(self, target: str) -> float:
        """kappa_cx_2 + gamma terms entering the rate-equation estimate."""
        if target == "S":
            return self.kappa_c1_2 + self.gamma_s_12 + self.gamma_s_34
        if target == "T":
            return self.kappa_c2_2 + self.kappa_c3_2 + self.gamma_t_12 + self.gamma_t_34
        raise ValueError("target must be 'S' or 'T'")


def analytic_rates(p: PhysicalParams, variant: str = DEFAULT_VARIANT) -> AnalyticRates:
    """Closed-form effective rates for the single-resonant-mediator model.

    All variants share the resonance denominators A, C1, D1, C2, D2 and
    the first-step pump-rate structure.  They differ where the published
    forms disagree with the direct inversion of the single-excitation
    block:

    * B: "printed" uses (delta/2 - nu^2) in the first product, which is
      not even dimensionally homogeneous; "b_corrected" and "corrected"
      use (delta^2/2 - nu^2), the form that follows from expanding the R1
      denominator to first order in kappa, gamma.
    * second-step rates kappa_cx_2: the printed forms are exactly a factor
      2 below the block inversion; only "corrected" doubles them.
    * gamma_e: the printed expression disagrees structurally with the
      inversion; "corrected" uses gamma * Omega^2 |r2|^2 with
      r2 = delta'/(Delta' delta' - g^2), which reproduces the numeric
      gamma channels (the /32 and /16 splittings are unchanged).
    * r2, r3: printed forms kept verbatim in "printed" and "b_corrected";
      "corrected" uses the directly inverted S and T channel elements.

    "corrected" is the reference against the numeric reduction;
    "b_corrected" (the minimal fix that makes the published forms
    evaluable) is what the published cooperativity-scaling numbers track,
    and is the default inside the rate-equation fidelity estimate.
    """
    if variant not in ("printed", "b_corrected", "corrected"):
        raise ValueError(f"unknown rate variant {variant!r}")
    if p.n_mediating != 1 or p.mediating_detunings[0] != 0.0:
        raise ValueError("closed-form rates require exactly one resonant mediating mode")

    g = p.g
    g2 = g * g
    delta, nu, dcap = p.delta, p.nu, p.delta_cap
    kappa, gamma = p.kappa, p.gamma
    omega = p.omega

    g_e = g * omega
    dp = delta - 0.5j * kappa  # delta'
    cp = dcap - 0.5j * gamma  # Delta'

    two_nu2 = 2.0 * nu * nu
    r1 = dp * (dp * dp - two_nu2) / (cp * dp * (dp * dp - two_nu2) - g2 * (dp * dp - nu * nu))
    r2_printed = (cp * dp * (dp * dp - two_nu2) - g2 * dp * dp) / (
        (g2 - dp * cp) * (dp * dp * cp - dp * g2 + 2.0 * cp * nu * nu)
    )
    r3_printed = (cp * dp * (dp * dp - two_nu2) - g2 * (dp * dp - two_nu2)) / (
        (g2 - dp * cp) * (dp * dp * cp - dp * g2 + 2.0 * cp * nu * nu)
    )
    r2_inverted = dp / (cp * dp - g2)
    r3_inverted = (dp * dp - two_nu2) / (cp * (dp * dp - two_nu2) - g2 * dp)

    a = dcap * delta * (delta * delta - two_nu2) - g2 * (delta * delta - nu * nu)
    if variant == "printed":
        b = (delta / 2.0 - nu * nu) * (dcap * kappa + gamma * delta) + delta * kappa * (dcap * delta - g2)
    else:
        b = (delta * delta / 2.0 - nu * nu) * (dcap * kappa + gamma * delta) + delta * kappa * (dcap * delta - g2)
    c1 = g2 - dcap * delta
    d1 = (dcap * kappa + delta * gamma) / 2.0
    c2 = g2 * delta - dcap * (delta * delta - two_nu2)
    d2 = kappa * (dcap * delta - g2 / 2.0) + gamma * (delta * delta - two_nu2) / 2.0

    ab2 = a * a + b * b
    cd1 = c1 * c1 + d1 * d1
    cd2 = c2 * c2 + d2 * d2
    srt2nu = math.sqrt(2.0) * nu
    ge2k = g_e * g_e * kappa

    kappa_c1_1 = (delta * delta - two_nu2) ** 2 * ge2k / 4.0 / ab2
    kappa_c2_1 = delta * delta * (delta - srt2nu) ** 2 * ge2k / 8.0 / ab2
    kappa_c3_1 = delta * delta * (delta + srt2nu) ** 2 * ge2k / 8.0 / ab2

    kappa_c1_2 = ge2k / 8.0 / cd1
    kappa_c2_2 = (delta - srt2nu) ** 2 * ge2k / 16.0 / cd2
    kappa_c3_2 = (delta + srt2nu) ** 2 * ge2k / 16.0 / cd2
    if variant == "corrected":
        kappa_c1_2 *= 2.0
        kappa_c2_2 *= 2.0
        kappa_c3_2 *= 2.0

    if variant == "corrected":
        gamma_e = gamma * omega ** 2 * abs(r2_inverted) ** 2
        r2, r3 = r2_inverted, r3_inverted
    else:
        gamma_e = gamma * omega ** 2 * nu ** 4 / (dcap * (delta * delta - nu * nu) + delta * g2) ** 2
        r2, r3 = r2_printed, r3_printed

    return AnalyticRates(
        variant=variant,
        g_e=g_e,
        delta_p=dp,
        delta_cap_p=cp,
        r1=r1,
        r2=r2,
        r3=r3,
        a_coef=a,
        b_coef=b,
        c1_coef=c1,
        d1_coef=d1,
        c2_coef=c2,
        d2_coef=d2,
        kappa_c1_1=kappa_c1_1,
        kappa_c1_2=kappa_c1_2,
        kappa_c2_1=kappa_c2_1,
        kappa_c2_2=kappa_c2_2,
        kappa_c3_1=kappa_c3_1,
        kappa_c3_2=kappa_c3_2,
        gamma_e=gamma_e,
        gamma_s_12=gamma_e / 32.0,
        gamma_s_34=gamma_e / 16.0,
        gamma_t_12=gamma_e / 32.0,
        gamma_t_34=gamma_e / 16.0,
    )


def analytic_stark_shifts(p: PhysicalParams, variant: str = DEFAULT_VARIANT) -> np.ndarray:
    """Closed-form light shifts of (|00>, |S>, |T>, |11>).

    Only the "corrected" variant carries the extra 1/2 on the |00> shift
    that the block inversion produces (V+ maps |00> to the symmetric
    excited combination with amplitude Omega/sqrt(2), not Omega); the
    other variants keep the published prefactor.
    """
    r = analytic_rates(p, variant)
    om2 = p.omega ** 2
    if variant == "corrected":
        s00 = -np.real(om2 * r.r1 / 2.0)
    else:
        s00 = -np.real(om2 * r.r1)
    s_s = -np.real(om2 * r.r2 / 4.0)
    s_t = -np.real(om2 * r.r3 / 4.0)
    return np.array([s00, s_s, s_t, 0.0])


@dataclass
class EffectiveModel:
    """Four-level generator data with channel labels."""

    h_matrix: np.ndarray
    channels: list[tuple[str, np.ndarray]]
    source: str

    def generator(self) -> LindbladGenerator:
        return LindbladGenerator(
            hamiltonian=SparseOp(self.h_matrix),
            collapse=[SparseOp(m) for _label, m in self.channels],
        )


def _numeric_model(p: PhysicalParams, include_stark: bool) -> EffectiveModel:
    space, layout = build_space_for(p, excitation_cap=1, per_mode_cap=1)
    parts = build_hamiltonian_parts(p, space, layout)
    if p.n_mediating == 1 and p.mediating_detunings[0] == 0.0:
        collapse = delocalized_collapse_ops(p, space, layout)
        labels = delocalized_labels()
    else:
        collapse = build_collapse_ops(p, space, layout)
        labels = collapse_labels(p)
    if include_stark:
        h4 = effective_hamiltonian(parts, collapse, space, layout)
    else:
        manifold = ground_manifold(space, layout)
        h4 = manifold.project(parts.h_g.matrix)
    l4 = effective_lindblads(parts, collapse, space, layout)
    return EffectiveModel(h_matrix=h4, channels=list(zip(labels, l4)), source="numeric")


def _analytic_model(p: PhysicalParams, include_stark: bool, variant: str) -> EffectiveModel:
    r = analytic_rates(p, variant)
    h4 = hg_block(p).astype(complex)
    if include_stark:
        h4 = h4 + np.diag(analytic_stark_shifts(p, variant))

    def op(entries):
        m = np.zeros((4, 4), dtype=complex)
        for (i, j), v in entries.items():
            m[i, j] = v
        return m

    # manifold index order: 00, S, T, 11
    channels = [
        ("kappa_c1", op({(1, 0): math.sqrt(r.kappa_c1_1), (3, 1): math.sqrt(r.kappa_c1_2)})),
        ("kappa_c2", op({(2, 0): math.sqrt(r.kappa_c2_1), (3, 2): math.sqrt(r.kappa_c2_2)})),
        ("kappa_c3", op({(2, 0): math.sqrt(r.kappa_c3_1), (3, 2): math.sqrt(r.kappa_c3_2)})),
        # two atomic channels per transition, merged: rates double
        ("gamma_S_to_T", op({(2, 1): math.sqrt(2.0 * r.gamma_s_12)})),
        ("gamma_T_to_S", op({(1, 2): math.sqrt(2.0 * r.gamma_t_12)})),
        ("gamma_S_to_11", op({(3, 1): math.sqrt(2.0 * r.gamma_s_34)})),
        ("gamma_T_to_11", op({(3, 2): math.sqrt(2.0 * r.gamma_t_34)})),
    ]
    return EffectiveModel(h_matrix=h4, channels=channels, source="analytic")


def build_effective_model(
    p: PhysicalParams,
    source: str = "numeric",
    include_stark: bool = True,
    variant: str = DEFAULT_VARIANT,
) -> EffectiveModel:
    """Four-level model of the ground-manifold dynamics.

    source = "numeric": channels from the block-inversion reduction
    (the reference).  source = "analytic": channels assembled from the
    closed-form rates, cheap enough for dense parameter sweeps.
    """
    if source == "numeric":
        return _numeric_model(p, include_stark)
    if source == "analytic":
        return _analytic_model(p, include_stark, variant)
    raise ValueError(f"unknown effective-model source {source!r}")


def build_effective_generator(
    p: PhysicalParams,
    source: str = "numeric",
    include_stark: bool = True,
    variant: str = DEFAULT_VARIANT,
) -> LindbladGenerator:
    return build_effective_model(p, source, include_stark, variant).generator()


def rate_deviations(p: PhysicalParams, variant: str = DEFAULT_VARIANT) -> dict:
    """Closed-form rates against the numeric reduction, with relative errors.

    The numeric values are extracted from the effective channel matrices:
    pump rates from the (S|00) and (T|00) elements of the field channels,
    second-step rates from the (11|S) and (11|T) elements, gamma_e from the
    (T|S) element of the first atomic channel scaled by its /32 splitting.
    """
    model = _numeric_model(p, include_stark=True)
    mats = {label: m for label, m in model.channels}
    num = {
        "kappa_c1_1": abs(mats["kappa_c1"][1, 0]) ** 2,
        "kappa_c1_2": abs(mats["kappa_c1"][3, 1]) ** 2,
        "kappa_c2_1": abs(mats["kappa_c2"][2, 0]) ** 2,
        "kappa_c2_2": abs(mats["kappa_c2"][3, 2]) ** 2,
        "kappa_c3_1": abs(mats["kappa_c3"][2, 0]) ** 2,
        "kappa_c3_2": abs(mats["kappa_c3"][3, 2]) ** 2,
        "gamma_e": 32.0 * abs(mats["gamma0_atom1"][2, 1]) ** 2,
    }
    r = analytic_rates(p, variant)
    ana = {
        "kappa_c1_1": r.kappa_c1_1,
        "kappa_c1_2": r.kappa_c1_2,
        "kappa_c2_1": r.kappa_c2_1,
        "kappa_c2_2": r.kappa_c2_2,
        "kappa_c3_1": r.kappa_c3_1,
        "kappa_c3_2": r.kappa_c3_2,
        "gamma_e": r.gamma_e,
    }
    out = {}
    for key in num:
        n, aa = num[key], ana[key]
        rel = abs(aa - n) / abs(n) if n != 0 else math.inf
        out[key] = {"analytic": aa, "numeric": n, "rel_dev": rel}
    return out
