"""Robust output-regulation controllers built around an internal model.

Two designs are provided.  The dual observer-based controller combines a
state-feedback gain from a shifted control Riccati equation, an output
injection computed from the filter Riccati equation of the internal
model/plant cascade, and a balanced-truncation reduction of the
stabilized observer system.  The low-gain controller only needs plant
transfer values at the regulated frequencies.  Both controllers carry a
copy of the signal dynamics (eigenvalues +-i w_k), which is what makes
the regulation robust to plant perturbations.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem, lti
from .plant import StateSpace


@dataclass(frozen=True)
class InternalModel:
    """Block-skew realization of the signal dynamics.

    ``g1`` is block diagonal with blocks [[0, w I_p], [-w I_p, 0]] and
    ``k1`` stacks [I_p, 0_p] horizontally, one pair per frequency.
    """

    g1: np.ndarray
    k1: np.ndarray
    frequencies: tuple
    p: int

    @property
    def dim(self):
        return self.g1.shape[0]


def build_internal_model(frequencies, p=1):
    """Internal model for distinct positive frequencies and output dimension p."""
    freqs = tuple(float(w) for w in frequencies)
    if p < 1:
        raise ValueError("output dimension must be at least 1")
    if any(w <= 0 for w in freqs):
        raise ValueError("frequencies must be positive")
    if len(set(freqs)) != len(freqs):
        raise ValueError("frequencies must be distinct")
    q = len(freqs)
    dim = 2 * p * q
    g1 = np.zeros((dim, dim))
    k1 = np.zeros((p, dim))
    eye = np.eye(p)
    for k, w in enumerate(freqs):
        base = 2 * p * k
        g1[base : base + p, base + p : base + 2 * p] = w * eye
        g1[base + p : base + 2 * p, base : base + p] = -w * eye
        k1[:, base : base + p] = eye
    # K1 must observe the whole internal model (distinct frequencies do).
    obs = np.vstack([k1 @ np.linalg.matrix_power(g1, j) for j in range(dim)])
    if np.linalg.matrix_rank(obs) != dim:
        raise ValueError("internal model is not observable through K1")
    return InternalModel(g1=g1, k1=k1, frequencies=freqs, p=p)


@dataclass
class ControllerRealization:
    """Finite-dimensional error-feedback controller (G1, G2, K)."""

    g1: np.ndarray  # state matrix
    g2: np.ndarray  # error input map
    k: np.ndarray   # control output map
    label: str
    params: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.g1.shape[0]

    def as_statespace(self):
        """Controller transfer function u = C(sI - G1)^-1 G2 e."""
        return StateSpace(a=self.g1, b=self.g2, c=self.k, d=np.zeros((self.k.shape[0], self.g2.shape[1])))


@dataclass
class DualObserverSynthesis:
    """Full and reduced controllers plus the synthesis diagnostics."""

    full: ControllerRealization
    reduced: ControllerRealization
    reduction: lti.BalancedReduction
    control_riccati: lti.RiccatiSolution
    filter_riccati: lti.RiccatiSolution


def _wire_dual(im, g2n, a_k, l_gain, c_k, k2, label, params):
    """Assemble the controller equations around the internal model.

    z1' = G1 z1 + G2 C_K z2 + G2 e
    z2' = (A_K + L C_K) z2 + L e
    u   = K1 z1 - K2 z2
    """
    nz = im.dim + a_k.shape[0]
    g1 = np.zeros((nz, nz))
    g1[: im.dim, : im.dim] = im.g1
    g1[: im.dim, im.dim :] = g2n @ c_k
    g1[im.dim :, im.dim :] = a_k + l_gain @ c_k
    g2 = np.vstack([g2n, l_gain])
    k = np.hstack([im.k1, -k2])
    return ControllerRealization(g1=g1, g2=g2, k=k, label=label, params=params)


def synthesize_dual_observer(design, im, alpha1=1.0, alpha2=1.0, r1=1.0, r2=1.0, r=10):
    """Dual observer-based controller from a standard-form design plant.

    The state weights of both Riccati equations are identity on the design
    space (mass-weighted coordinates).  Returns the unreduced controller of
    order ``im.dim + N``, the balanced-truncated controller of order
    ``im.dim + r``, and the reduction diagnostics.
    """
    n = design.order
    m = design.b.shape[1]
    p = design.c.shape[0]
    if m != p:
        raise ValueError("dual observer design requires as many inputs as outputs")
    if p != im.p:
        raise ValueError("internal model output dimension does not match the plant")
    r1m = np.atleast_2d(np.asarray(r1, dtype=float)) * np.eye(m)
    r2m = np.atleast_2d(np.asarray(r2, dtype=float)) * np.eye(p)
    params = {"alpha1": alpha1, "alpha2": alpha2, "r1": float(r1m[0, 0]), "r2": float(r2m[0, 0]), "r": r}

    # (i) state feedback from the shifted control Riccati equation
    ctrl_sol = lti.solve_riccati_control(design.a, design.b, r1m, np.eye(n), alpha=alpha1)
    k2 = -np.linalg.solve(r1m, design.b.T @ ctrl_sol.x)

    # (ii) internal model / plant cascade
    ns = im.dim + n
    a_s = np.zeros((ns, ns))
    a_s[: im.dim, : im.dim] = im.g1
    a_s[im.dim :, : im.dim] = design.b @ im.k1
    a_s[im.dim :, im.dim :] = design.a
    c_s = np.hstack([np.zeros((p, im.dim)), design.c])  # D = 0

    # (iii) output injection from the filter Riccati equation
    fil_sol = lti.solve_riccati_filter(a_s, c_s, r2m, np.eye(ns), alpha=alpha2)
    g2l = -fil_sol.x @ c_s.T @ np.linalg.inv(r2m)
    g2n = g2l[: im.dim]
    l_n = g2l[im.dim :]

    # (iv) balanced truncation of the stabilized observer system
    a_kn = design.a + design.b @ k2
    bt_input = StateSpace(a=a_kn, b=l_n, c=np.vstack([design.c, k2]), d=np.zeros((p + m, p)))
    reduction = lti.balanced_truncation(bt_input, r)
    c_kr = reduction.system.c[:p]
    k2r = reduction.system.c[p:]

    # (v) wire both realizations
    full = _wire_dual(im, g2n, a_kn, l_n, design.c, k2, "dual-full", params)
    reduced = _wire_dual(im, g2n, reduction.system.a, reduction.system.b, c_kr, k2r, "dual-reduced", params)
    return DualObserverSynthesis(
        full=full,
        reduced=reduced,
        reduction=reduction,
        control_riccati=ctrl_sol,
        filter_riccati=fil_sol,
    )


def synthesize_low_gain(transfer_values, frequencies, eps, p=1):
    """Low-gain robust controller from plant transfer values at +-i w_k.

    G1 is the internal model, G2 stacks [-I_p; 0_p] blocks, and
    K = eps * [Re(P(iw_k)^-1), Im(P(iw_k)^-1)]_k.
    """
    if eps <= 0:
        raise ValueError("low-gain parameter must be positive")
    im = build_internal_model(frequencies, p)
    q = len(im.frequencies)
    values = [np.atleast_2d(np.asarray(v)) for v in transfer_values]
    if len(values) != q:
        raise ValueError("need one transfer value per frequency")
    g2 = np.zeros((im.dim, p))
    k0 = np.zeros((values[0].shape[1], im.dim))
    for j, pval in enumerate(values):
        if pval.shape[0] != p:
            raise ValueError("transfer value has wrong output dimension")
        cond = np.linalg.cond(pval)
        if not np.isfinite(cond) or cond > 1e12:
            raise ValueError(
                f"plant transfer value at frequency {im.frequencies[j]} is singular "
                "(transmission zero at a regulated frequency)"
            )
        pinv = np.linalg.inv(pval)
        base = 2 * p * j
        g2[base : base + p] = -np.eye(p)
        k0[:, base : base + p] = pinv.real
        k0[:, base + p : base + 2 * p] = pinv.imag
    return ControllerRealization(
        g1=im.g1,
        g2=g2,
        k=eps * k0,
        label="low-gain",
        params={"eps": eps, "frequencies": list(im.frequencies)},
    )


def internal_model_eigenvalues_present(ctrl, frequencies, tol=1e-8):
    """Check that +-i w_k all appear in the controller state-matrix spectrum."""
    eigs = np.linalg.eigvals(ctrl.g1)
    targets = [1j * w for w in frequencies] + [-1j * w for w in frequencies]
    return all(np.min(np.abs(eigs - t)) < tol for t in targets)


# ---------------------------------------------------------------------------
# Export / import (synth-once, simulate-many)

def save_controller(ctrl, outdir):
    os.makedirs(outdir, exist_ok=True)
    fem.export_matrix_coo(sp.csr_matrix(ctrl.g1), os.path.join(outdir, "g1.coo"))
    fem.export_matrix_coo(sp.csr_matrix(ctrl.g2), os.path.join(outdir, "g2.coo"))
    fem.export_matrix_coo(sp.csr_matrix(ctrl.k), os.path.join(outdir, "k.coo"))
    meta = {
        "label": ctrl.label,
        "dim": ctrl.dim,
        "shape_g2": list(ctrl.g2.shape),
        "shape_k": list(ctrl.k.shape),
        "params": ctrl.params,
    }
    with open(os.path.join(outdir, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2)


def load_controller(outdir):
    with open(os.path.join(outdir, "meta.json")) as f:
        meta = json.load(f)
    nz = meta["dim"]
    g1 = fem.read_matrix_coo(os.path.join(outdir, "g1.coo"), shape=(nz, nz), dense=True)
    g2 = fem.read_matrix_coo(os.path.join(outdir, "g2.coo"), shape=tuple(meta["shape_g2"]), dense=True)
    k = fem.read_matrix_coo(os.path.join(outdir, "k.coo"), shape=tuple(meta["shape_k"]), dense=True)
    return ControllerRealization(g1=g1, g2=g2, k=k, label=meta["label"], params=meta.get("params", {}))
