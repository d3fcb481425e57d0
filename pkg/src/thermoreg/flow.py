"""Steady incompressible flow in the room: Stokes and Navier-Stokes.

The velocity is discretized with quadratic elements (two components per
P2 node) and the pressure with linear elements on the vertex grid
(Taylor-Hood).  Walls carry no-slip conditions, the inlet a prescribed
horizontal flux profile, and the outlet the natural stress-free
condition.  The nonlinear problem is solved by a Newton iteration with
the full convection Jacobian, started from the Stokes solution.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .errors import ConvergenceError
from .mesh import INLET, OUTLET, WALL

# The printed inlet profile is supported on 0.5 < y < 0.9 while the inlet
# spans 0.1 <= y <= 0.4; by default the profile is shifted down by 0.4 so
# that flow actually enters the room (see inlet_profile).
_PROFILE_LO = 0.5
_PROFILE_HI = 0.9
_REMAP_SHIFT = 0.4


def inlet_profile_value(y):
    """Smooth bump exp(-1e-4 / ((0.5 - y)(0.9 - y))^2) on 0.5 < y < 0.9, else 0."""
    y = np.asarray(y, dtype=float)
    inside = (y > _PROFILE_LO) & (y < _PROFILE_HI)
    out = np.zeros_like(y)
    ys = y[inside]
    denom = ((_PROFILE_LO - ys) * (_PROFILE_HI - ys)) ** 2
    out[inside] = np.exp(-1e-4 / denom)
    return out


def inlet_profile(y, remap=True):
    """Inlet velocity (vx, vy) at boundary coordinate ``y``.

    With ``remap`` (the default) the profile is evaluated at ``y + 0.4``,
    which carries its support onto the inlet segment; without it the
    literal printed formula is used, whose support misses the inlet.
    """
    y = np.asarray(y, dtype=float)
    vx = inlet_profile_value(y + _REMAP_SHIFT) if remap else inlet_profile_value(y)
    return vx, np.zeros_like(vx)


@dataclass
class FlowState:
    """Converged velocity/pressure pair on a mesh."""

    mesh: object
    velocity: np.ndarray  # (num_p2, 2)
    pressure: np.ndarray  # (num_p1,)
    residual_norm: float
    residual_history: list = field(default_factory=list)
    divergence_norm: float = 0.0
    newton_iterations: int = 0


def _dirichlet_velocity(mesh, inlet_data, remap_inlet):
    """Dirichlet node set and values: zero on walls, profile on the inlet."""
    fixed = np.flatnonzero((mesh.node_tags == WALL) | (mesh.node_tags == INLET))
    values = np.zeros((fixed.size, 2))
    inlet_sel = mesh.node_tags[fixed] == INLET
    ys = mesh.p2_nodes[fixed[inlet_sel], 1]
    if inlet_data is not None:
        vx, vy = inlet_data(ys)
    else:
        vx, vy = inlet_profile(ys, remap=remap_inlet)
    values[inlet_sel, 0] = vx
    values[inlet_sel, 1] = vy
    return fixed, values


class _SaddleProblem:
    """Assembled Taylor-Hood operators and boundary bookkeeping."""

    def __init__(self, mesh, re, inlet_data=None, remap_inlet=True):
        self.mesh = mesh
        self.re = re
        self.visc = fem.assemble_stiffness(mesh, "P2") / re
        self.dx, self.dy = fem.assemble_divergence(mesh)
        self.fixed, self.fixed_values = _dirichlet_velocity(mesh, inlet_data, remap_inlet)
        mask = np.zeros(mesh.num_p2, dtype=bool)
        mask[self.fixed] = True
        self.free = np.flatnonzero(~mask)
        self.rule = fem.triangle_rule(5)
        self.grads = fem.physical_grads(mesh, self.rule, "P2")

    def initial_state(self):
        v = np.zeros((self.mesh.num_p2, 2))
        v[self.fixed] = self.fixed_values
        return v, np.zeros(self.mesh.num_p1)

    def convection_blocks(self, v):
        """N(v) and the velocity-gradient blocks G_cd of the Newton Jacobian."""
        adv = fem.assemble_advection(self.mesh, v)
        g = {}
        for c in range(2):
            dv = np.einsum("ei,eqid->eqd", v[self.mesh.triangles, c], self.grads)
            for d in range(2):
                g[c, d] = fem.assemble_weighted_mass(self.mesh, dv[:, :, d], self.rule)
        return adv, g

    def residual(self, v, p, adv=None):
        """Momentum residual on free rows plus the divergence constraint."""
        if adv is None:
            adv = fem.assemble_advection(self.mesh, v)
        rx = self.visc @ v[:, 0] + adv @ v[:, 0] - self.dx.T @ p
        ry = self.visc @ v[:, 1] + adv @ v[:, 1] - self.dy.T @ p
        rdiv = self.dx @ v[:, 0] + self.dy @ v[:, 1]
        return np.concatenate([rx[self.free], ry[self.free], rdiv])

    def jacobian(self, adv, g):
        fr = self.free
        a = self.visc + adv
        axx = (a + g[0, 0])[fr][:, fr]
        axy = g[0, 1][fr][:, fr]
        ayx = g[1, 0][fr][:, fr]
        ayy = (a + g[1, 1])[fr][:, fr]
        dxf = self.dx[:, fr]
        dyf = self.dy[:, fr]
        return sp.bmat(
            [
                [axx, axy, -dxf.T],
                [ayx, ayy, -dyf.T],
                [dxf, dyf, None],
            ],
            format="csc",
        )

    def apply_update(self, v, p, delta):
        nf = self.free.size
        v = v.copy()
        v[self.free, 0] += delta[:nf]
        v[self.free, 1] += delta[nf : 2 * nf]
        return v, p + delta[2 * nf :]

    def divergence_norm(self, v):
        return np.linalg.norm(self.dx @ v[:, 0] + self.dy @ v[:, 1])


def solve_stokes(mesh, geometry=None, re=1.0, inlet_data=None, remap_inlet=True):
    """Steady Stokes flow as the Newton initial guess.

    The saddle-point system is solved directly; the stress-free outlet
    leaves no pressure nullspace.  ``geometry`` is accepted for interface
    symmetry but the boundary data comes from the mesh tags.
    """
    prob = _SaddleProblem(mesh, re, inlet_data, remap_inlet)
    v, p = prob.initial_state()
    zero_adv = sp.csr_matrix((mesh.num_p2, mesh.num_p2))
    zero_g = {(c, d): zero_adv for c in range(2) for d in range(2)}
    res = prob.residual(v, p, adv=zero_adv)
    jac = prob.jacobian(zero_adv, zero_g)
    try:
        delta = spla.spsolve(jac, -res)
    except RuntimeError as exc:  # singular factorization
        raise ConvergenceError(f"Stokes saddle system is singular: {exc}") from exc
    if not np.all(np.isfinite(delta)):
        raise ConvergenceError("Stokes saddle system produced non-finite values (check boundary tags)")
    v, p = prob.apply_update(v, p, delta)
    res_norm = np.linalg.norm(prob.residual(v, p, adv=zero_adv))
    return FlowState(
        mesh=mesh,
        velocity=v,
        pressure=p,
        residual_norm=res_norm,
        residual_history=[res_norm],
        divergence_norm=prob.divergence_norm(v),
    )


def solve_navier_stokes(mesh, geometry=None, re=100.0, initial=None, tol=1e-10,
                        atol=1e-12, max_iter=25, inlet_data=None, remap_inlet=True):
    """Steady Navier-Stokes via Newton iteration on the full Jacobian.

    Starts from ``initial`` (default: the Stokes solution) and stops when
    the nonlinear residual has dropped by ``tol`` relative to the first
    iterate or below the absolute floor ``atol`` (the initial guess may
    already solve the problem).  Raises :class:`ConvergenceError` carrying
    the last residual after ``max_iter`` steps.
    """
    if re <= 0:
        raise ValueError("Reynolds number must be positive")
    prob = _SaddleProblem(mesh, re, inlet_data, remap_inlet)
    if initial is None:
        initial = solve_stokes(mesh, geometry, re, inlet_data, remap_inlet)
    v = initial.velocity.copy()
    p = initial.pressure.copy()
    # Enforce the boundary data exactly on the initial iterate.
    v[prob.fixed] = prob.fixed_values

    # The achievable residual floor scales with the viscous operator.
    atol_eff = atol * max(1.0, np.abs(prob.visc.data).max() if prob.visc.nnz else 1.0)
    adv, g = prob.convection_blocks(v)
    res = prob.residual(v, p, adv=adv)
    scale = max(np.linalg.norm(res), atol_eff)
    history = [np.linalg.norm(res) / scale]
    for _ in range(max_iter):
        if history[-1] <= tol or history[-1] * scale <= atol_eff:
            break
        jac = prob.jacobian(adv, g)
        delta = spla.spsolve(jac, -res)
        if not np.all(np.isfinite(delta)):
            raise ConvergenceError("Newton step produced non-finite values", residual=history[-1])
        v, p = prob.apply_update(v, p, delta)
        adv, g = prob.convection_blocks(v)
        res = prob.residual(v, p, adv=adv)
        history.append(np.linalg.norm(res) / scale)
    else:
        raise ConvergenceError(
            f"Navier-Stokes Newton did not reach {tol:g} in {max_iter} iterations",
            residual=history[-1],
            iterations=max_iter,
        )
    return FlowState(
        mesh=mesh,
        velocity=v,
        pressure=p,
        residual_norm=history[-1],
        residual_history=history,
        divergence_norm=prob.divergence_norm(v),
        newton_iterations=len(history) - 1,
    )


def restrict_velocity(flow, target_mesh):
    """Velocity coefficients of ``flow`` on the (coarser) temperature mesh.

    Identical meshes return a copy; nested structured grids sample shared
    nodes exactly; anything else falls back to pointwise P2 evaluation.
    """
    src = flow.mesh
    if target_mesh.n == src.n:
        return flow.velocity.copy()
    if (src.n - 1) % (target_mesh.n - 1) == 0:
        ratio = (src.n - 1) // (target_mesh.n - 1)
        tgt = np.arange(target_mesh.num_p2)
        iy, ix = divmod(tgt, target_mesh.n)
        idx = ratio * iy * src.n + ratio * ix
        return flow.velocity[idx].copy()
    out = np.empty((target_mesh.num_p2, 2))
    for c in range(2):
        out[:, c] = evaluate_p2(src, flow.velocity[:, c], target_mesh.p2_nodes)
    return out


def evaluate_p2(mesh, coeffs, points):
    """Evaluate a P2 coefficient vector at arbitrary points of the unit square."""
    pts = np.asarray(points, dtype=float)
    ncell = (mesh.n - 1) // 2
    hh = 1.0 / ncell  # cell width
    cx = np.clip((pts[:, 0] // hh).astype(int), 0, ncell - 1)
    cy = np.clip((pts[:, 1] // hh).astype(int), 0, ncell - 1)
    xi = pts[:, 0] / hh - cx
    eta = pts[:, 1] / hh - cy
    lower = xi >= eta
    tri_idx = 2 * (cy * ncell + cx) + np.where(lower, 0, 1)
    bary = np.empty((pts.shape[0], 3))
    # Lower triangle (v00, v10, v11): lambda = (1 - xi, xi - eta, eta).
    bary[lower] = np.column_stack([1 - xi[lower], xi[lower] - eta[lower], eta[lower]])
    # Upper triangle (v00, v11, v01): lambda = (1 - eta, xi, eta - xi).
    up = ~lower
    bary[up] = np.column_stack([1 - eta[up], xi[up], eta[up] - xi[up]])
    basis = fem.p2_basis(bary)
    return np.einsum("pi,pi->p", basis, np.asarray(coeffs)[mesh.triangles[tri_idx]])


def boundary_flux(mesh, velocity, tag):
    """Outward flux of a P2 velocity field through the tagged boundary part."""
    sel = mesh.edge_tags == tag
    edges = mesh.boundary_edges[sel]
    t, w = fem.edge_rule(4)
    trace = np.stack([(2 * t - 1) * (t - 1), 4 * t * (1 - t), t * (2 * t - 1)], axis=1)
    pa = mesh.p2_nodes[edges[:, 0]]
    pb = mesh.p2_nodes[edges[:, 2]]
    lengths = np.linalg.norm(pb - pa, axis=1)
    mids = mesh.p2_nodes[edges[:, 1]]
    normals = np.zeros((edges.shape[0], 2))
    normals[np.isclose(mids[:, 0], 0.0), 0] = -1.0
    normals[np.isclose(mids[:, 0], 1.0), 0] = 1.0
    normals[np.isclose(mids[:, 1], 0.0), 1] = -1.0
    normals[np.isclose(mids[:, 1], 1.0), 1] = 1.0
    vn = np.einsum("end,ed->en", velocity[edges], normals)  # nodal v.n per edge
    return float(np.einsum("q,qn,en,e->", w, trace, vn, lengths))


def save_velocity(flow, path):
    """Write ``x,y,vx,vy`` per P2 node."""
    with open(path, "w") as f:
        f.write("x,y,vx,vy\n")
        for (x, y), (vx, vy) in zip(flow.mesh.p2_nodes, flow.velocity):
            f.write(f"{x:.17g},{y:.17g},{vx:.17g},{vy:.17g}\n")


def load_velocity(path, mesh):
    """Read a velocity snapshot written by :func:`save_velocity`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    if data.shape[0] != mesh.num_p2:
        raise ValueError(f"velocity file has {data.shape[0]} rows, mesh has {mesh.num_p2} nodes")
    if not np.allclose(data[:, :2], mesh.p2_nodes, atol=1e-12):
        raise ValueError("velocity file coordinates do not match the mesh")
    return data[:, 2:4].copy()
