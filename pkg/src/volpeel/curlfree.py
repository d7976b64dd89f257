"""Iterative removal of the rotational component of a designed field.

Each iteration projects the current field onto a scalar potential
(natural-BC Poisson solve), then re-solves the smoothness system with an
extra per-tet pull toward the normalized potential gradient (weight
gamma).  Only critical anchors survive into the loop's constraint set;
general anchors shape the initial field only.  The loop stops when the
volume-averaged misfit I_rot drops to the irrotationality threshold.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .diffops import NATURAL, ScalarField, VectorField, gradient, i_rot, solve_poisson
from .errors import SolverFailure, ZeroVectorAfterSolve
from .fieldopt import DEFAULT_CONFIG, _uniform_laplacian

IROT_THRESHOLD = 4e-4


@dataclass
class CurlRemovalReport:
    iterations: int
    i_rot_history: list
    converged: bool
    final_field: VectorField
    final_scalar: ScalarField
    final_i_rot: float = float("nan")  # recomputed fresh, not loop state
    threshold: float = IROT_THRESHOLD
    zero_gradient_flags: list = field(default_factory=list)  # (iteration, [tets])

    def history_dict(self):
        return [{"iteration": i + 1, "i_rot": v}
                for i, v in enumerate(self.i_rot_history)]


def remove_curl(mesh, field_in, anchors, cfg=DEFAULT_CONFIG,
                threshold=IROT_THRESHOLD, max_iters=100, on_iteration=None,
                general_weight=None):
    """Drive I_rot of a normalized field below `threshold`.

    Returns a CurlRemovalReport; history holds one I_rot value per
    completed iteration, and the final value (plus the final potential)
    is recomputed fresh after the loop rather than read from loop state.
    Non-convergence is reported (converged=False), never raised.

    By default only critical anchors constrain the loop; the rest of
    the field relaxes freely toward integrability.  On geometry whose
    large-scale structure lives in the general anchors (conformal wall
    seeding, say), free relaxation can sag the flow into fresh pockets;
    passing ``general_weight`` keeps the general anchors in the system
    at that weight, trading some I_rot reduction speed for shape
    retention.

    The system matrix is constant across iterations unless a tet's
    potential gradient vanishes (its gamma-pull is dropped for that
    iteration), so the factorization is reused whenever possible.
    """
    v = np.array(field_in.vectors, dtype=np.float64)
    eff = anchors.effective() if anchors is not None else {}
    crit = {t: a for t, a in eff.items() if a.critical}
    crit_tets = np.fromiter(sorted(crit), dtype=np.int64, count=len(crit))

    nt = mesh.n_tets
    b2 = np.zeros(nt)
    anchor_rhs = np.zeros((nt, 3))
    bc2 = cfg.beta_critical ** 2
    if general_weight is not None:
        bg2 = float(general_weight) ** 2
        for t, a in eff.items():
            if not a.critical:
                b2[t] = bg2
                anchor_rhs[t] = bg2 * a.direction
    for t in crit_tets:
        b2[t] = bc2
        anchor_rhs[t] = bc2 * crit[t].direction
    ltl = (cfg.alpha ** 2) * _uniform_laplacian(mesh)

    factor_cache = {}

    def factorization(zero_grad_key):
        if zero_grad_key not in factor_cache:
            pull = np.full(nt, cfg.gamma ** 2)
            if len(zero_grad_key):
                pull[np.array(zero_grad_key, dtype=np.int64)] = 0.0
            if len(crit_tets):
                pull[crit_tets] = 0.0  # anchors own these tets; no double pull
            A = ltl + sp.diags(b2 + pull)
            try:
                factor_cache[zero_grad_key] = (splu(A.tocsc()), pull)
            except RuntimeError as exc:
                raise SolverFailure(f"curl-removal solve failed: {exc}")
        return factor_cache[zero_grad_key]

    history = []
    flags = []
    for it in range(1, max_iters + 1):
        phi = solve_poisson(mesh, VectorField(v), NATURAL)
        grads = gradient(mesh, phi).vectors
        gn = np.linalg.norm(grads, axis=1)
        zero_grad = np.nonzero(gn < 1e-12)[0]
        if len(zero_grad):
            flags.append((it, [int(t) for t in zero_grad]))
        lu, pull = factorization(tuple(int(t) for t in zero_grad))
        targets = np.zeros((nt, 3))
        ok = gn >= 1e-12
        targets[ok] = grads[ok] / gn[ok, None]
        rhs = anchor_rhs + pull[:, None] * targets
        raw = np.column_stack([lu.solve(rhs[:, k]) for k in range(3)])
        if not np.all(np.isfinite(raw)):
            raise SolverFailure("curl-removal solve produced non-finite values")
        norms = np.linalg.norm(raw, axis=1)
        bad = norms < 1e-12
        if np.any(bad):
            raise ZeroVectorAfterSolve(np.nonzero(bad)[0])
        v = raw / norms[:, None]
        val = i_rot(mesh, VectorField(v, normalized=True))
        history.append(val)
        if on_iteration is not None:
            on_iteration(it, val)
        if val <= threshold:
            break

    final = VectorField(v, normalized=True)
    final_val = i_rot(mesh, final)  # independent recompute, not loop state
    converged = final_val <= threshold
    if not converged:
        warnings.warn(f"curl removal did not converge: I_rot={final_val:.3e} "
                      f"after {len(history)} iterations (threshold {threshold:g})")
    return CurlRemovalReport(
        iterations=len(history),
        i_rot_history=history,
        converged=converged,
        final_field=final,
        final_scalar=solve_poisson(mesh, final, NATURAL),
        final_i_rot=final_val,
        threshold=threshold,
        zero_gradient_flags=flags,
    )
