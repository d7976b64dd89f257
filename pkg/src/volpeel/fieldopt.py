"""Anchor-constrained smooth vector field construction.

The field is one constant vector per tet.  Anchors prescribe directions
in individual tets (a vertex placement fans out to all incident tets);
the remaining tets are filled in by minimizing

    || alpha L_u V ||^2  +  sum_i || beta_i (v_i - a_i) ||^2

per component, where L_u is the uniform (neighbor-average) tet-adjacency
Laplacian.  Components are solved independently and the result is
normalized per tet afterwards.
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .diffops import VectorField
from .errors import EmptyAnchorSet, NoPartFaces, SolverFailure, ZeroVectorAfterSolve


class FieldOptConfig:
    """Solver weights.  Defaults follow the standard recipe:
    alpha=1, beta_general=1e5, beta_critical=1e8, gamma=1e5."""

    def __init__(self, alpha=1.0, beta_general=1e5, beta_critical=1e8,
                 gamma=1e5):
        if min(alpha, beta_general, beta_critical, gamma) <= 0:
            raise ValueError("all weights must be positive")
        if not (beta_critical >= beta_general >= alpha):
            raise ValueError("expected beta_critical >= beta_general >= alpha")
        self.alpha = float(alpha)
        self.beta_general = float(beta_general)
        self.beta_critical = float(beta_critical)
        self.gamma = float(gamma)

    def __repr__(self):
        return (f"FieldOptConfig(alpha={self.alpha}, beta_general="
                f"{self.beta_general}, beta_critical={self.beta_critical}, "
                f"gamma={self.gamma})")

    def to_dict(self):
        return {"alpha": self.alpha, "beta_general": self.beta_general,
                "beta_critical": self.beta_critical, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d):
        return cls(**d) if d else cls()


DEFAULT_CONFIG = FieldOptConfig()


class Anchor:
    """A prescribed unit direction in one tet."""

    __slots__ = ("tet", "direction", "weight", "critical")

    def __init__(self, tet, direction, weight, critical=False):
        d = np.asarray(direction, dtype=np.float64).ravel()
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise ValueError("anchor direction must be nonzero")
        if weight <= 0:
            raise ValueError("anchor weight must be positive")
        self.tet = int(tet)
        self.direction = d / n
        self.weight = float(weight)
        self.critical = bool(critical)

    def __repr__(self):
        flag = ", critical" if self.critical else ""
        return (f"Anchor(tet={self.tet}, dir={np.round(self.direction, 4)}, "
                f"w={self.weight:g}{flag})")


class AnchorSet:
    """Insertion-ordered anchor collection with stable integer ids.

    Multiple anchors may target the same tet; the effective constraint
    is the latest insertion (interactive-edit semantics).
    """

    def __init__(self):
        self._entries = {}
        self._next_id = 0

    def add(self, anchor):
        aid = self._next_id
        self._next_id += 1
        self._entries[aid] = anchor
        return aid

    def add_tet(self, tet, direction, weight=None, critical=False):
        if weight is None:
            weight = DEFAULT_CONFIG.beta_critical if critical \
                else DEFAULT_CONFIG.beta_general
        return self.add(Anchor(tet, direction, weight, critical))

    def add_vertex(self, mesh, vertex, direction, weight=None, critical=False):
        """Fan a vertex placement out to every incident tet."""
        return [self.add_tet(t, direction, weight, critical)
                for t in mesh.tets_of_vertex(int(vertex))]

    def remove(self, aid):
        if aid not in self._entries:
            raise KeyError(aid)
        del self._entries[aid]

    def effective(self):
        """tet -> Anchor after later-insertion-wins collapse."""
        out = {}
        for aid in sorted(self._entries):
            a = self._entries[aid]
            out[a.tet] = a
        return out

    def copy(self):
        out = AnchorSet()
        out._entries = dict(self._entries)
        out._next_id = self._next_id
        return out

    def items(self):
        return sorted(self._entries.items())

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(a for _, a in self.items())

    # line format: "tet <i> dx dy dz weight [critical]" or "vertex <i> ..."
    def to_lines(self):
        lines = []
        for _, a in self.items():
            dx, dy, dz = a.direction.tolist()
            tail = " critical" if a.critical else ""
            lines.append(f"tet {a.tet} {dx!r} {dy!r} {dz!r} {a.weight!r}{tail}")
        return lines

    def save(self, path):
        with open(path, "w") as fh:
            fh.write("\n".join(self.to_lines()) + "\n")

    @classmethod
    def from_lines(cls, lines, mesh=None):
        from .errors import ParseError

        out = cls()
        for lineno, line in enumerate(lines, 1):
            line = line.split("#")[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (6, 7) or parts[0] not in ("tet", "vertex"):
                raise ParseError(f"anchor line {lineno}: expected "
                                 "'tet|vertex id dx dy dz weight [critical]'")
            kind, idx = parts[0], int(parts[1])
            direction = [float(parts[2]), float(parts[3]), float(parts[4])]
            weight = float(parts[5])
            critical = len(parts) == 7 and parts[6] == "critical"
            if kind == "tet":
                out.add_tet(idx, direction, weight, critical)
            else:
                if mesh is None:
                    raise ParseError(f"anchor line {lineno}: vertex anchors "
                                     "need a mesh to expand against")
                out.add_vertex(mesh, idx, direction, weight, critical)
        return out

    @classmethod
    def load(cls, path, mesh=None):
        with open(path) as fh:
            return cls.from_lines(fh, mesh)


# -- solver ---------------------------------------------------------------

def _uniform_laplacian(mesh):
    """Tet-adjacency neighbor-average Laplacian L_u (cached on the mesh)."""
    if not hasattr(mesh, "_fieldopt_cache"):
        mesh._fieldopt_cache = {}
    cache = mesh._fieldopt_cache
    if "LTL" not in cache:
        nt = mesh.n_tets
        nbr = mesh.neighbors
        deg = (nbr >= 0).sum(axis=1)
        rows = [np.arange(nt)]
        cols = [np.arange(nt)]
        vals = [np.where(deg > 0, 1.0, 0.0)]
        t_idx, f_idx = np.nonzero(nbr >= 0)
        rows.append(t_idx)
        cols.append(nbr[t_idx, f_idx])
        vals.append(-1.0 / deg[t_idx])
        L = sp.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(nt, nt)).tocsr()
        cache["L"] = L
        cache["LTL"] = (L.T @ L).tocsr()
    return cache["LTL"]


def solve_linear(mesh, anchors, cfg=DEFAULT_CONFIG, extra_diag=None,
                 extra_rhs=None):
    """Pre-normalization minimizer of the anchored smoothness quadratic.

    Solves (alpha^2 L_u^T L_u + B + extra_diag) v = B a + extra_rhs per
    component, B = diag(beta_i^2) on anchored tets.  The extra terms are
    the hook used by the curl-removal loop's gradient-alignment pull.
    """
    eff = anchors.effective() if hasattr(anchors, "effective") else dict(anchors)
    if not eff and extra_diag is None:
        raise EmptyAnchorSet("no anchors; the zero field would be the minimizer")
    nt = mesh.n_tets
    b2 = np.zeros(nt)
    rhs = np.zeros((nt, 3))
    for t, a in eff.items():
        b2[t] = a.weight ** 2
        rhs[t] = a.weight ** 2 * a.direction
    if extra_diag is not None:
        b2 = b2 + extra_diag
        rhs = rhs + extra_rhs
    A = (cfg.alpha ** 2) * _uniform_laplacian(mesh) + sp.diags(b2)
    try:
        lu = splu(A.tocsc())
        out = np.column_stack([lu.solve(rhs[:, k]) for k in range(3)])
    except RuntimeError as exc:
        raise SolverFailure(f"field solve failed: {exc}")
    if not np.all(np.isfinite(out)):
        raise SolverFailure("field solve produced non-finite values")
    return out


def interpolate_field(mesh, anchors, cfg=DEFAULT_CONFIG):
    """Smooth unit field honoring the anchors.

    Raises ZeroVectorAfterSolve when a tet's pre-normalization vector is
    numerically zero (symmetric constraint cancellation); such tets are
    a singularity-module concern, not silently patched here.
    """
    raw = solve_linear(mesh, anchors, cfg)
    norms = np.linalg.norm(raw, axis=1)
    bad = norms < 1e-12
    if np.any(bad):
        raise ZeroVectorAfterSolve(np.nonzero(bad)[0])
    return VectorField(raw / norms[:, None], normalized=True)


def anchor_residual(field, anchors):
    """Max distance between the field and any effective anchor direction."""
    eff = anchors.effective() if hasattr(anchors, "effective") else dict(anchors)
    if not eff:
        return 0.0
    worst = 0.0
    for t, a in eff.items():
        worst = max(worst, float(np.linalg.norm(field.vectors[t] - a.direction)))
    return worst


def blend_with_normals(field, mesh, alpha_blend, ring_depth=2):
    """Pull the field toward PART-face normals near the part surface.

    Affected tets are those within `ring_depth` face-adjacency hops of a
    PART-tagged boundary face; each is blended with the (into-domain)
    normal inherited from its nearest part faces:
    v <- normalize(alpha_blend * v + (1 - alpha_blend) * n).
    alpha_blend=1 is the identity; 0 snaps to the normals.
    """
    from .tetmesh import BoundaryTag

    if not (0.0 <= alpha_blend <= 1.0):
        raise ValueError("alpha_blend must be in [0, 1]")
    part = mesh.faces_with_tag(BoundaryTag.PART)
    if not len(part):
        raise NoPartFaces("blend requested but mesh has no PART faces")
    t = mesh.boundary_faces[part, 0]
    lf = mesh.boundary_faces[part, 1]
    s = mesh.face_vectors[t, lf]
    n_hat = s / np.linalg.norm(s, axis=1, keepdims=True)  # into the domain

    acc = np.zeros((mesh.n_tets, 3))
    depth = np.full(mesh.n_tets, -1, dtype=np.int64)
    np.add.at(acc, t, n_hat)
    frontier = np.unique(t)
    depth[frontier] = 1
    for d in range(2, ring_depth + 1):
        nxt = mesh.neighbors[frontier].ravel()
        nxt = nxt[nxt >= 0]
        fresh = nxt[depth[nxt] < 0]
        if not len(fresh):
            break
        # inherit the accumulated normal of the BFS parents
        for f in frontier:
            for nb in mesh.neighbors[f]:
                if nb >= 0 and depth[nb] < 0:
                    acc[nb] += acc[f]
        fresh = np.unique(fresh)
        depth[fresh] = d
        frontier = fresh

    affected = np.nonzero(depth > 0)[0]
    norms = np.linalg.norm(acc[affected], axis=1)
    ok = norms > 1e-12
    affected = affected[ok]
    normals = acc[affected] / norms[ok, None]
    out = field.vectors.copy()
    blended = alpha_blend * out[affected] + (1.0 - alpha_blend) * normals
    bn = np.linalg.norm(blended, axis=1)
    keep = bn > 1e-12
    out[affected[keep]] = blended[keep] / bn[keep, None]
    return VectorField(out, normalized=True)
