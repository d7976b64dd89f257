"""Discrete differential operators on tet meshes.

Conventions (fixed throughout the package):

* ``gradient`` is exact on linear fields: (grad g)_t = sum_k g_k s_k / (3 V_t)
  with s_k the inward face area vector, which is the edge-matrix-inverse
  form written out.
* ``integrated_divergence`` is its volume-weighted adjoint,
  D_i(v) = sum_t (s_i/3) . v_t, so that  g . D(v) = sum_t V_t (grad g)_t . v_t
  holds in exact arithmetic.
* ``cotan_laplacian`` is the P1 stiffness matrix (identical to the
  cotangent-weight formula), hence L_c g = D(grad g) and the Poisson solve
  below is the L2 projection onto gradient fields.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import kernels
from .errors import IncompatibleBC, SingularTet, SolverFailure
from .tetmesh import FACE_LOCAL, BoundaryTag


@dataclass
class ScalarField:
    """Per-vertex scalar values."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(self.values)):
            raise ValueError("scalar field contains non-finite values")

    def __len__(self):
        return len(self.values)


@dataclass
class VectorField:
    """Per-tet constant vectors; `normalized` asserts unit length."""

    vectors: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[1] != 3:
            raise ValueError("vector field must be (n_tets, 3)")
        if self.normalized:
            n = np.linalg.norm(self.vectors, axis=1)
            if np.any(np.abs(n - 1.0) > 1e-9):
                raise ValueError("field flagged normalized but has non-unit vectors")

    def magnitudes(self):
        return np.linalg.norm(self.vectors, axis=1)

    def normalize(self):
        n = self.magnitudes()
        bad = n < 1e-12
        if np.any(bad):
            from .errors import ZeroVectorAfterSolve
            raise ZeroVectorAfterSolve(np.nonzero(bad)[0])
        return VectorField(self.vectors / n[:, None], normalized=True)

    def __len__(self):
        return len(self.vectors)


@dataclass
class SparseOperator:
    """Triplet-backed sparse matrix with a cached CSR view."""

    shape: tuple
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    _csr: object = field(default=None, repr=False, compare=False)

    def tocsr(self):
        if self._csr is None:
            m = sp.coo_matrix((self.vals, (self.rows, self.cols)),
                              shape=self.shape)
            self._csr = m.tocsr()
            self._csr.sum_duplicates()
        return self._csr

    def toarray(self):
        return self.tocsr().toarray()

    def __matmul__(self, other):
        return self.tocsr() @ other


@dataclass(frozen=True)
class BoundaryCondition:
    kind: str = "NATURAL"            # NATURAL | DIRICHLET
    tag: int = int(BoundaryTag.PART)
    value: float = 0.0


NATURAL = BoundaryCondition("NATURAL")


def dirichlet(tag=BoundaryTag.PART, value=0.0):
    return BoundaryCondition("DIRICHLET", int(tag), float(value))


# -- operators ------------------------------------------------------------

def gradient(mesh, g):
    """Per-tet constant gradient of a scalar field."""
    if isinstance(g, ScalarField):
        g = g.values
    if np.any(6.0 * mesh.volumes < 1e-12):
        t = int(np.argmin(mesh.volumes))
        raise SingularTet(f"tet {t} edge matrix is numerically singular")
    v = np.einsum("tk,tkc->tc", g[mesh.tets], mesh.face_vectors)
    v /= (3.0 * mesh.volumes)[:, None]
    return VectorField(v)


def integrated_divergence(mesh, v):
    """Adjoint divergence D_i = (1/3) sum_{t ∋ i} s_{i,t} . v_t.

    Interior rows of D vanish for constant fields; the full sum over all
    vertices vanishes for any field (the four face vectors of each tet
    sum to zero), so boundary flux shows up in boundary rows only.
    """
    if isinstance(v, VectorField):
        v = v.vectors
    return kernels.divergence(mesh.tets, mesh.face_vectors, v, mesh.n_vertices)


def cotan_laplacian(mesh):
    """Cotangent (P1 stiffness) Laplacian as a SparseOperator.

    Symmetric, zero row sums, positive semi-definite for well-shaped
    meshes.  Negative cotan weights (positive off-diagonals) are kept
    but flagged with a warning once per mesh.
    """
    rows, cols, vals = kernels.stiffness_triplets(mesh.tets, mesh.face_vectors,
                                                  mesh.volumes)
    op = SparseOperator((mesh.n_vertices, mesh.n_vertices), rows, cols, vals)
    cache = _cache(mesh)
    if "neg_warned" not in cache:
        cache["neg_warned"] = True
        csr = op.tocsr()
        off = csr - sp.diags(csr.diagonal())
        if off.nnz and off.data.max() > 1e-14:
            warnings.warn("mesh has negative cotangent weights (poorly "
                          "shaped tets); solution quality may degrade")
    return op


def mass_matrix(mesh):
    """Lumped (diagonal) mass matrix; diagonal sums to the domain volume."""
    quarter = np.repeat(mesh.volumes / 4.0, 4)
    diag = np.bincount(mesh.tets.ravel(), weights=quarter,
                       minlength=mesh.n_vertices)
    idx = np.arange(mesh.n_vertices)
    return SparseOperator((mesh.n_vertices, mesh.n_vertices), idx, idx, diag)


def _cache(mesh):
    if not hasattr(mesh, "_diffops_cache"):
        mesh._diffops_cache = {}
    return mesh._diffops_cache


def _laplacian_csr(mesh):
    cache = _cache(mesh)
    if "L" not in cache:
        cache["L"] = cotan_laplacian(mesh).tocsr()
    return cache["L"]


def _poisson_factorization(mesh, bc):
    """(LU, free_index_array, pinned_index_array) for the reduced system."""
    cache = _cache(mesh)
    key = ("poisson", bc.kind, bc.tag if bc.kind == "DIRICHLET" else None)
    if key in cache:
        return cache[key]
    K = _laplacian_csr(mesh)
    n = mesh.n_vertices
    if bc.kind == "NATURAL":
        pinned = np.array([0], dtype=np.int64)
    elif bc.kind == "DIRICHLET":
        faces = mesh.faces_with_tag(bc.tag)
        if not len(faces):
            raise IncompatibleBC(f"no boundary faces tagged {BoundaryTag(bc.tag).name}")
        pinned = np.unique(mesh.boundary_face_vertices(faces))
    else:
        raise ValueError(f"unknown boundary condition kind {bc.kind!r}")
    free = np.setdiff1d(np.arange(n), pinned, assume_unique=False)
    try:
        lu = splu(K[free][:, free].tocsc())
    except RuntimeError as exc:
        raise SolverFailure(f"Poisson factorization failed: {exc}")
    coupling = K[free][:, pinned]
    cache[key] = (lu, free, pinned, coupling)
    return cache[key]


def solve_poisson(mesh, v, bc=NATURAL):
    """Scalar field g minimizing the L2 misfit between grad g and v.

    NATURAL fixes the gauge (pin one vertex, subtract the mean after);
    DIRICHLET pins every vertex of the tagged boundary faces to
    ``bc.value``.
    """
    lu, free, pinned, coupling = _poisson_factorization(mesh, bc)
    D = integrated_divergence(mesh, v)
    rhs = D[free]
    if bc.kind == "DIRICHLET" and bc.value != 0.0:
        rhs = rhs - coupling @ np.full(len(pinned), bc.value)
    try:
        x = lu.solve(rhs)
    except RuntimeError as exc:
        raise SolverFailure(f"Poisson solve failed: {exc}")
    if not np.all(np.isfinite(x)):
        raise SolverFailure("Poisson solve produced non-finite values")
    g = np.empty(mesh.n_vertices)
    g[free] = x
    g[pinned] = 0.0 if bc.kind == "NATURAL" else bc.value
    if bc.kind == "NATURAL":
        g -= g.mean()
    return ScalarField(g)


def i_rot(mesh, v):
    """Irrotationality metric: volume-averaged misfit to the nearest gradient.

    Computed through the natural-BC Poisson projection; < ~4e-4 is the
    regime treated as irrotational downstream.
    """
    if not isinstance(v, VectorField):
        v = VectorField(v)
    g = solve_poisson(mesh, v, NATURAL)
    r = v.vectors - gradient(mesh, g).vectors
    return float((mesh.volumes * np.einsum("ij,ij->i", r, r)).sum()
                 / mesh.total_volume)
