"""Exception types raised across the volpeel pipeline."""


class PeelError(Exception):
    """Base class for all volpeel errors."""


class ParseError(PeelError):
    """A mesh or config file could not be parsed."""


class DegenerateTet(PeelError):
    """A tetrahedron's volume is below the degeneracy threshold."""


class NonManifoldFace(PeelError):
    """A triangular face is shared by more than two tetrahedra."""


class SingularTet(PeelError):
    """A tet's edge matrix is numerically singular."""


class SolverFailure(PeelError):
    """Sparse factorization or solve failed."""


class IncompatibleBC(PeelError):
    """A Dirichlet boundary tag matches no boundary faces."""


class EmptyAnchorSet(PeelError):
    """Field interpolation was requested with no anchors."""


class ZeroVectorAfterSolve(PeelError):
    """Some tets came out of the field solve with a (near-)zero vector.

    Carries the offending tet indices in ``tets``.
    """

    def __init__(self, tets):
        self.tets = list(tets)
        super().__init__(f"zero vector after solve in tets {self.tets[:8]}"
                         + ("..." if len(self.tets) > 8 else ""))


class NonConvergence(PeelError):
    """Curl removal hit its iteration cap above threshold.

    remove_curl never raises this; it returns a report with
    converged=False.  Callers that cannot proceed raise it themselves.
    """


class ZeroGradientTet(PeelError):
    """A tet's scalar-field gradient vanished where a direction was needed."""


class NoPartFaces(PeelError):
    """The mesh has no PART-tagged boundary faces."""


class NonManifoldSource(PeelError):
    """A source surface has an edge shared by more than two triangles."""


class UnorientedSource(PeelError):
    """A source surface's triangles are not consistently oriented."""


class InadmissibleBoundary(PeelError):
    """Local correction was asked to process a non-admissible component."""


class RingTouchesDomainBoundary(PeelError):
    """No ring depth small enough for a local correction could be found."""


class UnresolvedSingularities(PeelError):
    """Directives were exhausted with non-admissible components remaining."""


class IsoValueOutOfRange(PeelError):
    """Requested iso-value lies outside the scalar field's range."""


class ConstantField(PeelError):
    """Layer generation was requested on a constant scalar field."""


class EmptyMesh(PeelError):
    """An operation received an empty mesh."""


class DegenerateInput(PeelError):
    """Convex hull input is degenerate (coplanar or too few points)."""


class SessionNotFound(PeelError):
    """Unknown session id."""


class JobAlreadyRunning(PeelError):
    """A solve was started while another one is running."""


class StaleRevision(PeelError):
    """A solve referenced an anchor revision that is no longer current."""
