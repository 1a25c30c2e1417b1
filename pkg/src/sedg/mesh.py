"""Conforming multipatch rectangular meshes.

Patches are axis-aligned boxes carrying per-direction polynomial degrees.
The facet lattice (vertices, edges, ..., patches) is built by exact
coordinate matching: patch corners must coincide bitwise, which holds for
meshes specified on integer or rational lattices.
"""

from dataclasses import dataclass, field

import numpy as np

from .lgl import Interval

__all__ = [
    "Patch",
    "Facet",
    "Mesh",
    "MeshConformityError",
    "GradingError",
    "DegreeAssumptionError",
    "build_mesh",
]


class MeshConformityError(ValueError):
    pass


class GradingError(ValueError):
    pass


class DegreeAssumptionError(ValueError):
    """Raised when no componentwise-minimal degree vector exists on a facet."""


@dataclass(frozen=True)
class Patch:
    """Axis-aligned box with per-direction polynomial degrees."""

    id: int
    box: tuple
    degrees: tuple

    def __post_init__(self):
        if len(self.box) != len(self.degrees):
            raise ValueError("box and degree dimensions differ")
        if any(p < 1 for p in self.degrees):
            raise ValueError(f"degrees must be positive, got {self.degrees}")

    @property
    def dim(self):
        return len(self.box)

    @property
    def sizes(self):
        return tuple(iv.length for iv in self.box)


def _facet_keys(box):
    """All facet keys of a box: per direction ('pt', a) | ('pt', b) | ('iv', a, b)."""
    options = [
        (("pt", iv.a), ("pt", iv.b), ("iv", iv.a, iv.b)) for iv in box
    ]
    keys = [()]
    for opts in options:
        keys = [k + (o,) for k in keys for o in opts]
    return keys


def _key_dim(key):
    return sum(1 for c in key if c[0] == "iv")


def _key_contains(outer, inner):
    """Exact geometric containment of facet keys (inner subset of outer)."""
    for o, i in zip(outer, inner):
        if o[0] == "pt":
            if i != o:
                return False
        else:
            _, a, b = o
            if i[0] == "pt":
                if not a <= i[1] <= b:
                    return False
            else:
                if not (a <= i[1] and i[2] <= b):
                    return False
    return True


@dataclass
class Facet:
    """l-dimensional facet of the patch complex."""

    id: int
    key: tuple
    patch_ids: tuple
    on_boundary: bool = False

    @property
    def dim(self):
        return _key_dim(self.key)

    @property
    def free_dirs(self):
        return tuple(k for k, c in enumerate(self.key) if c[0] == "iv")

    @property
    def frozen_dirs(self):
        return tuple(k for k, c in enumerate(self.key) if c[0] == "pt")

    @property
    def normal_dir(self):
        """Frozen direction of a (d-1)-face."""
        frozen = self.frozen_dirs
        if len(frozen) != 1:
            raise ValueError("normal direction only defined for faces")
        return frozen[0]

    def span(self, k):
        """Interval of the facet in a free direction k."""
        c = self.key[k]
        if c[0] != "iv":
            raise ValueError(f"direction {k} is frozen on this facet")
        return Interval(c[1], c[2])

    def point(self):
        """Coordinates of a vertex facet."""
        if self.dim != 0:
            raise ValueError("point() only defined for vertices")
        return tuple(c[1] for c in self.key)


@dataclass
class Mesh:
    patches: list
    facets: list
    facets_by_dim: dict = field(default_factory=dict)
    _facet_by_key: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.patches[0].dim

    def facet(self, key):
        return self._facet_by_key[key]

    def faces(self):
        return self.facets_by_dim[self.dim - 1]

    def interior_faces(self):
        return [f for f in self.faces() if not f.on_boundary]

    def boundary_faces(self):
        return [f for f in self.faces() if f.on_boundary]

    def patch_facets(self, pid, l):
        return [f for f in self.facets_by_dim[l] if pid in f.patch_ids]

    def sub_facets(self, facet, m):
        """F_m(facet) for m <= facet.dim: facets of dimension m inside it."""
        return [
            g
            for g in self.facets_by_dim[m]
            if _key_contains(facet.key, g.key)
        ]

    def face_weight(self, face):
        """Interior-penalty weight: max over sides of (p_k+1)^2 / H_k, k normal."""
        k = face.normal_dir
        vals = [
            (self.patches[pid].degrees[k] + 1) ** 2 / self.patches[pid].sizes[k]
            for pid in face.patch_ids
        ]
        return max(vals)

    def reduced_degrees(self, facet, pid):
        """Degree vector of patch pid restricted to the facet's free directions."""
        p = self.patches[pid].degrees
        return tuple(p[k] for k in facet.free_dirs)

    def sharp_elements(self):
        """Minimal-degree patch selection per facet.

        For facets of dimension >= 1 the incident patch with componentwise
        minimal restricted degree vector is chosen (lowest id on ties); a
        missing minimum raises DegreeAssumptionError. Vertices get the
        incident patch minimizing (max degree, degree sum, id).
        """
        out = {}
        for l in range(self.dim + 1):
            for f in self.facets_by_dim[l]:
                if l == 0:
                    pid = min(
                        f.patch_ids,
                        key=lambda q: (
                            max(self.patches[q].degrees),
                            sum(self.patches[q].degrees),
                            q,
                        ),
                    )
                    out[f.id] = (pid, ())
                    continue
                vecs = {q: self.reduced_degrees(f, q) for q in f.patch_ids}
                best = None
                for q in sorted(f.patch_ids):
                    v = vecs[q]
                    if all(
                        all(vi <= wi for vi, wi in zip(v, w))
                        for w in vecs.values()
                    ):
                        best = q
                        break
                if best is None:
                    raise DegreeAssumptionError(
                        f"no componentwise-minimal degree vector on facet {f.key}"
                    )
                out[f.id] = (best, vecs[best])
        return out

    def validate_grading(self, aspect_bound=2.0, degree_bound=2.0):
        """Check patch aspect/degree ratios and cross-face degree ratios.

        Returns the observed maxima; raises GradingError naming the offender
        when a configured bound is exceeded.
        """
        max_aspect = 1.0
        max_internal = 1.0
        max_cross = 1.0
        for patch in self.patches:
            sizes = patch.sizes
            aspect = max(sizes) / min(sizes)
            if aspect > aspect_bound:
                raise GradingError(
                    f"patch {patch.id} aspect ratio {aspect:g} exceeds {aspect_bound:g}"
                )
            max_aspect = max(max_aspect, aspect)
            ratio = max(patch.degrees) / min(patch.degrees)
            if ratio > degree_bound:
                raise GradingError(
                    f"patch {patch.id} degree ratio {ratio:g} exceeds {degree_bound:g}"
                )
            max_internal = max(max_internal, ratio)
        for face in self.interior_faces():
            pm, pp = (self.patches[q].degrees for q in face.patch_ids)
            ratio = max(
                max(a / b, b / a) for a, b in zip(pm, pp)
            )
            if ratio > degree_bound:
                raise GradingError(
                    f"face {face.key}: degree ratio {ratio:g} exceeds {degree_bound:g}"
                )
            max_cross = max(max_cross, ratio)
        return {
            "max_aspect": max_aspect,
            "max_patch_degree_ratio": max_internal,
            "max_cross_face_degree_ratio": max_cross,
        }


def _check_pair_conformity(p1, p2):
    """Nonempty intersections must be common facets; overlaps are errors."""
    inter = []
    for i1, i2 in zip(p1.box, p2.box):
        lo, hi = max(i1.a, i2.a), min(i1.b, i2.b)
        if lo > hi:
            return
        inter.append((lo, hi))
    if all(lo < hi for lo, hi in inter):
        raise MeshConformityError(
            f"patches {p1.id} and {p2.id} overlap with positive volume"
        )
    key = tuple(
        ("pt", lo) if lo == hi else ("iv", lo, hi) for lo, hi in inter
    )
    for p in (p1, p2):
        if key not in _facet_keys(p.box):
            raise MeshConformityError(
                f"patches {p1.id} and {p2.id} intersect in {key}, "
                f"not a common facet of patch {p.id}"
            )


def build_mesh(boxes, degrees):
    """Build a conforming mesh from boxes [((a1,b1),...,(ad,bd)), ...] and
    per-patch degree tuples. Raises MeshConformityError on overlap or
    non-conforming intersection.
    """
    if len(boxes) != len(degrees):
        raise ValueError("one degree tuple per box required")
    patches = []
    for pid, (box, degs) in enumerate(zip(boxes, degrees)):
        iv = tuple(Interval(float(a), float(b)) for a, b in box)
        degs = tuple(int(p) for p in (degs if np.iterable(degs) else (degs,)))
        patches.append(Patch(pid, iv, degs))
    d = patches[0].dim
    if any(p.dim != d for p in patches):
        raise ValueError("all patches must share the same dimension")

    for i, p1 in enumerate(patches):
        for p2 in patches[i + 1 :]:
            _check_pair_conformity(p1, p2)

    incidence = {}
    for patch in patches:
        for key in _facet_keys(patch.box):
            incidence.setdefault(key, []).append(patch.id)

    facets = []
    facets_by_dim = {l: [] for l in range(d + 1)}
    by_key = {}
    for key in sorted(incidence, key=lambda k: (_key_dim(k), k)):
        f = Facet(len(facets), key, tuple(sorted(incidence[key])))
        facets.append(f)
        facets_by_dim[f.dim].append(f)
        by_key[key] = f

    for f in facets_by_dim[d - 1]:
        f.on_boundary = len(f.patch_ids) == 1
    boundary_faces = [f for f in facets_by_dim[d - 1] if f.on_boundary]
    for l in range(d - 1):
        for f in facets_by_dim[l]:
            f.on_boundary = any(
                _key_contains(g.key, f.key) for g in boundary_faces
            )

    return Mesh(patches, facets, facets_by_dim, by_key)
