"""Assembly of the self-diffusion matrix across particle counts.

Directional quadratic forms measured along (1,0), (0,1), (1,1) pin the
symmetric 2x2 matrix at each count through the polarization identity.
A curve holds one matrix per count together with reported variances;
summaries and entrywise linear interpolation over density live here,
plus a flat delimited file format round-trip.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DiffusionCurve",
    "assemble_matrix",
    "curve_from_forms",
    "interpolate",
    "trace_average",
    "trace_average_full",
    "write_curve",
    "read_curve",
]


def assemble_matrix(q10: float, q01: float, q11: float) -> np.ndarray:
    """Symmetric 2x2 matrix from the three directional forms u' D u.

    Diagonals come straight from the axis directions; the off-diagonal
    is (q11 - q10 - q01)/2 by polarization.
    """
    vals = [float(q10), float(q01), float(q11)]
    if not all(np.isfinite(v) for v in vals):
        raise ValueError("non-finite directional form")
    off = (vals[2] - vals[0] - vals[1]) / 2.0
    return np.array([[vals[0], off], [off, vals[1]]])


@dataclass(frozen=True)
class DiffusionCurve:
    """One matrix per particle count, with method tag and seed.

    matrices and variances have shape (n_sites+1, dim, dim); variances
    are zero where values are exact.  The full-count matrix must vanish:
    with every site occupied nothing can move.
    """

    n_sites: int
    matrices: np.ndarray
    variances: np.ndarray
    method: str
    seed: int

    def __post_init__(self):
        mats = np.asarray(self.matrices, dtype=np.float64)
        if mats.ndim != 3 or mats.shape[0] != self.n_sites + 1:
            raise ValueError("need (n_sites+1, dim, dim) matrices")
        if mats.shape[1] != mats.shape[2]:
            raise ValueError("matrices must be square")
        var = np.asarray(self.variances, dtype=np.float64)
        if var.shape != mats.shape:
            raise ValueError("variances must match the matrices' shape")
        if not (np.all(np.isfinite(mats)) and np.all(np.isfinite(var))):
            raise ValueError("non-finite curve data")
        if np.abs(mats - mats.transpose(0, 2, 1)).max() > 1e-9:
            raise ValueError("matrices must be symmetric")
        if np.abs(mats[-1]).max() > 1e-9:
            raise ValueError("full occupancy must give the zero matrix")
        if np.any(var < 0):
            raise ValueError("negative variance")
        if self.method not in ("minimization", "kmc"):
            raise ValueError("method must be 'minimization' or 'kmc'")
        mats = mats.copy()
        var = var.copy()
        mats.setflags(write=False)
        var.setflags(write=False)
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "variances", var)

    @property
    def dim(self) -> int:
        return self.matrices.shape[1]

    @property
    def densities(self) -> np.ndarray:
        return np.arange(self.n_sites + 1) / self.n_sites


def curve_from_forms(
    n_sites: int,
    forms: np.ndarray,
    form_variances: np.ndarray | None,
    method: str,
    seed: int,
) -> DiffusionCurve:
    """Curve from per-count (q10, q01, q11) rows.

    Variance propagation treats the three forms as uncorrelated, which
    overstates nothing the reports rely on: var(D12) stacks a quarter of
    each form's variance.
    """
    arr = np.asarray(forms, dtype=np.float64)
    if arr.shape != (n_sites + 1, 3):
        raise ValueError("need (n_sites+1, 3) directional forms")
    mats = np.stack([assemble_matrix(*row) for row in arr])
    if form_variances is None:
        var = np.zeros_like(mats)
    else:
        fv = np.asarray(form_variances, dtype=np.float64)
        if fv.shape != arr.shape:
            raise ValueError("form variances must match the forms' shape")
        var = np.zeros_like(mats)
        var[:, 0, 0] = fv[:, 0]
        var[:, 1, 1] = fv[:, 1]
        var[:, 0, 1] = var[:, 1, 0] = (fv[:, 0] + fv[:, 1] + fv[:, 2]) / 4.0
    return DiffusionCurve(n_sites, mats, var, method, seed)


def interpolate(curve: DiffusionCurve, density: float) -> np.ndarray:
    """Entrywise piecewise-linear matrix at any density in [0, 1]."""
    rho = float(density)
    if not 0.0 <= rho <= 1.0:
        raise ValueError("density must lie in [0, 1]")
    nodes = curve.densities
    d = curve.dim
    out = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            out[i, j] = np.interp(rho, nodes, curve.matrices[:, i, j])
    return out


def trace_average(curve: DiffusionCurve) -> float:
    """Doubled mean of the first diagonal entry across counts.

    Approximates the integral of the matrix trace over density; for the
    isotropic four-direction model both diagonal entries agree, so the
    first one doubled stands in for the trace.
    """
    return float(2.0 * curve.matrices[:, 0, 0].sum() / (curve.n_sites + 1))


def trace_average_full(curve: DiffusionCurve) -> float:
    """Mean of the actual matrix trace across counts."""
    d11 = curve.matrices[:, 0, 0]
    d22 = curve.matrices[:, 1, 1]
    return float((d11 + d22).sum() / (curve.n_sites + 1))


_CURVE_HEADER = "ell,density,d11,d12,d22,var11,var12,var22,method,seed"


def write_curve(curve: DiffusionCurve, path, preamble=()) -> None:
    """Write the flat per-count rows; 2-d curves only.

    preamble lines are written as leading comments, one per entry; the
    caller uses them to embed the resolved run description.
    """
    if curve.dim != 2:
        raise ValueError("curve files are defined for 2-d models")
    lines = [f"# {line}" for line in preamble]
    lines.append(_CURVE_HEADER)
    for ell in range(curve.n_sites + 1):
        m = curve.matrices[ell]
        v = curve.variances[ell]
        lines.append(
            ",".join(
                [
                    str(ell),
                    repr(float(ell / curve.n_sites)),
                    repr(float(m[0, 0])),
                    repr(float(m[0, 1])),
                    repr(float(m[1, 1])),
                    repr(float(v[0, 0])),
                    repr(float(v[0, 1])),
                    repr(float(v[1, 1])),
                    curve.method,
                    str(curve.seed),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_curve(path) -> DiffusionCurve:
    """Read a curve file written by write_curve; exact round trip."""
    rows = []
    method = None
    seed = None
    for line in Path(path).read_text(encoding="ascii").splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line == _CURVE_HEADER:
            continue
        parts = line.split(",")
        if len(parts) != 10:
            raise ValueError("malformed curve row")
        rows.append(parts)
        if method is None:
            method, seed = parts[8], int(parts[9])
        elif parts[8] != method or int(parts[9]) != seed:
            raise ValueError("curve rows disagree on method or seed")
    if not rows:
        raise ValueError("empty curve file")
    n_sites = len(rows) - 1
    mats = np.zeros((n_sites + 1, 2, 2))
    var = np.zeros_like(mats)
    for parts in rows:
        ell = int(parts[0])
        if not 0 <= ell <= n_sites:
            raise ValueError("count out of range in curve file")
        d11, d12, d22, v11, v12, v22 = (float(x) for x in parts[2:8])
        mats[ell] = [[d11, d12], [d12, d22]]
        var[ell] = [[v11, v12], [v12, v22]]
    return DiffusionCurve(n_sites, mats, var, method, seed)
