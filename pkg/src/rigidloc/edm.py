"""Measured Euclidean distance matrices, bounds for missing entries, and completion.

Node ordering follows the usual layout: anchors occupy rows ``0..M-1`` and tags
rows ``M..N-1``. All matrices hold *squared* distances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares
from scipy.sparse.csgraph import floyd_warshall

from .geometry import inter_tag_distances, pairwise_distances, procrustes, vertical_offsets

log = logging.getLogger(__name__)


class DisconnectedGraph(ValueError):
    pass


def centering_matrix(n):
    return np.eye(n) - np.ones((n, n)) / n


def embedding_dimension(anchors, layout):
    """Affine dimension of the estimation space.

    Planar scenes with heights are embedded in the horizontal plane: the known
    height offsets are removed from the ranges before completion.
    """
    return anchors.dim


@dataclass(frozen=True)
class MeasuredEdm:
    """Measured squared distances ``d_tilde`` with weights ``W``.

    ``ranges`` keeps the raw tag-anchor ranges ``(T, M)`` (NaN where missing)
    and ``vertical`` the known height offsets, so measurement bands can be
    recomputed for any noise level.
    """

    d_tilde: np.ndarray
    weights: np.ndarray
    n_anchors: int
    embedding_dim: int
    sigma: float = 0.0
    ranges: np.ndarray | None = field(default=None, repr=False)
    vertical: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_nodes(self):
        return self.d_tilde.shape[0]

    @property
    def n_tags(self):
        return self.n_nodes - self.n_anchors

    @property
    def centering(self):
        return centering_matrix(self.n_nodes)

    @property
    def missing(self):
        """Symmetric mask of unavailable tag-anchor entries."""
        return self.weights == 0


@dataclass(frozen=True)
class BoundedEdm:
    lower: np.ndarray
    upper: np.ndarray
    initial: np.ndarray
    unbounded: np.ndarray = field(repr=False, default=None)

    @property
    def width(self):
        """Interval width in distance units, ``sqrt(U) - sqrt(L)``."""
        return np.sqrt(self.upper) - np.sqrt(self.lower)


@dataclass(frozen=True)
class CompletionConfig:
    """Solver settings.

    ``penalty`` scales the rank-cone penalty, ``acceleration_memory`` is the
    Anderson mixing depth (0 gives plain MM), and ``box_weight`` weighs box
    violations in the exact-rank refinement.
    """

    max_iters: int = 20
    convergence_tol: float = 1e-4
    embedding_dim: int | None = None
    fidelity_weight: float = 1.0
    penalty: float = 1.0
    acceleration_memory: int = 6
    refine_rank: bool = True
    box_weight: float = 10.0
    rigid_starts: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.acceleration_memory < 0:
            raise ValueError("acceleration_memory must be >= 0")
        if self.box_weight <= 0:
            raise ValueError("box_weight must be positive")


@dataclass(frozen=True)
class CompletedEdm:
    d_hat: np.ndarray
    iterations_used: int
    converged: bool
    objective: tuple = ()
    points: np.ndarray | None = field(default=None, repr=False)


def _horizontal(r, z):
    return np.sqrt(np.maximum(r**2 - z**2, 0.0))


def build_measured_edm(anchors, layout, tofs):
    M, T = anchors.count, layout.count
    if tofs.ranges.shape != (T, M):
        raise ValueError(f"ranges shape {tofs.ranges.shape} does not match {T} tags x {M} anchors")
    if anchors.dim != layout.dim:
        raise ValueError("anchor and tag dimensions differ")
    N = M + T
    D = np.zeros((N, N))
    W = np.ones((N, N))
    D[:M, :M] = anchors.distances() ** 2
    D[M:, M:] = inter_tag_distances(layout) ** 2
    vis = tofs.visibility
    z = vertical_offsets(anchors, layout)
    ta = np.where(vis, _horizontal(np.where(vis, tofs.ranges, 0.0), z), 0.0) ** 2
    D[M:, :M] = ta
    D[:M, M:] = ta.T
    W[M:, :M] = vis
    W[:M, M:] = vis.T
    return MeasuredEdm(D, W, M, embedding_dimension(anchors, layout), tofs.sigma,
                       np.array(tofs.ranges), z)


def _bands(measured, sigma):
    """+-3 sigma bands (distance units) on measured entries, exact elsewhere.

    Bands are set on the raw ranges and mapped through the height correction.
    """
    delta = np.sqrt(measured.d_tilde)
    M = measured.n_anchors
    lo = delta.copy()
    hi = delta.copy()
    seen = measured.weights[M:, :M] == 1
    if measured.ranges is None:
        raw, z = delta[M:, :M], np.zeros(seen.shape)
    else:
        raw, z = np.where(seen, measured.ranges, 0.0), measured.vertical
    blo = np.where(seen, _horizontal(np.maximum(raw - 3 * sigma, 0.0), z), 0.0)
    bhi = np.where(seen, _horizontal(raw + 3 * sigma, z), 0.0)
    lo[M:, :M] = np.where(seen, blo, lo[M:, :M])
    hi[M:, :M] = np.where(seen, bhi, hi[M:, :M])
    lo[:M, M:] = lo[M:, :M].T
    hi[:M, M:] = hi[M:, :M].T
    return lo, hi


def _scene_diameter(measured):
    M = measured.n_anchors
    d = np.sqrt(measured.d_tilde)
    return d[:M, :M].max() + d[M:, M:].max()


def _finish(lo, hi, sigma, unbounded):
    L, U = lo**2, hi**2
    bad = L > U
    if np.any(bad):
        mid = (L[bad] + U[bad]) / 2
        L[bad] = np.maximum(mid - sigma**2, 0.0)
        U[bad] = mid + sigma**2
    np.fill_diagonal(L, 0.0)
    np.fill_diagonal(U, 0.0)
    return BoundedEdm(L, U, (L + U) / 2, unbounded)


def _through_anchors(lo_n, hi_n, seen_n, r_m, diameter):
    """Triangle bounds for an anchor no tag sees, through the tag's own anchors."""
    if not seen_n.any():
        return 0.0, diameter
    lo, hi, rm = lo_n[seen_n], hi_n[seen_n], r_m[seen_n]
    low = max(np.max(np.maximum(lo - rm, rm - hi)), 0.0)
    high = np.min(hi + rm)
    return low, high


def estimate_bounds(measured, layout=None, sigma=None):
    """Bounds from the triangle inequality through co-visible tags.

    For a missing pair (tag ``n``, anchor ``m``) every other tag ``k`` that sees
    ``m`` gives ``delta_km - d_kn <= dist <= delta_km + d_kn``, with ``delta_km``
    taken at the edge of its ``3 sigma`` band. The tightest of these become the
    bounds. Pairs with no co-visible tag are bounded through the anchors the tag
    itself sees (or the scene diameter if it sees none) and flagged in
    ``unbounded``.
    """
    sigma = measured.sigma if sigma is None else float(sigma)
    M, T, N = measured.n_anchors, measured.n_tags, measured.n_nodes
    lo, hi = _bands(measured, sigma)
    d = inter_tag_distances(layout) if layout is not None else np.sqrt(measured.d_tilde[M:, M:])
    band_lo, band_hi = lo[M:, :M].copy(), hi[M:, :M].copy()
    r = np.sqrt(measured.d_tilde[:M, :M])
    seen = measured.weights[M:, :M] == 1
    unbounded = np.zeros((N, N), dtype=bool)
    diameter = _scene_diameter(measured)
    for n in range(T):
        for m in range(M):
            if seen[n, m]:
                continue
            others = [k for k in range(T) if k != n and seen[k, m]]
            if others:
                low = max(max(band_lo[k, m] - d[k, n] for k in others), 0.0)
                high = min(band_hi[k, m] + d[k, n] for k in others)
            else:
                low, high = _through_anchors(band_lo[n], band_hi[n], seen[n], r[m], diameter)
                unbounded[M + n, m] = unbounded[m, M + n] = True
            lo[M + n, m] = lo[m, M + n] = low
            hi[M + n, m] = hi[m, M + n] = high
    if unbounded.any():
        log.debug("%d tag-anchor pairs have no co-visible tag; bounding through anchors",
              unbounded.sum() // 2)
    return _finish(lo, hi, sigma, unbounded)


def shortest_path_bounds(measured, sigma=None):
    """Conventional bounds: upper = shortest path over known edges, lower = 0."""
    sigma = measured.sigma if sigma is None else float(sigma)
    lo, hi = _bands(measured, sigma)
    graph = np.where(measured.weights == 1, hi, 0.0)
    np.fill_diagonal(graph, 0.0)
    paths = floyd_warshall(graph, directed=False)
    if not np.all(np.isfinite(paths)):
        raise DisconnectedGraph("measurement graph is not connected")
    missing = measured.missing
    lo[missing] = 0.0
    hi[missing] = paths[missing]
    return _finish(lo, hi, sigma, np.zeros_like(missing))


def project_rank_cone(A, dim):
    """Project ``A`` onto {A : J A J is PSD with rank <= dim}.

    The centred part is replaced by its best rank-``dim`` PSD approximation;
    the rest is kept. Returns the projection and the eigenpairs used.
    """
    n = A.shape[0]
    J = centering_matrix(n)
    JAJ = J @ A @ J
    JAJ = (JAJ + JAJ.T) / 2
    w, V = np.linalg.eigh(JAJ)
    w_top = np.maximum(w[-dim:], 0.0)
    V_top = V[:, -dim:]
    return A - JAJ + (V_top * w_top) @ V_top.T, w_top, V_top


def _entrywise_minimizer(a, delta, w, rho, lower, upper):
    """argmin over d in [lower, upper] of  w (sqrt(d) - delta)^2 + rho/2 (d - a)^2.

    In ``s = sqrt(d)`` the stationarity condition is the depressed cubic
    ``s^3 + p s + q = 0`` with ``p = (w/rho - a)`` and ``q = -w delta / rho``.
    All real roots in range and both interval ends are compared.
    """
    out = np.clip(a, lower, upper)
    act = w > 0
    if not np.any(act):
        return out
    a_, dl, w_ = a[act], delta[act], w[act]
    lo, hi = np.sqrt(lower[act]), np.sqrt(upper[act])
    p = w_ / rho - a_
    q = -w_ * dl / rho
    disc = (q / 2) ** 2 + (p / 3) ** 3
    cands = [lo, hi]
    one = disc >= 0
    sq = np.sqrt(np.where(one, disc, 0.0))
    r1 = np.cbrt(-q / 2 + sq) + np.cbrt(-q / 2 - sq)
    neg = np.where(one, -1.0, p)
    m = 2 * np.sqrt(-neg / 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = np.clip(np.where(one, 0.0, 3 * q / (np.where(one, 1.0, p) * m)), -1.0, 1.0)
    th = np.arccos(arg) / 3
    for k in range(3):
        rk = m * np.cos(th - 2 * np.pi * k / 3)
        cands.append(np.where(one, r1, rk))
    S = np.clip(np.nan_to_num(np.array(cands)), lo, hi)
    f = w_ * (S - dl) ** 2 + rho / 2 * (S**2 - a_) ** 2
    best = S[np.argmin(f, axis=0), np.arange(S.shape[1])]
    out[act] = best**2
    return out


def completion_objective(D, measured, dim, fidelity_weight=1.0, rho=1.0):
    """Fidelity on distances plus the rank-cone penalty (the majorized objective)."""
    W = measured.weights * fidelity_weight
    fid = np.sum(W * (np.sqrt(D) - np.sqrt(measured.d_tilde)) ** 2)
    P, _, _ = project_rank_cone(-D, dim)
    return fid + rho / 2 * np.sum((-D - P) ** 2)


def _penalty_scale(D0):
    """Convert the squared-distance penalty to distance units (one scalar, set once)."""
    off = D0[~np.eye(D0.shape[0], dtype=bool)]
    return 1.0 / (4.0 * max(np.mean(off), 1e-12))


def _free_entries(L, U):
    """Upper-triangle entries that the box leaves free to move."""
    iu = np.triu_indices(L.shape[0], 1)
    keep = U[iu] > L[iu]
    return iu[0][keep], iu[1][keep]


def _majorization(measured, L, U, initial, dim, config):
    """Safeguarded Anderson-accelerated MM at a fixed penalty.

    Returns ``(D, iterations, converged, objective history)``; the history
    never increases.
    """
    W = measured.weights * config.fidelity_weight
    np.fill_diagonal(W, 0.0)
    delta = np.sqrt(measured.d_tilde)
    base = np.clip(initial, L, U)
    base = (base + base.T) / 2
    np.fill_diagonal(base, 0.0)
    rho = config.penalty * _penalty_scale(base)
    rows, cols = _free_entries(L, U)
    lo_free, hi_free = L[rows, cols], U[rows, cols]

    def to_matrix(x):
        D = base.copy()
        x = np.clip(x, lo_free, hi_free)
        D[rows, cols] = x
        D[cols, rows] = x
        return D

    def step(x):
        P, _, _ = project_rank_cone(-to_matrix(x), dim)
        D = _entrywise_minimizer(-P, delta, W, rho, L, U)
        return (D[rows, cols] + D[cols, rows]) / 2

    def objective(x):
        return completion_objective(to_matrix(x), measured, dim, config.fidelity_weight, rho)

    x = base[rows, cols]
    history = [objective(x)]
    xs, rs = [], []
    converged = False
    it = 0
    depth = config.acceleration_memory
    for it in range(1, config.max_iters + 1):
        g = step(x)
        f_g = objective(g)
        x_new, f_new = g, f_g
        if depth > 0:
            xs.append(x)
            rs.append(g - x)
            xs, rs = xs[-(depth + 1):], rs[-(depth + 1):]
            if len(xs) > 1:
                dx = np.diff(np.array(xs), axis=0).T
                dr = np.diff(np.array(rs), axis=0).T
                gamma = np.linalg.lstsq(dr, rs[-1], rcond=None)[0]
                xa = np.clip(g - (dx + dr) @ gamma, lo_free, hi_free)
                f_a = objective(xa)
                if f_a <= f_g:
                    x_new, f_new = xa, f_a
                else:
                    xs, rs = [], []
        change = np.linalg.norm(x_new - x) * np.sqrt(2)
        x = x_new
        history.append(f_new)
        if change < config.convergence_tol:
            converged = True
            break
    return to_matrix(x), it, converged, history


START_EVALS = 100


def _fit_points(measured, lower, upper, anchor_points, tags0, box_weight, max_evals=None):
    """Tag coordinates minimizing distance fidelity plus box-violation hinges."""
    M, T = measured.n_anchors, measured.n_tags
    seen = measured.weights[M:, :M] == 1
    delta = np.sqrt(measured.d_tilde[M:, :M])
    sl, su = np.sqrt(lower), np.sqrt(upper)
    iu = np.triu_indices(T, 1)
    lo_ta, hi_ta = sl[M:, :M], su[M:, :M]
    lo_tt, hi_tt = sl[M:, M:][iu], su[M:, M:][iu]

    def residuals(x):
        X = x.reshape(T, -1)
        d_ta = pairwise_distances(X, anchor_points)
        d_tt = pairwise_distances(X)[iu]
        return np.concatenate([
            (d_ta - delta)[seen],
            box_weight * np.maximum(lo_ta - d_ta, 0.0).ravel(),
            box_weight * np.maximum(d_ta - hi_ta, 0.0).ravel(),
            box_weight * np.maximum(lo_tt - d_tt, 0.0),
            box_weight * np.maximum(d_tt - hi_tt, 0.0),
        ])

    ti, tj = iu
    n_ta, n_tt = T * M, len(ti)

    def jacobian(x):
        X = x.reshape(T, -1)
        dim = X.shape[1]
        diff_ta = X[:, None, :] - anchor_points[None]
        d_ta = np.linalg.norm(diff_ta, axis=2)
        u_ta = diff_ta / np.maximum(d_ta, 1e-12)[..., None]
        diff_tt = X[ti] - X[tj]
        d_tt = np.linalg.norm(diff_tt, axis=1)
        u_tt = diff_tt / np.maximum(d_tt, 1e-12)[:, None]
        # d(distance)/dX for every tag-anchor entry, laid out over all T * dim columns
        g_ta = np.zeros((T, M, T, dim))
        g_ta[np.arange(T), :, np.arange(T), :] = u_ta
        g_ta = g_ta.reshape(n_ta, T * dim)
        g_tt = np.zeros((n_tt, T, dim))
        g_tt[np.arange(n_tt), ti] = u_tt
        g_tt[np.arange(n_tt), tj] = -u_tt
        g_tt = g_tt.reshape(n_tt, T * dim)
        lo_a = (lo_ta - d_ta > 0).ravel()
        hi_a = (d_ta - hi_ta > 0).ravel()
        lo_t = lo_tt - d_tt > 0
        hi_t = d_tt - hi_tt > 0
        return np.vstack([
            g_ta[seen.ravel()],
            -box_weight * g_ta * lo_a[:, None],
            box_weight * g_ta * hi_a[:, None],
            -box_weight * g_tt * lo_t[:, None],
            box_weight * g_tt * hi_t[:, None],
        ])

    sol = least_squares(residuals, np.asarray(tags0, dtype=float).ravel(), jac=jacobian, max_nfev=max_evals)
    return sol.x.reshape(T, -1), float(sol.cost)


def _rank_refine(measured, bounds, D_mm, dim, box_weight, rigid_starts=True):
    """Exact rank-``dim`` solution in coordinates, started from the MM result.

    Anchors sit at a realization of their (exact) distance block. Tags start
    from the MM embedding, and from rigid fits of the exact tag block in both
    chiralities; the lowest-cost local solution is kept.
    """
    M = measured.n_anchors
    anchor_points = embed(measured.d_tilde[:M, :M], dim)
    X = embed(D_mm, dim)
    R, t = procrustes(X[:M], anchor_points, allow_reflection=True)
    tags = X[M:] @ R.T + t
    layout = embed(measured.d_tilde[M:, M:], dim)
    mirrored = layout.copy()
    mirrored[:, -1] *= -1
    starts = [tags]
    for shape in (layout, mirrored) if rigid_starts else ():
        Rs, ts = procrustes(shape, tags)
        starts.append(shape @ Rs.T + ts)
    best = None
    for start in starts:
        # starts only need to reach their basin; the polish below finishes the winner
        pts, cost = _fit_points(measured, bounds.lower, bounds.upper, anchor_points, start, box_weight,
                                START_EVALS)
        if best is None or cost < best[1]:
            best = (pts, cost)
    # tighten the box so the final clamp barely moves the entries
    tags, _ = _fit_points(measured, bounds.lower, bounds.upper, anchor_points, best[0], box_weight * 1e4)
    points = np.vstack([anchor_points, tags])
    D = np.clip(pairwise_distances(points) ** 2, bounds.lower, bounds.upper)
    D = (D + D.T) / 2
    np.fill_diagonal(D, 0.0)
    return D, points


def complete_edm(measured, bounds, config=CompletionConfig()):
    """Complete the EDM under box and rank constraints.

    The core is majorization-minimization: each iteration projects ``-D``
    onto the rank-cut conditionally PSD cone, then solves the separable
    majorized problem entrywise inside ``[L, U]``. Iterates are mixed with
    safeguarded Anderson acceleration, so the recorded objective never
    increases.

    A final step solves the same fidelity and box problem with the rank
    constraint held exactly, in coordinates, started from the MM embedding,
    so ``d_hat`` is a true EDM up to the final clamp into ``[L, U]``.
    """
    dim = config.embedding_dim or measured.embedding_dim
    L, U = bounds.lower, bounds.upper
    if np.any(L > U + 1e-12):
        raise ValueError("inconsistent bounds: L > U")
    D, it, converged, history = _majorization(measured, L, U, bounds.initial, dim, config)
    if config.refine_rank:
        D, points = _rank_refine(measured, bounds, D, dim, config.box_weight, config.rigid_starts)
    else:
        points = embed(D, dim)
    return CompletedEdm(D, it, converged, tuple(history), points)


def embed(D, dim):
    """Classical multidimensional scaling: points whose EDM best matches ``D``."""
    n = D.shape[0]
    J = centering_matrix(n)
    G = -J @ D @ J / 2
    w, V = np.linalg.eigh((G + G.T) / 2)
    w = np.maximum(w[-dim:], 0.0)
    return V[:, -dim:] * np.sqrt(w)


@dataclass
class EdmCheck:
    is_edm: bool
    violations: list
    eigenvalues: np.ndarray


def is_edm(D, dim, tol=1e-6):
    """Check symmetry, hollowness, and that ``-JDJ/2`` is PSD with rank <= dim.

    Eigenvalue conditions are relative to the largest eigenvalue magnitude.
    """
    D = np.asarray(D, dtype=float)
    violations = []
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        return EdmCheck(False, ["not square"], np.array([]))
    scale = max(np.max(np.abs(D)), 1e-300)
    if np.max(np.abs(D - D.T)) > tol * scale:
        violations.append("not symmetric")
    if np.max(np.abs(np.diag(D))) > tol * scale:
        violations.append("not hollow")
    J = centering_matrix(D.shape[0])
    G = -J @ ((D + D.T) / 2) @ J / 2
    w = np.linalg.eigvalsh(G)[::-1]
    top = max(np.max(np.abs(w)), 1e-300)
    if w[-1] < -tol * top:
        violations.append(f"-JDJ not PSD (min eigenvalue {w[-1]:.3e})")
    if w.size > dim and np.max(np.abs(w[dim:])) > tol * top:
        violations.append(f"embedding rank exceeds {dim} (eigenvalue {w[dim]:.3e})")
    return EdmCheck(not violations, violations, w)


def edm_frobenius_error(D_hat, D_true):
    """``|| sqrt(D_hat) - sqrt(D_true) ||_F`` in meters."""
    D_hat = np.asarray(D_hat, dtype=float)
    D_true = np.asarray(D_true, dtype=float)
    if D_hat.shape != D_true.shape:
        raise ValueError("shape mismatch")
    if np.any(D_hat < 0) or np.any(D_true < 0):
        raise ValueError("squared-distance matrices must be nonnegative")
    return float(np.linalg.norm(np.sqrt(D_hat) - np.sqrt(D_true)))


def true_edm(anchors, layout, points):
    """EDM of anchors plus tags at the given positions, in the estimation space."""
    M = anchors.count
    T = layout.count
    D = np.zeros((M + T, M + T))
    D[:M, :M] = anchors.distances() ** 2
    D[M:, M:] = inter_tag_distances(layout) ** 2
    r = pairwise_distances(points, anchors.positions) ** 2
    D[M:, :M] = r
    D[:M, M:] = r.T
    return D


def dump_csv(directory, measured, bounds=None, completed=None):
    """Write D_tilde, W, L, U, D_hat as CSV matrices (header ``n_rows,n_cols``)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mats = {"D_tilde": measured.d_tilde, "W": measured.weights}
    if bounds is not None:
        mats.update(L=bounds.lower, U=bounds.upper)
    if completed is not None:
        mats["D_hat"] = completed.d_hat
    for name, mat in mats.items():
        with open(directory / f"{name}.csv", "w", newline="\n") as fh:
            fh.write(f"{mat.shape[0]},{mat.shape[1]}\n")
            for row in mat:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return sorted(directory / f"{n}.csv" for n in mats)


def load_csv(path):
    with open(path) as fh:
        rows, cols = (int(v) for v in fh.readline().split(","))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape != (rows, cols):
        raise ValueError(f"{path}: header says {rows}x{cols}, found {data.shape}")
    return data
