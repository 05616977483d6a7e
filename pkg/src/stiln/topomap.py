"""Scalp topography: 10-20 electrode geometry and biharmonic-spline maps.

Electrode sites live on a unit sphere (polar angle from the vertex, azimuth
from the nose, positive toward the right ear) and project to the plane with
the azimuthal equidistant rule r = polar / 90deg, so the vertex lands at the
origin and the outer ring at radius 0.8. Scalar values at the electrodes are
interpolated with the thin-plate/biharmonic Green function
g(r) = r^2 (ln r - 1), solved densely in float64 with a tiny ridge; maps are
rasterized on a 28x28 grid over [-1,1]^2, masked to the unit head disk and
zero-padded to 32x32.

Image convention: row 0 is the front of the head (nose), column 0 the left
ear side.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

# Channel order used by the 32-channel affect-dataset montage; every array
# of per-channel values in this package follows it.
CHANNEL_NAMES: tuple[str, ...] = (
    "Fp1", "AF3", "F3", "F7", "FC5", "FC1", "C3", "T7",
    "CP5", "CP1", "P3", "P7", "PO3", "O1", "Oz", "Pz",
    "Fp2", "AF4", "Fz", "F4", "F8", "FC6", "FC2", "Cz",
    "C4", "T8", "CP6", "CP2", "P4", "P8", "PO4", "O2",
)

N_CHANNELS = len(CHANNEL_NAMES)

GRID = 28
PAD = 2
IMAGE_SIZE = GRID + 2 * PAD  # 32

_RIDGE = 1e-10


def _sph(polar_deg: float, azim_deg: float) -> np.ndarray:
    """Unit vector; polar from +z (vertex), azimuth from +y (nose) toward +x
    (right ear)."""
    p = math.radians(polar_deg)
    a = math.radians(azim_deg)
    v = np.array([math.sin(p) * math.sin(a), math.sin(p) * math.cos(a), math.cos(p)])
    v[np.abs(v) < 1e-15] = 0.0  # keep midline sites exactly on x = 0
    return v


def _mid(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = a + b
    return m / np.linalg.norm(m)


def _mirror_x(v: np.ndarray) -> np.ndarray:
    return np.array([-v[0], v[1], v[2]])


def _build_sphere() -> dict[str, np.ndarray]:
    """Left-hemisphere and midline anchors plus spherical midpoints; the
    right hemisphere is an exact x-mirror so homolog pairs are symmetric
    down to the last bit."""
    s: dict[str, np.ndarray] = {}
    s["Cz"] = _sph(0, 0)
    s["Fz"] = _sph(36, 0)
    s["Pz"] = _sph(36, 180)
    s["C3"] = _sph(36, -90)
    s["T7"] = _sph(72, -90)
    for name, az in (
        ("Fp1", -18), ("F7", -54), ("P7", -126), ("O1", -162), ("Oz", 180),
    ):
        s[name] = _sph(72, az)
    s["F3"] = _mid(s["F7"], s["Fz"])
    s["P3"] = _mid(s["P7"], s["Pz"])
    s["AF3"] = _mid(s["Fp1"], s["F3"])
    fc3 = _mid(s["F3"], s["C3"])
    fcz = _mid(s["Fz"], s["Cz"])
    s["FC1"] = _mid(fcz, fc3)
    ft7 = _mid(s["F7"], s["T7"])
    s["FC5"] = _mid(fc3, ft7)
    cpz = _mid(s["Cz"], s["Pz"])
    cp3 = _mid(s["C3"], s["P3"])
    tp7 = _mid(s["T7"], s["P7"])
    s["CP1"] = _mid(cpz, cp3)
    s["CP5"] = _mid(cp3, tp7)
    s["PO3"] = _mid(s["P3"], s["O1"])
    for left, right in HOMOLOG_PAIRS:
        s[right] = _mirror_x(s[left])
    return s


# (left, right) electrode pairs mirrored across the midline
HOMOLOG_PAIRS: tuple[tuple[str, str], ...] = (
    ("Fp1", "Fp2"), ("AF3", "AF4"), ("F3", "F4"), ("F7", "F8"),
    ("FC5", "FC6"), ("FC1", "FC2"), ("C3", "C4"), ("T7", "T8"),
    ("CP5", "CP6"), ("CP1", "CP2"), ("P3", "P4"), ("P7", "P8"),
    ("PO3", "PO4"), ("O1", "O2"),
)

MIDLINE = ("Fz", "Cz", "Pz", "Oz")


def electrode_positions() -> np.ndarray:
    """(32, 2) planar coordinates in channel order; x right, y front."""
    sphere = _build_sphere()
    out = np.zeros((N_CHANNELS, 2))
    for i, name in enumerate(CHANNEL_NAMES):
        vx, vy, vz = sphere[name]
        polar = math.acos(min(1.0, max(-1.0, vz)))
        r = polar / (math.pi / 2)
        az = math.atan2(vx, vy)
        x = 0.0 if vx == 0.0 else r * math.sin(az)  # sin(pi) noise off the midline
        out[i] = (x, r * math.cos(az))
    return out


def _green(r: np.ndarray) -> np.ndarray:
    """Biharmonic point-load response; r^2 (ln r - 1), zero at r = 0."""
    out = np.zeros_like(r)
    nz = r > 0
    rn = r[nz]
    out[nz] = rn * rn * (np.log(rn) - 1.0)
    return out


def fit_spline(positions: np.ndarray, values: np.ndarray, ridge: float = _RIDGE) -> np.ndarray:
    """Solve for biharmonic weights so the surface passes through the data.

    Dense float64 solve of (G + ridge*I) w = v. The ridge guards
    near-duplicate sites; at the default it costs ~2e-8 in worst-case
    reproduction error for unit-scale values.
    """
    positions = np.asarray(positions, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 2:
        raise ShapeError(f"positions must be (n, 2), got {positions.shape}")
    if values.shape != (positions.shape[0],):
        raise ShapeError(
            f"need one value per site: {values.shape} vs {positions.shape[0]} sites"
        )
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))
    g = _green(dist)
    g[np.diag_indices_from(g)] += ridge
    try:
        w = np.linalg.solve(g, values)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"spline system is singular: {e}") from e
    if not np.isfinite(w).all():
        raise NumericError("spline weights are not finite (coincident sites?)")
    return w


def evaluate_spline(
    positions: np.ndarray, weights: np.ndarray, points: np.ndarray
) -> np.ndarray:
    """Surface value at ``points`` (m, 2): sum_i w_i g(|p - p_i|)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ShapeError(f"points must be (m, 2), got {points.shape}")
    diff = points[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff * diff).sum(-1))
    return _green(dist) @ weights


def _grid_points(n: int = GRID) -> np.ndarray:
    """(n*n, 2) cell coordinates spanning [-1, 1] inclusive, row 0 at y=+1."""
    xs = np.linspace(-1.0, 1.0, n)
    ys = np.linspace(1.0, -1.0, n)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)


def render_frame(values: np.ndarray, positions: np.ndarray | None = None) -> np.ndarray:
    """One (32, 32) float32 map from 32 per-channel values.

    Interior 28x28 pixels carry the interpolated surface inside the unit
    head disk; pixels outside the disk and the 2-pixel border are zero.
    """
    values = np.asarray(values, dtype=np.float64)
    if positions is None:
        positions = electrode_positions()
    if values.shape != (positions.shape[0],):
        raise ShapeError(
            f"expected {positions.shape[0]} channel values, got shape {values.shape}"
        )
    w = fit_spline(positions, values)
    pts = _grid_points()
    surf = evaluate_spline(positions, w, pts).reshape(GRID, GRID)
    mask = (pts[:, 0] ** 2 + pts[:, 1] ** 2 <= 1.0).reshape(GRID, GRID)
    surf = np.where(mask, surf, 0.0)
    out = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
    out[PAD : PAD + GRID, PAD : PAD + GRID] = surf.astype(np.float32)
    return out


def render_bands(band_values: np.ndarray, positions: np.ndarray | None = None) -> np.ndarray:
    """(channels, bands) -> (32, 32, bands) stacked maps."""
    band_values = np.asarray(band_values, dtype=np.float64)
    if band_values.ndim != 2 or band_values.shape[0] != N_CHANNELS:
        raise ShapeError(
            f"expected ({N_CHANNELS}, bands) values, got shape {band_values.shape}"
        )
    if positions is None:
        positions = electrode_positions()
    frames = [render_frame(band_values[:, b], positions) for b in range(band_values.shape[1])]
    return np.stack(frames, axis=-1)


def frames_from_powers(powers: np.ndarray, positions: np.ndarray | None = None) -> np.ndarray:
    """(W, S, channels, bands) band powers -> (W, S, 32, 32, bands) images."""
    powers = np.asarray(powers, dtype=np.float64)
    if powers.ndim != 4 or powers.shape[2] != N_CHANNELS:
        raise ShapeError(
            f"expected (windows, subsegments, {N_CHANNELS}, bands), got {powers.shape}"
        )
    if positions is None:
        positions = electrode_positions()
    w, s, _, nb = powers.shape
    out = np.zeros((w, s, IMAGE_SIZE, IMAGE_SIZE, nb), dtype=np.float32)
    for wi in range(w):
        for si in range(s):
            out[wi, si] = render_bands(powers[wi, si], positions)
    return out


class MapOperator:
    """Precomputed linear map from 32 channel values to a rendered frame.

    The spline system depends only on electrode geometry, so
    image = mask(E @ G^-1 @ v) collapses into a single cached (1024, 32)
    matrix; batched rendering becomes one GEMM. Matches
    :func:`render_frame` to float64 solver tolerance.
    """

    def __init__(self, positions: np.ndarray | None = None, ridge: float = _RIDGE) -> None:
        if positions is None:
            positions = electrode_positions()
        positions = np.asarray(positions, dtype=np.float64)
        n = positions.shape[0]
        diff = positions[:, None, :] - positions[None, :, :]
        g = _green(np.sqrt((diff * diff).sum(-1)))
        g[np.diag_indices_from(g)] += ridge
        pts = _grid_points()
        pdiff = pts[:, None, :] - positions[None, :, :]
        e = _green(np.sqrt((pdiff * pdiff).sum(-1)))  # (GRID*GRID, n)
        try:
            m = np.linalg.solve(g.T, e.T).T  # E @ G^-1, G symmetric
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"spline system is singular: {exc}") from exc
        mask = (pts[:, 0] ** 2 + pts[:, 1] ** 2 <= 1.0)[:, None]
        m = np.where(mask, m, 0.0).reshape(GRID, GRID, n)
        full = np.zeros((IMAGE_SIZE, IMAGE_SIZE, n))
        full[PAD : PAD + GRID, PAD : PAD + GRID] = m
        self.n_sites = n
        self.matrix = full.reshape(IMAGE_SIZE * IMAGE_SIZE, n)

    def __call__(self, values: np.ndarray) -> np.ndarray:
        """(..., sites) -> (..., 32, 32) float32 frames."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-1] != self.n_sites:
            raise ShapeError(
                f"expected trailing axis of {self.n_sites} values, got {values.shape}"
            )
        flat = values @ self.matrix.T
        return flat.reshape(values.shape[:-1] + (IMAGE_SIZE, IMAGE_SIZE)).astype(np.float32)


def write_pgm(path, image: np.ndarray) -> None:
    """8-bit binary PGM, min-max normalized per image."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"PGM export needs a 2-D image, got {img.shape}")
    lo, hi = img.min(), img.max()
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pix = ((img - lo) * scale).round().astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def write_png(path, image: np.ndarray) -> None:
    """8-bit grayscale PNG via Pillow (optional dependency)."""
    try:
        from PIL import Image
    except ImportError as e:
        raise ConfigError(
            "PNG export needs Pillow (pip install stiln[png]); PGM export is built in"
        ) from e
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"PNG export needs a 2-D image, got {img.shape}")
    lo, hi = img.min(), img.max()
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pix = ((img - lo) * scale).round().astype(np.uint8)
    Image.fromarray(pix, mode="L").save(path)
