"""Omnidirectional fisheye camera model (polynomial back-projection).

The model follows the OCamCalib convention: a pixel maps to the ray
(xp, yp, f(rho)) where (xp, yp) are affine-corrected sensor coordinates,
rho = |(xp, yp)| and f is a degree-4 polynomial. The forward projection
uses an inverse polynomial rho(theta), theta = atan2(z, |(x, y)|), which is
fitted numerically from f when the calibration file does not provide one.

With the default calibration f(0) < 0, so the optical axis of view is
(0, 0, -1): the camera looks along -Z and sees slightly behind the image
plane (190 degree lens).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_SENSOR_WIDTH = 256
DEFAULT_SENSOR_HEIGHT = 192


def _polyval(coeffs: np.ndarray, x):
    """Evaluate sum_k coeffs[k] * x**k (coefficients low order first)."""
    return np.polynomial.polynomial.polyval(x, coeffs)


@dataclass(frozen=True)
class FisheyeIntrinsics:
    """Calibrated fisheye model: back-projection poly, centre, affine stretch.

    poly: a0..a4 of f(rho) (low order first, a0 typically negative).
    affine: (c, d, e) entries of the 2x2 stretch matrix [[c, d], [e, 1]].
    inverse_poly: coefficients of rho(theta); fitted from poly if omitted.
    """

    poly: np.ndarray
    center: tuple[float, float]
    affine: tuple[float, float, float] = (1.0, 0.0, 0.0)
    inverse_poly: np.ndarray | None = None
    width: int = DEFAULT_SENSOR_WIDTH
    height: int = DEFAULT_SENSOR_HEIGHT
    _inv: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "poly", np.asarray(self.poly, dtype=np.float64))
        c, d, e = self.affine
        det = c - d * e
        if abs(det) < 1e-12:
            raise ValueError("affine stretch matrix is singular")
        inv = self.inverse_poly
        if inv is None:
            inv = fit_inverse_poly(self.poly, self.max_radius())
        object.__setattr__(self, "inverse_poly", np.asarray(inv, dtype=np.float64))

    def max_radius(self) -> float:
        """Distance from the principal point to the farthest sensor corner."""
        cx, cy = self.center
        dx = max(cx, self.width - 1 - cx)
        dy = max(cy, self.height - 1 - cy)
        return float(np.hypot(dx, dy))

    def affine_matrix(self) -> np.ndarray:
        c, d, e = self.affine
        return np.array([[c, d], [e, 1.0]])


def fit_inverse_poly(poly: np.ndarray, r_max: float, tol_px: float = 1e-6,
                     max_degree: int = 24) -> np.ndarray:
    """Fit rho(theta) so the forward projection inverts the back-projection.

    Samples the exact relation theta(r) = atan2(f(r), r) over [0, r_max] and
    increases the polynomial degree until the radius reconstruction error
    drops below tol_px (or the degree cap is hit). theta(r) must be strictly
    monotone over the sampled range, which holds for lens-like polynomials.
    """
    poly = np.asarray(poly, dtype=np.float64)
    r = np.linspace(0.0, r_max, 4096)
    z = _polyval(poly, r)
    theta = np.arctan2(z, r)
    if np.any(np.diff(theta) <= 0):
        raise ValueError("back-projection polynomial is not invertible over the sensor")
    best = None
    for degree in range(4, max_degree + 1):
        # Chebyshev-ish conditioning via the Polynomial fit domain, converted
        # back to plain coefficients for the file format.
        series = np.polynomial.Polynomial.fit(theta, r, degree)
        coeffs = series.convert().coef
        err = np.max(np.abs(_polyval(coeffs, theta) - r))
        if best is None or err < best[0]:
            best = (err, coeffs)
        if err < tol_px:
            break
    return best[1]


def project(points: np.ndarray, intr: FisheyeIntrinsics) -> np.ndarray:
    """Project 3D camera-frame points to pixel coordinates.

    Accepts (..., 3) arrays. Points at the exact optical centre raise; axial
    points project to the principal point.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != 3:
        raise ValueError("points must have 3 components")
    xy_norm = np.hypot(pts[..., 0], pts[..., 1])
    degenerate = (xy_norm == 0) & (pts[..., 2] == 0)
    if np.any(degenerate):
        raise ValueError("cannot project the optical centre (0, 0, 0)")
    theta = np.arctan2(pts[..., 2], xy_norm)
    rho = _polyval(intr.inverse_poly, theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(xy_norm > 0, rho / np.where(xy_norm > 0, xy_norm, 1.0), 0.0)
    m = pts[..., :2] * scale[..., None]
    a = intr.affine_matrix()
    uv = m @ a.T + np.asarray(intr.center)
    return uv[0] if single else uv


def unproject(pixels: np.ndarray, intr: FisheyeIntrinsics, check_bounds: bool = True) -> np.ndarray:
    """Back-project pixels to unit rays in the camera frame.

    Accepts (..., 2) arrays; raises if a pixel lies outside the sensor
    (disable with check_bounds for synthetic super-sampling).
    """
    px = np.asarray(pixels, dtype=np.float64)
    single = px.ndim == 1
    px = np.atleast_2d(px)
    if px.shape[-1] != 2:
        raise ValueError("pixels must have 2 components")
    if check_bounds:
        u, v = px[..., 0], px[..., 1]
        if np.any((u < 0) | (u > intr.width - 1) | (v < 0) | (v > intr.height - 1)):
            raise ValueError("pixel outside sensor bounds")
    a_inv = np.linalg.inv(intr.affine_matrix())
    m = (px - np.asarray(intr.center)) @ a_inv.T
    rho = np.hypot(m[..., 0], m[..., 1])
    z = _polyval(intr.poly, rho)
    rays = np.concatenate([m, z[..., None]], axis=-1)
    rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
    return rays[0] if single else rays


def view_angles(points: np.ndarray, intr: FisheyeIntrinsics) -> np.ndarray:
    """Angle (rad) between each point and the viewing axis (0, 0, -1)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    xy = np.hypot(pts[..., 0], pts[..., 1])
    return np.arctan2(xy, -pts[..., 2])


def default_intrinsics(width: int = DEFAULT_SENSOR_WIDTH,
                       height: int = DEFAULT_SENSOR_HEIGHT) -> FisheyeIntrinsics:
    """Synthetic 190-degree lens centred on the sensor.

    Near-equidistant mapping (~0.75 deg/px at the centre) whose image circle
    for the nominal field of view sits at half the sensor width.
    """
    scale = width / 256.0
    a0 = -77.0 * scale
    a2 = 0.005218 / scale
    a4 = 1e-8 / scale ** 3
    return FisheyeIntrinsics(
        poly=np.array([a0, 0.0, a2, 0.0, a4]),
        center=((width - 1) / 2.0, (height - 1) / 2.0),
        affine=(1.0, 0.0, 0.0),
        width=width,
        height=height,
    )


def save_intrinsics(path: str | Path, intr: FisheyeIntrinsics):
    lines = [
        "poly: " + " ".join(f"{a:.17g}" for a in intr.poly),
        "center: " + " ".join(f"{c:.17g}" for c in intr.center),
        "affine: " + " ".join(f"{a:.17g}" for a in intr.affine),
        "inv_poly: " + " ".join(f"{a:.17g}" for a in intr.inverse_poly),
        f"size: {intr.width} {intr.height}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_intrinsics(path: str | Path) -> FisheyeIntrinsics:
    """Parse the key/value calibration format (poly/center/affine/inv_poly/size)."""
    fields: dict[str, list[float]] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ValueError(f"malformed intrinsics line: {raw!r}")
        key, _, rest = line.partition(":")
        fields[key.strip()] = [float(tok) for tok in rest.split()]
    for required in ("poly", "center", "affine"):
        if required not in fields:
            raise ValueError(f"intrinsics file missing '{required}'")
    if len(fields["center"]) != 2 or len(fields["affine"]) != 3:
        raise ValueError("intrinsics center/affine have wrong arity")
    size = fields.get("size", [DEFAULT_SENSOR_WIDTH, DEFAULT_SENSOR_HEIGHT])
    inv = fields.get("inv_poly")
    return FisheyeIntrinsics(
        poly=np.array(fields["poly"]),
        center=(fields["center"][0], fields["center"][1]),
        affine=(fields["affine"][0], fields["affine"][1], fields["affine"][2]),
        inverse_poly=np.array(inv) if inv is not None else None,
        width=int(size[0]),
        height=int(size[1]),
    )
