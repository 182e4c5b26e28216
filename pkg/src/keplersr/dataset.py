"""Orbit data: Rudolphine-table ingestion, synthetic orbits, featurization.

Angles are radians everywhere past ingestion and are reduced to (-pi, pi].
Distances are dimensionless, scaled so that Mars sits near 1.5.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from keplersr.bias import BiasConfig
from keplersr.errors import DomainError, ParseError, RangeError, SchemaError
from keplersr.fitters import EllipseParams, ellipse_radius

RUDOLPHINE_COLUMNS = ("anomalia_eccentri", "intercolumnium", "anomalia_coaequata", "intervallu")
NORMALIZED_COLUMNS = ("theta_rad", "r")
PROVENANCES = ("rudolphine-csv", "synthetic")

#: Intervallu columns whose median exceeds this are taken as raw E+05 values.
RAW_DISTANCE_THRESHOLD = 1000.0
RAW_DISTANCE_SCALE = 1e5

DEFAULT_SYNTHETIC = dict(a=1.5235, eps=0.0926, n=180, grid="eccentric", noise=2e-4, seed=1627)

_DMS_SPLIT = re.compile(r"[\s°'\"′″:dmsDMS]+")
_DMS_HINT = re.compile(r"[\s°'\"′″:]")


@dataclass(frozen=True)
class OrbitSample:
    theta: float
    r: float
    eccentric_anomaly: float | None = None
    interpolating_factor: float | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered orbit samples held column-wise."""

    theta: np.ndarray
    r: np.ndarray
    provenance: str = "rudolphine-csv"
    eccentric_anomaly: np.ndarray | None = None
    interpolating_factor: np.ndarray | None = None
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        r = np.array(self.r, dtype=float)
        if theta.ndim != 1 or theta.shape != r.shape:
            raise ValueError("theta and r must be 1-D arrays of equal length")
        if theta.size == 0:
            raise ValueError("dataset is empty")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(r))):
            raise ValueError("dataset contains non-finite values")
        if np.any(r <= 0):
            raise ValueError("distances must be positive")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        theta.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "r", r)
        for name in ("eccentric_anomaly", "interpolating_factor"):
            col = getattr(self, name)
            if col is not None:
                col = np.array(col, dtype=float)
                col.flags.writeable = False
                object.__setattr__(self, name, col)

    def __len__(self) -> int:
        return self.theta.size

    @property
    def samples(self) -> list[OrbitSample]:
        ea = self.eccentric_anomaly
        fi = self.interpolating_factor
        return [
            OrbitSample(
                float(t),
                float(r),
                None if ea is None else float(ea[i]),
                None if fi is None else float(fi[i]),
            )
            for i, (t, r) in enumerate(zip(self.theta, self.r))
        ]

    @property
    def theta_span_deg(self) -> tuple[float, float]:
        d = np.degrees(self.theta)
        return float(d.min()), float(d.max())


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    names: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray

    @property
    def arity(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.y.size


def reduce_angle(theta):
    """Map angles to (-pi, pi]."""
    t = np.asarray(theta, dtype=float)
    out = np.pi - np.mod(np.pi - t, 2 * np.pi)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# Sexagesimal angles


def parse_dms(text: str) -> float:
    """Degrees-minutes-seconds text to decimal degrees.

    Accepts ``"30 15 30"``, ``"30°15'30\\""`` and similar; seconds are
    optional. Degrees must be an integer in [0, 360); minutes an integer and
    seconds a number, both in [0, 60).
    """
    raw = text.strip()
    if not raw:
        raise ParseError("empty angle")
    parts = [p for p in _DMS_SPLIT.split(raw) if p]
    if not 1 <= len(parts) <= 3:
        raise ParseError(f"cannot read {text!r} as degrees minutes seconds")
    try:
        deg = int(parts[0])
        minutes = int(parts[1]) if len(parts) > 1 else 0
        sec_text = parts[2] if len(parts) > 2 else "0"
        seconds = int(sec_text) if re.fullmatch(r"\d+", sec_text) else float(sec_text)
    except ValueError:
        raise ParseError(f"cannot read {text!r} as degrees minutes seconds") from None
    if not 0 <= deg < 360:
        raise RangeError(f"degrees out of range in {text!r}")
    if not 0 <= minutes < 60:
        raise RangeError(f"minutes out of range in {text!r}")
    if not 0 <= seconds < 60:
        raise RangeError(f"seconds out of range in {text!r}")
    if isinstance(seconds, int):
        # one rounding step: exact integer numerator over 3600
        return (deg * 3600 + minutes * 60 + seconds) / 3600
    return deg + minutes / 60 + seconds / 3600


def format_dms(degrees: float) -> str:
    """Decimal degrees to ``"D M S"``, rounded to the nearest arcsecond."""
    total = int(round(degrees * 3600))
    return f"{total // 3600} {(total % 3600) // 60} {total % 60}"


def _looks_dms(values: Sequence[str]) -> bool:
    return any(_DMS_HINT.search(v.strip()) for v in values if v.strip())


def _angle_column(values: Sequence[str], name: str, as_dms: bool | None) -> np.ndarray:
    dms = _looks_dms(values) if as_dms is None else as_dms
    out = np.empty(len(values))
    for i, v in enumerate(values):
        try:
            out[i] = parse_dms(v) if dms else float(v)
        except (ParseError, RangeError, ValueError) as exc:
            raise ParseError(f"bad {name} value {v!r}: {exc}", i + 1) from None
    return out


def _float_column(values: Sequence[str], name: str) -> np.ndarray:
    out = np.empty(len(values))
    for i, v in enumerate(values):
        try:
            out[i] = float(v)
        except ValueError:
            raise ParseError(f"bad {name} value {v!r}", i + 1) from None
    return out


def _read_rows(path: Path) -> tuple[list[str], list[dict[str, str]], list[str]]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IOError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if ln.strip() and not ln.startswith("#")]
    reader = csv.DictReader(body)
    rows = list(reader)
    header = [h.strip() for h in (reader.fieldnames or [])]
    rows = [{(k or "").strip(): (v or "").strip() for k, v in row.items()} for row in rows]
    return header, rows, comments


def load_rudolphine_csv(
    path: str | Path,
    angles_dms: bool | None = None,
    distance_threshold: float = RAW_DISTANCE_THRESHOLD,
    rescale: bool | None = None,
) -> Dataset:
    """Load a Rudolphine-style table (or an already normalized file).

    ``angles_dms``/``rescale`` override the per-column auto-detection of DMS
    text and of raw E+05 distances. Row order is preserved.
    """
    path = Path(path)
    header, rows, comments = _read_rows(path)
    if set(NORMALIZED_COLUMNS) <= set(header):
        theta = _float_column([r["theta_rad"] for r in rows], "theta_rad")
        dist = _float_column([r["r"] for r in rows], "r")
        prov = "rudolphine-csv"
        for c in comments:
            m = re.search(r"provenance=([\w-]+)", c)
            if m and m.group(1) in PROVENANCES:
                prov = m.group(1)
        if not rows:
            raise ParseError("no data rows", 0)
        return Dataset(reduce_angle(theta), dist, provenance=prov)

    missing = [c for c in RUDOLPHINE_COLUMNS if c not in header]
    if missing:
        raise SchemaError(missing)
    if not rows:
        raise ParseError("no data rows", 0)
    coeq = _angle_column([r["anomalia_coaequata"] for r in rows], "anomalia_coaequata", angles_dms)
    ecc = _angle_column([r["anomalia_eccentri"] for r in rows], "anomalia_eccentri", angles_dms)
    inter = _float_column([r["intercolumnium"] or "nan" for r in rows], "intercolumnium")
    dist = _float_column([r["intervallu"] for r in rows], "intervallu")
    scale = (np.median(dist) > distance_threshold) if rescale is None else rescale
    if scale:
        dist = dist / RAW_DISTANCE_SCALE
    for i, v in enumerate(dist):
        if not v > 0:
            raise ParseError(f"non-positive intervallu {v!r}", i + 1)
    return Dataset(
        reduce_angle(np.radians(coeq)),
        dist,
        provenance="rudolphine-csv",
        eccentric_anomaly=reduce_angle(np.radians(ecc)),
        interpolating_factor=inter,
        notes={"angles_dms": bool(_looks_dms([r["anomalia_coaequata"] for r in rows]) if angles_dms is None else angles_dms),
               "rescaled": bool(scale)},
    )


def write_normalized_csv(data: Dataset, path: str | Path) -> None:
    """Write ``theta_rad,r`` rows at full precision after a provenance line."""
    lines = [f"# keplersr normalized orbit data; provenance={data.provenance}", "theta_rad,r"]
    lines += [f"{t!r},{r!r}" for t, r in zip(data.theta.tolist(), data.r.tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Synthetic orbits


def true_from_eccentric(E, eps: float):
    """True anomaly for eccentric anomaly ``E``, both from the same apsis.

    A negative ``eps`` means both angles are measured from aphelion.
    """
    E = np.asarray(E, dtype=float)
    return np.arctan2(math.sqrt(1.0 - eps * eps) * np.sin(E), np.cos(E) - eps)


def generate_synthetic(
    params: EllipseParams | tuple[float, float],
    n: int = 180,
    grid: str = "eccentric",
    noise_sigma: float = 0.0,
    seed: int = 1627,
) -> Dataset:
    """Sample ``r = a(1 - eps^2)/(1 + eps cos(theta))`` plus Gaussian noise.

    ``grid="true"`` spaces theta uniformly over a full turn starting at 0;
    ``grid="eccentric"`` spaces the eccentric anomaly uniformly instead.
    """
    if isinstance(params, EllipseParams):
        a, eps = params.a, params.signed_eps
    else:
        a, eps = params
    if not abs(eps) < 1:
        raise DomainError(f"eccentricity must be < 1, got {eps}")
    if eps < 0 and not isinstance(params, EllipseParams):
        raise DomainError(f"eccentricity must be >= 0, got {eps}")
    if not a > 0:
        raise DomainError(f"semi-major axis must be positive, got {a}")
    if n < 2:
        raise ValueError("need at least 2 samples")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    steps = 2 * np.pi * np.arange(n) / n
    if grid == "true":
        theta = steps
        E = None
    elif grid == "eccentric":
        E = steps
        theta = true_from_eccentric(E, eps)
    else:
        raise ValueError("grid must be 'true' or 'eccentric'")
    r = ellipse_radius(theta, a, eps)
    if noise_sigma > 0:
        r = r + np.random.default_rng(seed).normal(0.0, noise_sigma, size=n)
    return Dataset(
        reduce_angle(theta),
        r,
        provenance="synthetic",
        eccentric_anomaly=None if E is None else reduce_angle(E),
        notes={"a": a, "eps": abs(eps), "grid": grid, "noise_sigma": noise_sigma, "seed": seed},
    )


def default_synthetic() -> Dataset:
    s = DEFAULT_SYNTHETIC
    return generate_synthetic((s["a"], s["eps"]), n=s["n"], grid=s["grid"], noise_sigma=s["noise"], seed=s["seed"])


# --------------------------------------------------------------------------
# Table reconstruction


def reconstruct_rudolphine_rows(a: float = 1.5235, eps: float = 0.0926, n: int = 180) -> list[dict[str, str]]:
    """A Mars correction table built from ellipse geometry.

    Rows follow the historical layout: the eccentric anomaly runs over whole
    degrees from aphelion, the coequated anomaly and the distance are derived
    from it and rounded to the table's precision (arcseconds, five-figure
    distances). The intercolumnium holds the sexagesimal interpolation
    fraction between aphelion and perihelion distance. Not a transcription.
    """
    rows = []
    for deg in range(n):
        E = math.radians(deg)
        theta = math.degrees(math.atan2(math.sqrt(1 - eps * eps) * math.sin(E), math.cos(E) + eps))
        dist = a * (1 + eps * math.cos(E))
        rows.append({
            "anomalia_eccentri": f"{deg} 0 0",
            "intercolumnium": str(int(round(60 * (1 - math.cos(E)) / 2))),
            "anomalia_coaequata": format_dms(theta),
            "intervallu": str(int(round(dist * RAW_DISTANCE_SCALE))),
        })
    return rows


def write_rudolphine_csv(rows: list[dict[str, str]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(RUDOLPHINE_COLUMNS), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def reference_table_path() -> Path:
    """Bundled reconstruction of the Mars table (see ``reconstruct_rudolphine_rows``)."""
    return Path(__file__).parent / "data" / "rudolphine_mars_reconstructed.csv"


def load_reference_table() -> Dataset:
    return load_rudolphine_csv(reference_table_path())


# --------------------------------------------------------------------------
# Features


def featurize(data: Dataset, bias: BiasConfig | bool) -> FeatureMatrix:
    """Observational bias off: one column theta. On: (cos theta, sin theta)."""
    observational = bias if isinstance(bias, bool) else bias.observational
    if observational:
        X = np.column_stack([np.cos(data.theta), np.sin(data.theta)])
        names = ("cos_theta", "sin_theta")
    else:
        X = data.theta[:, None].copy()
        names = ("theta",)
    return FeatureMatrix(names, X, data.r.copy())
