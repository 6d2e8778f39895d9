"""Group comparison protocol: within-group vs cross-group distances per layer.

Two groups of models (one per task, one model per seed) are compared layer by
layer. For each layer the distances among all unordered pairs inside each
group and across all group-A x group-B pairs are collected, summarized by

    delta_d = mean(cross) - (mean(within_a) + mean(within_b)) / 2

and given a percentile-bootstrap interval. A positive delta_d means models
trained on different tasks sit farther apart than seed-to-seed variation.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cca import DEFAULT_VARIANCE_KEEP, cca, mean_cca_distance, svcca
from .errors import BundleError, DegenerateInputError, IllConditionedError, ShapeError
from .linalg import DEFAULT_REL_TOL
from .matrix_io import MatrixBundle, bundle_dirs, load_bundle
from .pwcca import pwcca_distance

METHODS = ("cca", "svcca", "pwcca")
DELTA_D_FORMULA = "mean(cross) - (mean(within_a) + mean(within_b)) / 2"


@dataclass
class ModelGroup:
    label: str
    bundles: list[MatrixBundle]

    def __post_init__(self):
        if len(self.bundles) < 2:
            raise BundleError(f"group {self.label!r} needs at least 2 models, got {len(self.bundles)}")
        names = self.bundles[0].layer_names
        cols = self.bundles[0].cols
        for b in self.bundles[1:]:
            if b.layer_names != names:
                raise BundleError(f"group {self.label!r}: bundle {b.model_id!r} has layers {b.layer_names}, expected {names}")
            if b.cols != cols:
                raise BundleError(f"group {self.label!r}: bundle {b.model_id!r} has {b.cols} probe inputs, expected {cols}")

    @property
    def layer_names(self) -> list[str]:
        return self.bundles[0].layer_names

    @classmethod
    def from_directory(cls, directory, label: str | None = None) -> "ModelGroup":
        """Every subdirectory holding a ``manifest.txt`` is one model, in name order."""
        directory = Path(directory)
        return cls(label or directory.name, [load_bundle(d) for d in bundle_dirs(directory)])


@dataclass
class LayerComparison:
    layer_name: str
    within_a: list[float]
    within_b: list[float]
    cross: list[float]
    delta_d: float
    ci_low: float
    ci_high: float

    def summary_row(self) -> list:
        return [
            self.layer_name,
            _mean(self.within_a),
            _mean(self.within_b),
            _mean(self.cross),
            self.delta_d,
            self.ci_low,
            self.ci_high,
        ]


@dataclass
class ComparisonReport:
    group_a_label: str
    group_b_label: str
    method: str
    layers: list[LayerComparison]
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "groups": {"a": self.group_a_label, "b": self.group_b_label},
            "config": self.config,
            "layers": [
                {
                    "layer": lc.layer_name,
                    "within_a": lc.within_a,
                    "within_b": lc.within_b,
                    "cross": lc.cross,
                    "delta_d": lc.delta_d,
                    "ci": [lc.ci_low, lc.ci_high],
                }
                for lc in self.layers
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "mean_within_a", "mean_within_b", "mean_cross", "delta_d", "ci_low", "ci_high"])
        for lc in self.layers:
            writer.writerow([v if isinstance(v, str) else repr(float(v)) for v in lc.summary_row()])
        return buf.getvalue()

    def write(self, out_dir, stem: str = "report") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        jpath, cpath = out_dir / f"{stem}.json", out_dir / f"{stem}.csv"
        jpath.write_text(self.to_json())
        cpath.write_text(self.to_csv())
        return jpath, cpath

    @classmethod
    def from_dict(cls, d: dict) -> "ComparisonReport":
        layers = [
            LayerComparison(
                rec["layer"], rec["within_a"], rec["within_b"], rec["cross"],
                rec["delta_d"], rec["ci"][0], rec["ci"][1],
            )
            for rec in d["layers"]
        ]
        return cls(d["groups"]["a"], d["groups"]["b"], d["method"], layers, d["config"])


REPORT_SCHEMA = {
    "type": "object",
    "required": ["method", "groups", "config", "layers"],
    "properties": {
        "method": {"enum": list(METHODS)},
        "groups": {
            "type": "object",
            "required": ["a", "b"],
            "properties": {"a": {"type": "string"}, "b": {"type": "string"}},
        },
        "config": {"type": "object"},
        "layers": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["layer", "within_a", "within_b", "cross", "delta_d", "ci"],
                "properties": {
                    "layer": {"type": "string"},
                    "within_a": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0, "maximum": 1}},
                    "within_b": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0, "maximum": 1}},
                    "cross": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0, "maximum": 1}},
                    "delta_d": {"type": "number"},
                    "ci": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "number"}},
                },
            },
        },
    },
}


def _mean(values: Sequence[float]) -> float:
    # fsum keeps the mean independent of list order
    return math.fsum(values) / len(values)


def delta_d(within_a: Sequence[float], within_b: Sequence[float], cross: Sequence[float]) -> float:
    if not len(within_a) or not len(within_b) or not len(cross):
        raise DegenerateInputError("delta_d needs non-empty within_a, within_b and cross lists")
    return _mean(cross) - (_mean(within_a) + _mean(within_b)) / 2.0


def bootstrap_ci(
    samples_a: Sequence[float],
    samples_b: Sequence[float],
    samples_cross: Sequence[float],
    n_resamples: int = 1000,
    level: float = 0.95,
    seed: int | np.random.SeedSequence = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval for :func:`delta_d`.

    Each resample draws every list with replacement at its own size.
    """
    if n_resamples < 100:
        raise ValueError(f"n_resamples must be >= 100, got {n_resamples}")
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    a, b, c = (np.asarray(s, dtype=np.float64) for s in (samples_a, samples_b, samples_cross))
    delta_d(a, b, c)
    rng = np.random.default_rng(seed)
    ia = rng.integers(0, len(a), size=(n_resamples, len(a)))
    ib = rng.integers(0, len(b), size=(n_resamples, len(b)))
    ic = rng.integers(0, len(c), size=(n_resamples, len(c)))
    stats = np.array([delta_d(a[ia[k]], b[ib[k]], c[ic[k]]) for k in range(n_resamples)])
    tail = (1.0 - level) / 2.0
    low, high = np.quantile(stats, [tail, 1.0 - tail])
    return float(low), float(high)


def pair_distance(x, y, method: str = "pwcca", mode: str = "symmetric",
                  rel_tol: float = DEFAULT_REL_TOL, variance_keep: float = DEFAULT_VARIANCE_KEEP,
                  allow_ill_conditioned: bool = False) -> float:
    """Scalar distance in [0, 1] between two activation matrices."""
    if method == "pwcca":
        d = pwcca_distance(x, y, mode=mode, rel_tol=rel_tol)
        r, value = d.cca, d.value
    elif method == "cca":
        r = cca(x, y, rel_tol)
        value = mean_cca_distance(r)
    elif method == "svcca":
        r = svcca(x, y, variance_keep, rel_tol)
        value = mean_cca_distance(r)
    else:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    if r.warning is not None and not allow_ill_conditioned:
        raise IllConditionedError(str(r.warning))
    return value


def compare_groups(
    a: ModelGroup,
    b: ModelGroup,
    method: str = "pwcca",
    *,
    mode: str = "symmetric",
    rel_tol: float = DEFAULT_REL_TOL,
    variance_keep: float = DEFAULT_VARIANCE_KEEP,
    n_resamples: int = 1000,
    level: float = 0.95,
    seed: int,
    allow_ill_conditioned: bool = False,
    jobs: int = 1,
    extra_config: dict | None = None,
) -> ComparisonReport:
    """Run the within/cross protocol over every layer shared by the two groups."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    if a.layer_names != b.layer_names:
        raise ShapeError(f"groups disagree on layers: {a.layer_names} vs {b.layer_names}")
    if a.bundles[0].cols != b.bundles[0].cols:
        raise ShapeError("groups were probed on different input counts")

    within_a_pairs = list(itertools.combinations(range(len(a.bundles)), 2))
    within_b_pairs = list(itertools.combinations(range(len(b.bundles)), 2))
    cross_pairs = list(itertools.product(range(len(a.bundles)), range(len(b.bundles))))

    def dist(job):
        layer, (gx, i), (gy, j) = job
        return pair_distance(
            gx.bundles[i][layer].data, gy.bundles[j][layer].data, method, mode,
            rel_tol, variance_keep, allow_ill_conditioned,
        )

    layer_seeds = np.random.SeedSequence(seed).spawn(len(a.layer_names))
    layers = []
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        for layer, lseed in zip(a.layer_names, layer_seeds):
            jobs_a = [(layer, (a, i), (a, j)) for i, j in within_a_pairs]
            jobs_b = [(layer, (b, i), (b, j)) for i, j in within_b_pairs]
            jobs_c = [(layer, (a, i), (b, j)) for i, j in cross_pairs]
            # pool.map yields in submission order, so results stay keyed by pair index
            wa = list(pool.map(dist, jobs_a))
            wb = list(pool.map(dist, jobs_b))
            cr = list(pool.map(dist, jobs_c))
            dd = delta_d(wa, wb, cr)
            lo, hi = bootstrap_ci(wa, wb, cr, n_resamples, level, lseed)
            layers.append(LayerComparison(layer, wa, wb, cr, dd, lo, hi))

    config = {
        "mode": mode if method == "pwcca" else None,
        "rel_tol": rel_tol,
        "variance_keep": variance_keep if method == "svcca" else None,
        "n_resamples": n_resamples,
        "level": level,
        "seed": seed,
        "allow_ill_conditioned": allow_ill_conditioned,
        "bootstrap_unit": "pairwise distance",
        "delta_d": DELTA_D_FORMULA,
        "delta_d_note": "within means are added, not subtracted; a difference of within means is not a baseline",
        "models_a": [bd.model_id for bd in a.bundles],
        "models_b": [bd.model_id for bd in b.bundles],
    }
    if extra_config:
        config.update(extra_config)
    return ComparisonReport(a.label, b.label, method, layers, config)
