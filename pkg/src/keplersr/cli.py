"""Command-line front end: ingest, fit-ellipse, run, eval."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from keplersr import __version__
from keplersr.bias import BiasConfig
from keplersr.dataset import (
    DEFAULT_SYNTHETIC,
    RAW_DISTANCE_THRESHOLD,
    Dataset,
    featurize,
    generate_synthetic,
    load_reference_table,
    load_rudolphine_csv,
    write_normalized_csv,
)
from keplersr.decompose import as_scored, recurse_split, search_solver, test_separability
from keplersr.errors import (
    BudgetExhausted,
    ConvergenceError,
    DomainError,
    InsufficientData,
    KeplerSRError,
    ParseError,
    RangeError,
    SchemaError,
    SurrogateFailure,
)
from keplersr.expr import evaluate, parse, to_text
from keplersr.fitters import EllipseParams, fit_ellipse
from keplersr.search import (
    SearchBudget,
    conic_parameters,
    dl_loss,
    matches_orbit,
    run_search,
    write_audit,
)

SCHEMA = 1
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_EMPTY = 0, 2, 3, 4
TABLE_SIG = 6

_CONFIG_KEYS = {
    "data", "synthetic", "max_bits", "max_candidates", "max_seconds", "out_dir",
    "loss", "seed", "workers", "experiment", "custom", "no_decompose",
}
_DEFAULTS = {
    "max_bits": 40.0,
    "max_candidates": 200_000,
    "max_seconds": 600.0,
    "out_dir": "keplersr-out",
    "loss": "dl",
    "seed": 0,
    "workers": 1,
    "no_decompose": False,
}


# --------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment run. ``experiment`` is None for custom bias combinations."""

    experiment: int | None
    bias: BiasConfig
    budget: SearchBudget = field(default_factory=SearchBudget)
    data_path: str | None = None
    synthetic: dict | None = None
    seed: int = 0
    out_dir: str = _DEFAULTS["out_dir"]
    loss: str = "dl"
    workers: int = 1
    decompose: bool = True

    def __post_init__(self):
        if self.experiment is not None and BiasConfig.for_experiment(self.experiment) != self.bias:
            raise ValueError(f"experiment {self.experiment} has a fixed bias; use a custom run instead")

    @classmethod
    def for_experiment(cls, experiment: int, **kw) -> ExperimentConfig:
        return cls(experiment, BiasConfig.for_experiment(experiment), **kw)

    def echo(self) -> dict:
        """Run-relevant settings; the output directory is left out so reports compare equal."""
        return {
            "experiment": self.experiment,
            "bias": asdict(self.bias),
            "budget": asdict(self.budget),
            "data": self.data_path,
            "synthetic": self.synthetic,
            "seed": self.seed,
            "loss": self.loss,
            "workers": self.workers,
            "decompose": self.decompose,
        }


def parse_synthetic(spec: str | dict | None) -> dict:
    """``a=..,eps=..,n=..,noise=..,seed=..,grid=..`` merged over the defaults."""
    out = dict(DEFAULT_SYNTHETIC)
    if spec is None or spec == "" or spec == "default":
        return out
    if isinstance(spec, dict):
        items = spec.items()
    else:
        items = []
        for part in spec.split(","):
            if not part.strip():
                continue
            if "=" not in part:
                raise ParseError(f"expected key=value in synthetic spec, got {part!r}")
            k, v = part.split("=", 1)
            items.append((k.strip(), v.strip()))
    for k, v in items:
        if k not in out:
            raise ParseError(f"unknown synthetic key {k!r}")
        try:
            if k in ("n", "seed"):
                out[k] = int(v)
            elif k == "grid":
                out[k] = str(v)
            else:
                out[k] = float(v)
        except ValueError:
            raise ParseError(f"bad value for {k}: {v!r}") from None
    return out


def synthetic_dataset(params: dict) -> Dataset:
    return generate_synthetic(
        (params["a"], params["eps"]), n=params["n"], grid=params["grid"],
        noise_sigma=params["noise"], seed=params["seed"],
    )


def parse_custom(spec: str) -> BiasConfig:
    """``none`` or a comma list drawn from ``observational``, ``inductive``."""
    names = {p.strip().lower() for p in spec.split(",") if p.strip()}
    names.discard("none")
    unknown = names - {"observational", "inductive", "obs", "ind"}
    if unknown:
        raise ParseError(f"unknown bias name(s): {', '.join(sorted(unknown))}")
    return BiasConfig(
        observational=bool(names & {"observational", "obs"}),
        inductive=bool(names & {"inductive", "ind"}),
    )


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(cfg, dict):
        raise ParseError("config must be a JSON object")
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise ParseError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return cfg


def _settings(args: argparse.Namespace) -> dict:
    """Flags over config file over built-in defaults."""
    merged = dict(_DEFAULTS)
    merged.update(load_config_file(getattr(args, "config", None)))
    for key in _CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            merged[key] = val
    return merged


def _optional_limit(v):
    if v is None:
        return None
    v = float(v)
    return None if v <= 0 else v


def config_from_settings(s: dict) -> ExperimentConfig:
    if s.get("custom") is not None:
        bias, experiment = parse_custom(s["custom"]), None
    elif s.get("experiment") is not None:
        experiment = int(s["experiment"])
        bias = BiasConfig.for_experiment(experiment)
    else:
        raise ParseError("run needs --experiment or --custom")
    cand = _optional_limit(s.get("max_candidates"))
    budget = SearchBudget(
        max_bits=_optional_limit(s.get("max_bits")),
        max_candidates=None if cand is None else int(cand),
        max_seconds=_optional_limit(s.get("max_seconds")),
    )
    synthetic = parse_synthetic(s["synthetic"]) if s.get("synthetic") is not None else None
    return ExperimentConfig(
        experiment, bias, budget,
        data_path=s.get("data"), synthetic=synthetic, seed=int(s.get("seed", 0)),
        out_dir=str(s.get("out_dir")), loss=s.get("loss", "dl"),
        workers=int(s.get("workers", 1)), decompose=not s.get("no_decompose", False),
    )


def load_data(data_path: str | None, synthetic: dict | None, **csv_kw) -> Dataset:
    """CSV file, synthetic orbit, or the bundled reference table when neither is given."""
    if data_path is not None and synthetic is not None:
        raise ParseError("give either --data or --synthetic, not both")
    if synthetic is not None:
        return synthetic_dataset(synthetic)
    if data_path is not None:
        return load_rudolphine_csv(data_path, **csv_kw)
    return load_reference_table()


# --------------------------------------------------------------------------
# Reports


def _num(v: float):
    return float(v) if math.isfinite(v) else None


def _sig(v: float | None, sig: int = TABLE_SIG) -> str:
    if v is None or not math.isfinite(v):
        return "inf"
    return f"{v:.{sig}g}"


@dataclass
class ExperimentReport:
    config: dict
    data: dict
    rows: list[dict]
    status: str
    deterministic: bool
    n_candidates: int
    n_scored: int
    ellipse: dict | None
    decomposition: dict | None
    runtime_seconds: float = 0.0

    @property
    def n_matches(self) -> int:
        return sum(1 for r in self.rows if r["structural_match"])

    def to_dict(self) -> dict:
        """Serializable form. Wall time lives in the sidecar, not here."""
        return {
            "schema": SCHEMA,
            "version": __version__,
            "config": self.config,
            "data": self.data,
            "search": {
                "status": self.status,
                "deterministic": self.deterministic,
                "n_candidates": self.n_candidates,
                "n_scored": self.n_scored,
            },
            "ellipse_fit": self.ellipse,
            "decomposition": self.decomposition,
            "pareto": self.rows,
            "n_structural_matches": self.n_matches,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        """Text table in front order, constants at six significant digits."""
        title = f"Experiment {self.config['experiment']}" if self.config["experiment"] else "Custom run"
        lines = [
            f"{title}: {len(self.rows)} equations on the Pareto front, "
            f"{self.n_candidates} candidates, status {self.status}",
            "",
            f"{'Complexity':>10}  {'MSE':>12}  {'DL':>10}  {'Match':>5}  Equation",
        ]
        for r in self.rows:
            lines.append(
                f"{r['bits']:10.2f}  {_sig(r['mse']):>12}  {_sig(r['dl']):>10}  "
                f"{'yes' if r['structural_match'] else '':>5}  {r['equation_short']}"
            )
        return "\n".join(lines) + "\n"


def _dataset_summary(data: Dataset) -> dict:
    lo, hi = data.theta_span_deg
    return {
        "provenance": data.provenance,
        "n": len(data),
        "theta_span_deg": [lo, hi],
        "notes": {k: v for k, v in sorted(data.notes.items())},
    }


def _ellipse_dict(p: EllipseParams) -> dict:
    return {
        "a": p.a,
        "eps": p.eps,
        "orientation": p.orientation,
        "semi_latus_rectum": p.semi_latus_rectum,
        "mse": p.mse,
        "n_iterations": p.n_iterations,
    }


def cmd_eval(equation: str, data: Dataset, observational: bool = False) -> dict:
    """mse and dl of a fixed equation; every literal keeps its written value."""
    expr, consts = parse(equation)
    fm = featurize(data, observational)
    with np.errstate(all="ignore"):
        pred = evaluate(expr, consts, fm.X)
        mse = float(np.mean((pred - fm.y) ** 2)) if np.all(np.isfinite(pred)) else math.inf
    return {"equation": to_text(expr, consts), "mse": mse, "dl": dl_loss(pred, fm.y)}


def cmd_fit_ellipse(data: Dataset) -> EllipseParams:
    return fit_ellipse(data.theta, data.r)


def cmd_ingest(csv_path: str, out_path: str, **csv_kw) -> Dataset:
    data = load_rudolphine_csv(csv_path, **csv_kw)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    write_normalized_csv(data, out_path)
    return data


def cmd_run(config: ExperimentConfig, data: Dataset | None = None, write: bool = True) -> ExperimentReport:
    """featurize, test separability, search, and write the report files."""
    t0 = time.perf_counter()
    started = _dt.datetime.now(_dt.timezone.utc)
    if data is None:
        data = load_data(config.data_path, config.synthetic)
    fm = featurize(data, config.bias)

    try:
        ellipse = _ellipse_dict(fit_ellipse(data.theta, data.r))
    except ConvergenceError as exc:
        ellipse = {"error": str(exc)}

    report_sep = None
    composed = None
    if config.decompose and fm.arity == 2:
        try:
            sep = test_separability(fm)
        except InsufficientData as exc:
            report_sep = {"kind": "none", "reason": str(exc)}
        else:
            report_sep = sep.to_dict()
            if sep.kind != "none":
                solver = search_solver(config.budget, config.bias.inductive, seed=config.seed)
                split = recurse_split(sep, solver, fm)
                report_sep["composed"] = to_text(split.expr, split.joint_constants)
                composed = split

    result = run_search(
        fm, config.bias, config.budget, loss_key=config.loss, seed=config.seed, workers=config.workers,
    )
    if composed is not None:
        result.front.insert(as_scored(composed, fm, result.grammar))

    rows = []
    for s in result.front:
        match = matches_orbit(s.expr, config.bias.observational)
        conic = conic_parameters(s.expr, s.constants, config.bias.observational) if match else None
        rows.append({
            "equation": to_text(s.expr, s.constants),
            "equation_short": to_text(s.expr, s.constants, sig=TABLE_SIG),
            "bits": s.complexity,
            "mse": _num(s.mse),
            "dl": _num(s.dl),
            "structural_match": match,
            "conic": None if conic is None else {"semi_latus_rectum": conic[0], "eps": conic[1]},
        })
    report = ExperimentReport(
        config=config.echo(),
        data=_dataset_summary(data),
        rows=rows,
        status=result.status,
        deterministic=result.deterministic,
        n_candidates=result.n_candidates,
        n_scored=result.n_scored,
        ellipse=ellipse,
        decomposition=report_sep,
        runtime_seconds=time.perf_counter() - t0,
    )
    if write:
        _write_outputs(config, report, data, fm, result)
        sidecar = {
            "started": started.isoformat(),
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "wall_seconds": report.runtime_seconds,
            "search_seconds": result.elapsed,
        }
        (Path(config.out_dir) / "report.timing.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return report


def _write_outputs(config, report, data, fm, result) -> None:
    out = Path(config.out_dir)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "pareto.txt").write_text(report.table(), encoding="utf-8")
    with (out / "audit.jsonl").open("w", encoding="utf-8") as fh:
        write_audit(result.audit, fh)
    order = np.argsort(data.theta, kind="stable")
    for i, s in enumerate(result.front):
        with np.errstate(all="ignore"):
            pred = evaluate(s.expr, s.constants, fm.X)
        with (out / "plots" / f"eq_{i:02d}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta", "r_true", "r_pred"])
            for j in order:
                w.writerow([repr(float(data.theta[j])), repr(float(data.r[j])), repr(float(pred[j]))])


# --------------------------------------------------------------------------
# argparse wiring


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="Rudolphine-style or normalized CSV (default: bundled reference table)")
    p.add_argument("--synthetic", nargs="?", const="default",
                   help="synthetic orbit, e.g. a=1.5237,eps=0.0934,n=180,noise=0,seed=1")
    p.add_argument("--angles-dms", dest="angles_dms", action="store_true", default=None,
                   help="treat angle columns as degrees-minutes-seconds")
    p.add_argument("--angles-decimal", dest="angles_dms", action="store_false",
                   help="treat angle columns as decimal degrees")
    p.add_argument("--distance-threshold", type=float, default=RAW_DISTANCE_THRESHOLD,
                   help="median distance above which raw E+05 values are rescaled")
    p.add_argument("--rescale", dest="rescale", action="store_true", default=None,
                   help="always divide distances by 1e5")
    p.add_argument("--no-rescale", dest="rescale", action="store_false", help="never rescale distances")
    p.add_argument("--config", help="JSON file with the same keys as the flags; flags win")


def _csv_kw(args) -> dict:
    return {"angles_dms": args.angles_dms, "distance_threshold": args.distance_threshold, "rescale": args.rescale}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="keplersr", description=__doc__)
    parser.add_argument("--version", action="version", version=f"keplersr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize a Rudolphine-style CSV to theta_rad,r")
    p.add_argument("csv", help="input CSV")
    p.add_argument("--output", "-o", help="output path (default: <out-dir>/normalized.csv)")
    p.add_argument("--out-dir", dest="out_dir")
    _add_data_flags(p)

    p = sub.add_parser("fit-ellipse", help="least-squares orbit ellipse (a, eps)")
    _add_data_flags(p)
    p.add_argument("--out-dir", dest="out_dir", help="also write ellipse.json here")

    p = sub.add_parser("run", help="run one experiment")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--experiment", type=int, choices=(1, 2, 3, 4))
    g.add_argument("--custom", help="bias list: none, observational, inductive (comma separated)")
    _add_data_flags(p)
    p.add_argument("--max-bits", dest="max_bits", type=float)
    p.add_argument("--max-candidates", dest="max_candidates", type=float)
    p.add_argument("--max-seconds", dest="max_seconds", type=float)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--loss", choices=("dl", "mse"))
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--no-decompose", dest="no_decompose", action="store_true")

    p = sub.add_parser("eval", help="mse and dl of a fixed equation")
    p.add_argument("equation", help="infix equation in x0 (the true anomaly)")
    p.add_argument("--observational", action="store_true",
                   help="x0, x1 are cos and sin of the anomaly")
    _add_data_flags(p)
    return parser


def _data_from_args(args, settings: dict) -> Dataset:
    synthetic = parse_synthetic(settings["synthetic"]) if settings.get("synthetic") is not None else None
    return load_data(settings.get("data"), synthetic, **_csv_kw(args))


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ParseError, SchemaError, RangeError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, SurrogateFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BudgetExhausted as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (KeplerSRError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def _dispatch(args) -> int:
    settings = _settings(args)
    if args.command == "ingest":
        out = args.output or str(Path(settings["out_dir"]) / "normalized.csv")
        data = cmd_ingest(args.csv, out, **_csv_kw(args))
        lo, hi = data.theta_span_deg
        print(f"wrote {len(data)} rows to {out} (theta {lo:.4f} to {hi:.4f} deg)")
        return EXIT_OK

    if args.command == "fit-ellipse":
        data = _data_from_args(args, settings)
        params = cmd_fit_ellipse(data)
        d = _ellipse_dict(params)
        print(f"a = {params.a:.6f}  eps = {params.eps:.6f}  ({params.orientation})  mse = {params.mse:.3e}")
        print(json.dumps(d, sort_keys=True))
        if args.out_dir:
            Path(args.out_dir).mkdir(parents=True, exist_ok=True)
            (Path(args.out_dir) / "ellipse.json").write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
        return EXIT_OK

    if args.command == "eval":
        data = _data_from_args(args, settings)
        res = cmd_eval(args.equation, data, args.observational)
        print(json.dumps({"equation": res["equation"], "mse": _num(res["mse"]), "dl": _num(res["dl"])}, sort_keys=True))
        return EXIT_NUMERIC if not math.isfinite(res["mse"]) else EXIT_OK

    config = config_from_settings(settings)
    data = _data_from_args(args, settings)
    report = cmd_run(config, data)
    print(report.table(), end="")
    print(f"report written to {Path(config.out_dir) / 'report.json'}")
    if not report.rows:
        return EXIT_EMPTY if report.status != "complete" else EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
