"""Command-line front end.

Reads a JSON configuration, applies flag overrides, validates everything
before computing, and writes one JSON document (or a CSV table) to stdout.
Exit status: 0 on success, 2 on configuration or validation errors, 3 when a
resource budget would be exceeded, 1 on solver failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, List, Optional

import numpy as np

from . import __version__
from .errors import DimensionError, ResourceBudgetError, SolverError, ValidationError
from .exponents import (GameSpec, bayes_exponent, indistinguishability, limit_exponents,
                        np_fn_exponent, np_fn_exponent_metric_form, region_sweep)
from .game_sim import (bayes_defense, defense_for, exact_error_probs, monte_carlo_simulate,
                       np_defense_prob)
from .gendiv import gen_divergence
from .simplex import DistortionMatrix, Pmf, kl_divergence, make_distortion
from .transport import emd
from .typeclasses import all_compositions, as_rational, sample_attack_output, type_class_size

COMMANDS = ("kl", "emd", "gendiv", "np-exponent", "np-exponent-metric", "bayes-exponent",
            "limits", "region", "region-sweep", "defense-eval", "exact-error", "simulate",
            "attack-sample")

CONFIG_KEYS = {"game", "p0", "p1", "distortion", "delta0", "delta1", "lambda", "a", "n",
               "n_grid", "trials", "seed", "grid_step", "output"}
DISTORTION_KEYS = {"kind", "p", "values"}


def _number(v, name: str) -> Fraction:
    if isinstance(v, bool) or not isinstance(v, (int, float, str)):
        raise ValidationError(f"{name} must be a number or a decimal string, got {v!r}")
    try:
        return as_rational(v)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValidationError(f"{name}: cannot parse {v!r}") from exc


def _integer(v, name: str) -> int:
    if isinstance(v, bool):
        raise ValidationError(f"{name} must be an integer")
    r = _number(v, name)
    if r.denominator != 1:
        raise ValidationError(f"{name} must be an integer, got {v!r}")
    return int(r)


def _vector(v, name: str) -> Pmf:
    if not isinstance(v, list) or not v:
        raise ValidationError(f"{name} must be a nonempty list")
    return Pmf(np.array([float(_number(x, f"{name}[{i}]")) for i, x in enumerate(v)]))


@dataclass
class RunConfig:
    game: Optional[str] = None
    p0: Optional[Pmf] = None
    p1: Optional[Pmf] = None
    distortion: Optional[DistortionMatrix] = None
    delta0: Fraction = Fraction(0)
    delta1: Fraction = Fraction(0)
    lam: Optional[float] = None
    a: Optional[float] = None
    n: Optional[int] = None
    n_grid: Optional[List[int]] = None
    trials: Optional[int] = None
    seed: int = 0
    grid_step: Optional[float] = None
    output: str = "json"
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ValidationError("config must be a JSON object")
        unknown = set(raw) - CONFIG_KEYS
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(raw=raw)
        if raw.get("game") is not None:
            if raw["game"] not in ("np", "bayes"):
                raise ValidationError("game must be 'np' or 'bayes'")
            cfg.game = raw["game"]
        for name in ("p0", "p1"):
            if raw.get(name) is not None:
                setattr(cfg, name, _vector(raw[name], name))
        for name in ("delta0", "delta1"):
            if raw.get(name) is not None:
                v = _number(raw[name], name)
                if v < 0:
                    raise ValidationError(f"{name} must be >= 0")
                setattr(cfg, name, v)
        if raw.get("lambda") is not None:
            cfg.lam = float(_number(raw["lambda"], "lambda"))
            if cfg.lam <= 0:
                raise ValidationError("lambda must be > 0")
        if raw.get("a") is not None:
            cfg.a = float(_number(raw["a"], "a"))
            if cfg.a < 0:
                raise ValidationError("a must be >= 0")
        for name in ("n", "trials", "seed"):
            if raw.get(name) is not None:
                setattr(cfg, name, _integer(raw[name], name))
        if cfg.n is not None and cfg.n < 1:
            raise ValidationError("n must be >= 1")
        if raw.get("n_grid") is not None:
            if not isinstance(raw["n_grid"], list) or not raw["n_grid"]:
                raise ValidationError("n_grid must be a nonempty list")
            cfg.n_grid = [_integer(v, "n_grid") for v in raw["n_grid"]]
        if raw.get("grid_step") is not None:
            cfg.grid_step = float(_number(raw["grid_step"], "grid_step"))
        if raw.get("output") is not None:
            if raw["output"] not in ("json", "csv"):
                raise ValidationError("output must be 'json' or 'csv'")
            cfg.output = raw["output"]
        if raw.get("distortion") is not None:
            cfg.distortion = cls._distortion(raw["distortion"], cfg.p0)
        return cfg

    @staticmethod
    def _distortion(spec, p0: Optional[Pmf]) -> DistortionMatrix:
        if not isinstance(spec, dict):
            raise ValidationError("distortion must be an object")
        unknown = set(spec) - DISTORTION_KEYS
        if unknown:
            raise ValidationError(f"unknown distortion keys: {sorted(unknown)}")
        kind = spec.get("kind")
        if kind == "matrix":
            values = spec.get("values")
            if not isinstance(values, list) or not all(isinstance(r, list) for r in values):
                raise ValidationError("distortion.values must be a matrix (list of lists)")
            mat = [[float(_number(x, "distortion.values")) for x in row] for row in values]
            return make_distortion("explicit", len(mat), matrix=mat)
        if kind not in ("hamming", "lp_power"):
            raise ValidationError("distortion.kind must be hamming, lp_power or matrix")
        if p0 is None:
            raise ValidationError("p0 is needed to size the distortion matrix")
        k = p0.alphabet_size
        if kind == "hamming":
            return make_distortion("hamming", k)
        if spec.get("p") is None:
            raise ValidationError("lp_power distortion needs p")
        return make_distortion("lp_power", k, p=float(_number(spec["p"], "distortion.p")))

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            label = {"lam": "lambda"}
            raise ValidationError("missing config fields: "
                                  + ", ".join(label.get(m, m) for m in missing))

    def spec(self, with_lam: bool = False, with_a: bool = False) -> GameSpec:
        self.require("p0", "p1", "distortion")
        if with_lam:
            self.require("lam")
        if with_a:
            self.require("a")
        return GameSpec(self.p0, self.p1, self.distortion, self.delta0, self.delta1,
                        lam=self.lam if with_lam else None, a=self.a if with_a else None)


# -- serialization ------------------------------------------------------------------------

def _plain(obj: Any) -> Any:
    """Convert results to JSON-ready builtins; floats stay floats."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, Fraction)):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Pmf):
        return _plain(obj.probs)
    if hasattr(obj, "joint"):
        return _plain(obj.joint)
    return obj


def _float_text(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def to_json(obj: Any, indent: int = 2, level: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {to_json(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(to_json(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return _float_text(obj)
    if isinstance(obj, int):
        return str(obj)
    return json.dumps(obj)


def _csv_cell(v: Any) -> str:
    if isinstance(v, float):
        return _float_text(v).strip('"')
    if isinstance(v, list):
        return " ".join(_csv_cell(x) for x in v)
    return str(v)


def _flatten(prefix: str, obj: Any, out: dict) -> None:
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    else:
        out[prefix] = obj


def to_csv(result: Any) -> str:
    """Tables become one row per record; anything else becomes key,value rows."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    rows = result.get("rows") if isinstance(result, dict) else None
    if isinstance(rows, list) and rows and isinstance(rows[0], dict):
        flat = []
        for r in rows:
            f: dict = {}
            _flatten("", r, f)
            flat.append(f)
        header = list(flat[0])
        writer.writerow(header)
        for f in flat:
            writer.writerow([_csv_cell(f.get(h)) for h in header])
    else:
        flat = {}
        _flatten("", result, flat)
        writer.writerow(["key", "value"])
        for k, v in flat.items():
            writer.writerow([k, _csv_cell(v)])
    return buf.getvalue()


# -- commands --------------------------------------------------------------------------

def _exponent_payload(res) -> dict:
    return {"value": res.value, "argmin_py": res.argmin_py,
            "witness_couplings": [c for c in res.witness_couplings]}


def cmd_kl(cfg: RunConfig, args) -> tuple:
    cfg.require("p0", "p1")
    return {"value": kl_divergence(cfg.p0, cfg.p1)}, {}


def cmd_emd(cfg: RunConfig, args) -> tuple:
    cfg.require("p0", "p1", "distortion")
    res = emd(cfg.p0, cfg.p1, cfg.distortion)
    return {"cost": res.cost, "plan": res.plan}, res.diagnostics


def cmd_gendiv(cfg: RunConfig, args) -> tuple:
    cfg.require("p0", "p1", "distortion")
    res = gen_divergence(cfg.p1, cfg.p0, cfg.distortion, float(cfg.delta0))
    return {"value": res.value, "argmin_px": res.argmin_px, "coupling": res.coupling}, \
        res.diagnostics


def cmd_np_exponent(cfg: RunConfig, args) -> tuple:
    res = np_fn_exponent(cfg.spec(with_lam=True))
    return _exponent_payload(res), res.diagnostics


def cmd_np_exponent_metric(cfg: RunConfig, args) -> tuple:
    res = np_fn_exponent_metric_form(cfg.spec(with_lam=True))
    return _exponent_payload(res), res.diagnostics


def cmd_bayes_exponent(cfg: RunConfig, args) -> tuple:
    res = bayes_exponent(cfg.spec(with_a=True))
    payload = {"payoff_exponent": _exponent_payload(res.payoff_exponent),
               "fn_exponent": res.fn_exponent, "fp_exponent": res.fp_exponent}
    return payload, res.payoff_exponent.diagnostics


def cmd_limits(cfg: RunConfig, args) -> tuple:
    lim = limit_exponents(cfg.spec())
    return {"np_limit": lim["np_limit"], "bayes_limit": lim["bayes_limit"]}, \
        {"np": lim["np_result"].diagnostics, "bayes": lim["bayes_result"].diagnostics}


def cmd_region(cfg: RunConfig, args) -> tuple:
    cfg.require("p0", "p1", "distortion")
    res = indistinguishability(cfg.p0, cfg.p1, cfg.distortion, float(cfg.delta0),
                               float(cfg.delta1))
    return {"member": res.member, "inner_value": res.inner_value, "alpha": res.alpha}, \
        res.diagnostics


def cmd_region_sweep(cfg: RunConfig, args) -> tuple:
    cfg.require("p0", "distortion", "grid_step")
    rows = region_sweep(cfg.p0, cfg.distortion, float(cfg.delta0), float(cfg.delta1),
                        cfg.grid_step, threads=args.threads)
    return {"rows": rows}, {"points": len(rows)}


def cmd_defense_eval(cfg: RunConfig, args) -> tuple:
    cfg.require("game", "n")
    spec = cfg.spec(with_lam=cfg.game == "np", with_a=cfg.game == "bayes")
    rows = []
    for t in all_compositions(spec.k, cfg.n):
        row = {"y_type": list(t.counts), "class_size": type_class_size(t)}
        if cfg.game == "np":
            ev = np_defense_prob(t, spec.p0, spec.d, spec.delta0, spec.lam)
            row.update(accept_h1_prob=ev.accept_h1_prob, score=ev.score)
        else:
            sl = bayes_defense(t, spec, mode="single_letter")
            ex = bayes_defense(t, spec, mode="exact")
            row.update(single_letter_decision=sl.accept_h1_prob, single_letter_score=sl.score,
                       exact_decision=ex.accept_h1_prob, exact_score=ex.score)
        rows.append(row)
    return {"rows": rows}, {"types": len(rows)}


def cmd_exact_error(cfg: RunConfig, args) -> tuple:
    cfg.require("game", "n")
    spec = cfg.spec(with_lam=cfg.game == "np", with_a=cfg.game == "bayes")
    if cfg.game == "np":
        return {"np": exact_error_probs(defense_for(spec, "np"), spec, cfg.n)}, {}
    out = {mode: exact_error_probs(defense_for(spec, "bayes_" + mode), spec, cfg.n)
           for mode in ("single_letter", "exact")}
    for v in out.values():
        v["payoff"] = v["fn"] + math.exp(float(spec.a) * cfg.n) * v["fp"]
    return out, {}


def cmd_simulate(cfg: RunConfig, args) -> tuple:
    cfg.require("game", "n_grid", "trials")
    spec = cfg.spec(with_lam=cfg.game == "np", with_a=cfg.game == "bayes")
    mode = "np" if cfg.game == "np" else "bayes_single_letter"
    rep = monte_carlo_simulate(spec, mode, cfg.n_grid, cfg.trials, cfg.seed,
                               threads=args.threads)
    return {"rows": rep.per_n, "fitted": rep.fitted, "seed": rep.seed}, rep.diagnostics


def cmd_attack_sample(cfg: RunConfig, args) -> tuple:
    cfg.require("p0", "distortion", "n")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    x = rng.choice(cfg.p0.alphabet_size, size=cfg.n, p=cfg.p0.probs)
    y = sample_attack_output(x, cfg.distortion, cfg.delta0, rng)
    dist = float(np.sum(cfg.distortion.values[x, y]))
    return {"x": x.tolist(), "y": y.tolist(), "distortion": dist}, {"seed": cfg.seed}


HANDLERS = {
    "kl": cmd_kl, "emd": cmd_emd, "gendiv": cmd_gendiv, "np-exponent": cmd_np_exponent,
    "np-exponent-metric": cmd_np_exponent_metric, "bayes-exponent": cmd_bayes_exponent,
    "limits": cmd_limits, "region": cmd_region, "region-sweep": cmd_region_sweep,
    "defense-eval": cmd_defense_eval, "exact-error": cmd_exact_error,
    "simulate": cmd_simulate, "attack-sample": cmd_attack_sample,
}

HELP = {
    "kl": "KL divergence D(p0 || p1) in nats",
    "emd": "earth mover distance from p0 to p1",
    "gendiv": "generalized divergence of p1 (attacked) from p0 at level delta0",
    "np-exponent": "Neyman-Pearson false-negative exponent",
    "np-exponent-metric": "metric-form Neyman-Pearson exponent",
    "bayes-exponent": "Bayesian payoff exponent and its components",
    "limits": "limiting exponents (lambda -> 0, a -> 0)",
    "region": "whether p1 is indistinguishable from p0",
    "region-sweep": "indistinguishability and limits over a simplex lattice",
    "defense-eval": "defense decisions for every observed type of length n",
    "exact-error": "exact FP/FN probabilities at length n",
    "simulate": "Monte Carlo FP/FN estimates and fitted exponents",
    "attack-sample": "draw x from p0 and attack it at level delta0",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adgame", description="Adversarial hypothesis "
                                     "testing games: exponents, regions and simulation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--output", choices=("json", "csv"))
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed")
        p.add_argument("--lambda", dest="lam")
        p.add_argument("--a")
        p.add_argument("--n")
        p.add_argument("--trials")
        p.add_argument("--grid-step", dest="grid_step")
    return parser


def _load_config(args) -> dict:
    raw: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ValidationError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ValidationError("config must be a JSON object")
    overrides = {"seed": args.seed, "lambda": args.lam, "a": args.a, "n": args.n,
                 "trials": args.trials, "grid_step": args.grid_step, "output": args.output}
    for key, val in overrides.items():
        if val is not None:
            raw[key] = val
    return raw


def run_cli(argv: Optional[List[str]] = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        if args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        raw = _load_config(args)
        cfg = RunConfig.from_dict(raw)
        result, diagnostics = HANDLERS[args.command](cfg, args)
    except (ValidationError, DimensionError) as exc:
        print(f"error: {exc}", file=stderr)
        return 2
    except ResourceBudgetError as exc:
        print(f"resource budget exceeded: {exc}", file=stderr)
        return 3
    except SolverError as exc:
        print(f"solver failure: {exc}", file=stderr)
        return 1
    doc = {"command": args.command, "config_echo": raw, "result": _plain(result),
           "diagnostics": _plain(diagnostics), "version": __version__}
    text = to_csv(doc["result"]) if cfg.output == "csv" else to_json(doc) + "\n"
    stdout.write(text)
    return 0


def main() -> None:
    sys.exit(run_cli())
