"""Config-driven experiment runner.

A run is a pure function of its :class:`ExperimentConfig`: the report payload
(``payload.json`` plus CSV tables) is byte-identical across reruns, while wall
time and timestamps go to ``metadata.json``. Each run writes into
``<output root>/<config hash>/``.
"""

import copy
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .densities import PresetError, gaussian_parameters, parse_density
from .gaussian import MAX_DIM, GaussianSpace, SamplingError, sample_standard
from .ot import SolverError, check_cyclic_monotone, solve_exact
from .maps import (coupled_clouds, duality_residual, energy_identity_check, gaussian_brenier,
                   potential_of, projection_ladder)
from .rng import derive_seed

KINDS = (
    "talagrand", "gauge", "d1flow", "ladder", "jacobian", "interpolation", "polar", "monotone",
    "entropy-transport", "submartingale", "duality",
)

# what each report checks, embedded in every payload
CITATIONS = {
    "talagrand": "talagrand-transport-entropy-inequality",
    "gauge": "gauge-concentration-and-separation-bounds",
    "d1flow": "d1-bound-by-ou-resolvent-flow",
    "ladder": "projection-ladder-monotone-convergence",
    "jacobian": "gaussian-jacobian-inverse-density-identity",
    "interpolation": "interpolated-map-absolute-continuity",
    "polar": "polar-factorization-and-rotation-minimality",
    "monotone": "cyclic-monotonicity-of-optimal-support",
    "entropy-transport": "entropy-transport-inequality",
    "submartingale": "conditioned-ou-submartingale",
    "duality": "potential-duality-and-energy-identity",
}

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIM, EXIT_SOLVER = 0, 1, 2, 3, 4
OUTPUT_ENV = "WIENER_OT_OUTPUT"
THREADS_ENV = "WIENER_OT_THREADS"


class ConfigError(ValueError):
    exit_code = EXIT_CONFIG


class DimensionError(ValueError):
    exit_code = EXIT_DIM


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    preset: str = "unit"
    dim: int = 8
    n: int = 4096
    seed: int = 0
    solver: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    fixture: str = ""
    output: str = ""

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {"kind", "preset", "dim", "n", "seed", "solver", "params", "fixture", "output"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if d.get("kind") not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {d.get('kind')!r}")
        try:
            cfg = cls(
                kind=d["kind"], preset=str(d.get("preset", "unit")), dim=int(d.get("dim", 8)),
                n=int(d.get("n", 4096)), seed=int(d.get("seed", 0)), solver=dict(d.get("solver", {})),
                params=dict(d.get("params", {})), fixture=str(d.get("fixture", "")),
                output=str(d.get("output", "")),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        if cfg.dim > MAX_DIM:
            raise DimensionError(f"dimension {cfg.dim} exceeds the maximum {MAX_DIM}")
        if cfg.dim < 1 or cfg.n < 1:
            raise ConfigError("dim and n must be positive")
        if cfg.fixture not in ("", "swap-sides"):
            raise ConfigError(f"unknown fixture {cfg.fixture!r}")
        return cfg

    def to_dict(self):
        """Fields that determine the result (the output directory does not)."""
        return {"kind": self.kind, "preset": self.preset, "dim": self.dim, "n": self.n, "seed": self.seed,
                "solver": self.solver, "params": self.params, "fixture": self.fixture}

    def canonical(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def apply_overrides(d, overrides):
    """Apply ``a.b.c=value`` overrides; values are parsed as JSON when possible."""
    d = copy.deepcopy(d)
    for item in overrides:
        path, sep, raw = item.partition("=")
        if not sep or not path:
            raise ConfigError(f"override must look like key.path=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        keys = path.split(".")
        node = d
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot descend into {k!r} in {path!r}")
        node[keys[-1]] = value
    return d


@dataclass(frozen=True)
class RunRecord:
    config: ExperimentConfig
    config_hash: str
    version: str
    wall_time: float
    payload: dict
    verdicts: dict
    tables: dict = field(default_factory=dict)
    exit_code: int = EXIT_OK
    error: str = ""
    directory: str = ""

    @property
    def passed(self):
        return self.exit_code == EXIT_OK

    def payload_bytes(self):
        return (json.dumps(_jsonable(self.payload), sort_keys=True, indent=2) + "\n").encode()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


# ---------------------------------------------------------------- experiment bodies


def _swap(report):
    from .inequalities import InequalityReport

    return InequalityReport(report.name, report.rhs, report.rhs_se, report.lhs, report.lhs_se,
                            report.params, dict(report.extra, swapped=True))


def _density(cfg):
    return parse_density(cfg.preset, cfg.dim)


def _run_talagrand(cfg):
    from .inequalities import talagrand_report

    rep = talagrand_report(_density(cfg), cfg.n, cfg.seed, cfg.solver.get("coupling", "common"))
    if cfg.fixture == "swap-sides":
        rep = _swap(rep)
    return rep.to_dict(), {"talagrand": rep.passed}, {}


def _run_gauge(cfg):
    from .inequalities import gauge_report

    region = cfg.params.get("region", cfg.preset if cfg.preset.startswith(("halfspace", "ballc")) else None)
    if region is None:
        raise ConfigError("gauge needs params.region (halfspace:... or ballc:...)")
    g, s = gauge_report(region, float(cfg.params.get("eps", 1.0)), cfg.n, cfg.seed)
    if cfg.fixture == "swap-sides":
        g, s = _swap(g), _swap(s)
    return {"gauge": g.to_dict(), "separation": s.to_dict()}, {"gauge": g.passed, "separation": s.passed}, {}


def _run_d1flow(cfg):
    from .inequalities import d1_flow_report, hermite_from_preset

    steps = int(cfg.params.get("steps", 1000))
    rep, trace = d1_flow_report(hermite_from_preset(cfg.preset, cfg.dim), cfg.n, cfg.seed, steps,
                                int(cfg.params.get("flow_points", 100)))
    if cfg.fixture == "swap-sides":
        rep = _swap(rep)
    tol = float(cfg.params.get("flow_tol", 1e-3))
    verdicts = {"d1_bound": rep.passed, "flow_identity": rep.extra["flow_max_rel_error"] <= tol
                and not rep.extra["flow_blown_up"]}
    return rep.to_dict(), verdicts, {"flow_trace.csv": trace.to_csv()}


def _run_ladder(cfg):
    dims = cfg.params.get("dims") or [cfg.dim]
    res = projection_ladder(_density(cfg), dims, cfg.n, cfg.seed, cfg.solver.get("coupling", "common"),
                            bool(cfg.params.get("allow_approximate", False)))
    payload = {"dims": list(res.dims), "values": list(res.values), "stderrs": list(res.stderrs),
               "reference": res.reference, "approximate": res.approximate}
    verdicts = {"monotone": res.monotone(2.0)}
    expected = cfg.params.get("expected")
    if expected is not None:
        rel = float(cfg.params.get("rel_tol", 0.1))
        errs = [abs(v - e) / max(abs(e), 1e-12) if e else abs(v) for v, e in zip(res.values, expected)]
        payload["relative_errors"] = errs
        verdicts["levels_match"] = all(e <= rel for e in errs)
    return payload, verdicts, {"ladder.csv": res.to_csv()}


def _gaussian_map(cfg):
    mean, cov, field_ = gaussian_parameters(cfg.preset, cfg.dim)
    return gaussian_brenier(np.zeros(cfg.dim), np.eye(cfg.dim), mean, cov), field_


def _run_jacobian(cfg):
    from .monge_ampere import jacobian_residual

    T, L = _gaussian_map(cfg)
    cloud = sample_standard(GaussianSpace(cfg.dim), cfg.n, cfg.seed)
    rep = jacobian_residual(L, T, cloud)
    tol = float(cfg.params.get("tol", 1e-8))
    s = rep.summary()
    verdicts = {"residual": s["max_abs_residual"] <= tol and not rep.bad_points,
                "det2_unit_interval": 0.0 <= s["det2_min"] and s["det2_max"] <= 1.0}
    return dict(s, tol=tol), verdicts, {"jacobian.csv": rep.to_csv()}


def _run_interpolation(cfg):
    from .monge_ampere import interpolation_check, logdet2_nonincreasing

    T, _ = _gaussian_map(cfg)
    ts = cfg.params.get("ts") or [k / 10 for k in range(10)]
    cloud = sample_standard(GaussianSpace(cfg.dim), cfg.n, cfg.seed)
    rows = interpolation_check(potential_of(T), ts, cloud, T, seed=cfg.seed)
    tol = float(cfg.params.get("tol", 1e-9))
    mono, worst = logdet2_nonincreasing(rows)
    payload = {"rows": [{"t": r.t, "min_monotone_ratio": r.min_monotone_ratio, "monotone_ok": r.monotone_ok,
                         "min_lambda_t": r.min_lambda_t, "pushforward_residual": r.pushforward_residual}
                        for r in rows],
               "logdet2_max_increase": worst}
    verdicts = {"monotone": all(r.monotone_ok for r in rows),
                "positive": all(r.min_lambda_t > 0 for r in rows),
                "pushforward": all(r.pushforward_residual <= tol for r in rows),
                "logdet2_nonincreasing": mono}
    return payload, verdicts, {}


def _run_polar(cfg):
    from .polar import candidate_rotations, factorize, minimality_check, minimality_csv, parse_map

    V = parse_map(cfg.preset, cfg.dim)
    res = factorize(V, cfg.n, cfg.seed)
    cands = candidate_rotations(cfg.dim, int(cfg.params.get("candidates", 20)), derive_seed(cfg.seed, "cand"))
    rows, ok = minimality_check(V.displacement, res.s.alpha, cands, cfg.dim, cfg.n, cfg.seed)
    verdicts = {"identity": res.identity_residual <= float(cfg.params.get("tol", 1e-9)),
                "rotation": res.rotation.passed, "minimality": ok}
    return res.to_dict(), verdicts, {"minimality.csv": minimality_csv(rows)}


def _run_monotone(cfg):
    L = _density(cfg)
    x, y = coupled_clouds(L, cfg.n, cfg.seed, cfg.solver.get("coupling", "independent"),
                          cfg.solver.get("sampler"))
    c = solve_exact(x, y, 2)
    rep = check_cyclic_monotone(c, int(cfg.params.get("cycle_budget", 200_000)),
                                cfg.params.get("max_cycle_len"), float(cfg.params.get("tol", 1e-9)),
                                cfg.seed)
    payload = {"cycles_tested": rep.cycles_tested, "worst_sum": rep.worst_sum,
               "worst_cycle": list(rep.worst_cycle), "exhaustive": rep.exhaustive, "cost": c.cost,
               "coupling": c.sidecar()}
    ok = rep.monotone
    if cfg.fixture == "swap-sides":
        # reversed pairing as a negative control
        rep2 = check_cyclic_monotone((c.source.points, -c.target.points[c.cols]), rep.cycles_tested or 1)
        payload["swapped_worst_sum"] = rep2.worst_sum
        ok = rep2.monotone
    return payload, {"cyclically_monotone": ok}, {"coupling.csv": c.to_csv()}


def _run_entropy_transport(cfg):
    from .monge_ampere import entropy_transport_check

    K = gaussian_parameters(cfg.params.get("K", "unit"), cfg.dim)
    L = gaussian_parameters(cfg.preset, cfg.dim)
    rep = entropy_transport_check(K, L, cfg.n, cfg.seed)
    if cfg.fixture == "swap-sides":
        rep = _swap(rep)
    return rep.to_dict(), {"entropy_transport": rep.passed}, {}


def _run_submartingale(cfg):
    from .monge_ampere import submartingale_trace

    levels = cfg.params.get("levels") or list(range(cfg.dim + 1))
    cloud = sample_standard(GaussianSpace(cfg.dim), cfg.n, cfg.seed)
    tr = submartingale_trace(cfg.preset, levels, cloud)
    tol = float(cfg.params.get("tol", 1e-10))
    payload = {"levels": list(tr.levels), "min_gap": tr.min_gap, "mc_gap": list(tr.mc_gap),
               "mc_gap_se": list(tr.mc_gap_se)}
    return payload, {"submartingale": tr.min_gap >= -tol}, {"submartingale.csv": tr.to_csv()}


def _run_duality(cfg):
    T, L = _gaussian_map(cfg)
    pair = potential_of(T)
    x, y = coupled_clouds(L, cfg.n, cfg.seed, cfg.solver.get("coupling", "common"), cfg.solver.get("sampler"))
    c = solve_exact(x, y, 2)
    res = duality_residual(pair, c, seed=cfg.seed)
    gap = energy_identity_check(c, pair)
    # two-sample noise of the independent-cloud cost is reported, not judged
    xi, yi = coupled_clouds(L, cfg.n, cfg.seed, "independent")
    gap_ind = energy_identity_check(solve_exact(xi, yi, 2), pair)
    tol = float(cfg.params.get("tol", 1e-9))
    payload = {"on_support_max": res.on_support_max, "off_support_min": res.off_support_min,
               "pairs_off": res.pairs_off, "energy_gap": gap, "cost": c.cost,
               "energy_gap_independent_clouds": gap_ind}
    verdicts = {"on_support": res.on_support_max <= tol, "off_support": res.off_support_min >= -tol,
                "energy": gap <= float(cfg.params.get("energy_tol", 0.05))}
    return payload, verdicts, {}


_DISPATCH = {
    "talagrand": _run_talagrand, "gauge": _run_gauge, "d1flow": _run_d1flow, "ladder": _run_ladder,
    "jacobian": _run_jacobian, "interpolation": _run_interpolation, "polar": _run_polar,
    "monotone": _run_monotone, "entropy-transport": _run_entropy_transport,
    "submartingale": _run_submartingale, "duality": _run_duality,
}


def output_root(cfg=None):
    if cfg is not None and cfg.output:
        return Path(cfg.output)
    return Path(os.environ.get(OUTPUT_ENV, "wiener-ot-runs"))


def run(config, write=True, root=None):
    """Execute one experiment; errors become exit codes rather than exceptions."""
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    t0 = time.perf_counter()
    payload, verdicts, tables, code, err = {}, {}, {}, EXIT_OK, ""
    try:
        payload, verdicts, tables = _DISPATCH[config.kind](config)
        code = EXIT_OK if all(verdicts.values()) else EXIT_FAIL
    except (PresetError, ConfigError, KeyError, TypeError) as exc:
        code, err = EXIT_CONFIG, f"{type(exc).__name__}: {exc}"
    except DimensionError as exc:
        code, err = EXIT_DIM, str(exc)
    except (SolverError, SamplingError, FloatingPointError, np.linalg.LinAlgError) as exc:
        code, err = EXIT_SOLVER, f"{type(exc).__name__}: {exc}"
    except ValueError as exc:
        code, err = EXIT_CONFIG, f"{type(exc).__name__}: {exc}"
    wall = time.perf_counter() - t0
    body = {
        "config": config.to_dict(),
        "config_hash": config.hash,
        "citation": CITATIONS[config.kind],
        "version": __version__,
        "report": payload,
        "verdicts": {k: bool(v) for k, v in verdicts.items()},
        "exit_code": code,
        "error": err,
    }
    record = RunRecord(config, config.hash, __version__, wall, body, body["verdicts"], tables, code, err)
    if write:
        record = _write(record, Path(root) if root else output_root(config))
    return record


def _write(record, root):
    out = root / record.config_hash
    out.mkdir(parents=True, exist_ok=True)
    (out / "payload.json").write_bytes(record.payload_bytes())
    (out / "config.json").write_text(json.dumps(record.config.to_dict(), sort_keys=True, indent=2) + "\n")
    for name, text in sorted(record.tables.items()):
        (out / name).write_text(text)
    meta = {"wall_time_s": record.wall_time, "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "threads": threads()}
    (out / "metadata.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return RunRecord(record.config, record.config_hash, record.version, record.wall_time, record.payload,
                     record.verdicts, record.tables, record.exit_code, record.error, str(out))


def threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


class ManifestError(ValueError):
    exit_code = EXIT_CONFIG


def load_manifest(obj):
    """Manifest: a list of configs, or ``{"runs": [...], "only": [kinds], "defaults": {...}}``."""
    if isinstance(obj, list):
        runs, only, defaults = obj, None, {}
    elif isinstance(obj, dict):
        runs, only, defaults = obj.get("runs", []), obj.get("only"), obj.get("defaults", {})
    else:
        raise ManifestError("manifest must be a list or an object")
    merged = [dict(defaults, **r) for r in runs]
    if only:
        merged = [r for r in merged if r.get("kind") in only]
    if not merged:
        raise ManifestError("empty manifest")
    return merged


@dataclass(frozen=True)
class SuiteSummary:
    records: tuple
    errors: tuple

    @property
    def failures(self):
        return sum(1 for r in self.records if not r.passed) + len(self.errors)

    @property
    def exit_code(self):
        return EXIT_OK if self.failures == 0 else EXIT_FAIL

    def table(self):
        lines = [f"{'#':>3}  {'kind':<18} {'preset':<34} {'hash':<16}  status"]
        for i, r in enumerate(self.records):
            status = "pass" if r.passed else f"FAIL (exit {r.exit_code})"
            lines.append(f"{i:>3}  {r.config.kind:<18} {r.config.preset[:34]:<34} {r.config_hash}  {status}")
        for i, msg in self.errors:
            lines.append(f"{i:>3}  invalid config: {msg}")
        lines.append(f"{len(self.records) + len(self.errors)} runs, {self.failures} failed")
        return "\n".join(lines)


def default_manifest():
    """Configs mirroring the acceptance checks, at report-sized sample counts."""
    runs = [
        {"kind": "monotone", "preset": "scale:2,0.5", "dim": 2, "n": 7},
        {"kind": "monotone", "preset": "gauss-mixture:0.5,-1,0.6;0.5,1,0.6", "dim": 3, "n": 7},
        {"kind": "talagrand", "preset": "unit", "dim": 8},
        {"kind": "talagrand", "preset": "shift:1", "dim": 2},
        {"kind": "talagrand", "preset": "scale:2", "dim": 1},
        {"kind": "talagrand", "preset": "hermite-poly:1,0.3,0.4", "dim": 2},
        {"kind": "gauge", "preset": "halfspace:1,0", "dim": 1, "n": 100000, "params": {"eps": 1.0}},
        {"kind": "gauge", "preset": "halfspace:1,2", "dim": 1, "n": 100000, "params": {"eps": 1.0}},
        {"kind": "gauge", "preset": "ballc:0,0,1.5", "dim": 2, "n": 100000, "params": {"eps": 0.5}},
        {"kind": "d1flow", "preset": "hermite-poly:1,0,0.5", "dim": 1},
        {"kind": "ladder", "preset": "scale:2,2,2", "dim": 8, "n": 2048,
         "params": {"dims": [1, 2, 3, 8], "expected": [1, 2, 3, 3]}},
        {"kind": "duality", "preset": "shift:1,0.5", "dim": 2},
        {"kind": "duality", "preset": "scale:2", "dim": 1},
        {"kind": "duality", "preset": "scale:2,3", "dim": 2, "n": 2048},
        {"kind": "jacobian", "preset": "shift:1,-0.5", "dim": 2},
        {"kind": "jacobian", "preset": "scale:2", "dim": 1},
        {"kind": "jacobian", "preset": "scale:2,3", "dim": 2},
        {"kind": "interpolation", "preset": "scale:2", "dim": 1, "params": {"ts": [0.5]}},
        {"kind": "interpolation", "preset": "scale:0.5,1.5,2", "dim": 3, "n": 1000},
        {"kind": "entropy-transport", "preset": "shift:1,0.5", "dim": 2},
        {"kind": "entropy-transport", "preset": "scale:2", "dim": 1},
        {"kind": "submartingale", "preset": "quadratic:1,0.3,0.3,-0.5", "dim": 4},
        {"kind": "submartingale", "preset": "abs1", "dim": 2, "params": {"levels": [0, 1, 2]}},
        {"kind": "polar", "preset": "rotation:30,1,0", "dim": 2},
        {"kind": "polar", "preset": "scaled-rotation:2,30", "dim": 2},
    ]
    return {"runs": runs}


def suite(manifest, write=True, root=None, workers=None):
    """Run every config; per-run errors are collected, never fatal to the sweep."""
    entries = load_manifest(manifest)
    configs, errors = [], []
    for i, e in enumerate(entries):
        try:
            configs.append((i, ExperimentConfig.from_dict(e)))
        except (ConfigError, DimensionError) as exc:
            errors.append((i, str(exc)))
    workers = workers or threads()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(lambda ic: run(ic[1], write, root), configs))
    else:
        records = [run(c, write, root) for _, c in configs]
    summary = SuiteSummary(tuple(records), tuple(errors))
    if write:
        out = Path(root) if root else output_root()
        out.mkdir(parents=True, exist_ok=True)
        (out / "suite_summary.txt").write_text(summary.table() + "\n")
    return summary
