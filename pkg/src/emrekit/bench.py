"""Experiment configs, seeded sweeps and CSV/JSON emission."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channels import CircuitIR, NoiseModel, build_swap_test_circuit, noise_from_config
from .errors import ConfigError
from .estimators import (EstimateReport, c_from_shots, emre_estimate, hemre_estimate, noem_estimate,
                         pec_estimate, plan_hemre)
from .plans import plan_emre, plan_none, plan_pec
from .robustness import CLOSED_FORM, POSITIVE_PART
from .simulator import SHOT_MODES, SINGLE_SHOT, CompiledSampler, exact_expectation

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SPEC_VERSION = 1
METHODS = ("none", "pec", "emre", "hemre")
EMIT_KINDS = frozenset({"summary_csv", "per_run_csv", "histogram_csv"})
CONFIG_DIR = Path(__file__).parent / "configs"

SUMMARY_COLUMNS = ["noise_label", "noise_p", "px", "py", "pz", "method", "reps", "mean_bias", "std_bias",
                   "mean_E", "std_E", "mean_b_reported", "coverage", "shots", "E_ideal", "E_noisy"]
RUN_COLUMNS = ["noise_label", "noise_p", "px", "py", "pz", "method", "rep", "E", "b", "E_hat", "E_B",
               "epsilon", "shots", "seed", "branch", "s_total", "s_incl", "gamma_incl"]
HIST_COLUMNS = ["noise_label", "noise_p", "method", "rep", "E"]
SIMULATE_COLUMNS = ["noise_label", "noise_p", "px", "py", "pz", "E_exact_ideal", "E_exact_noisy",
                    "exact_bias", "reps", "shots", "mean_E", "mean_bias", "std_bias"]


@dataclass
class MethodConfig:
    method: str
    shots: int | None = None
    c: float | None = None
    p_fail: float = 0.05
    delta_fixed: float = 0.0
    selector: str = "greedy"
    emre_mode: str = POSITIVE_PART
    shot_mode: str = SINGLE_SHOT
    hemre_epsilon_base: str = "s_total"
    label: str = ""

    def __post_init__(self):
        if not self.label:
            self.label = self.method if self.method != "hemre" else f"hemre(delta={self.delta_fixed:g})"


@dataclass
class ExperimentConfig:
    circuit: str = "swap_test"
    noise: list[NoiseModel] = field(default_factory=list)
    methods: list[MethodConfig] = field(default_factory=list)
    repetitions: int = 50
    seed: int = 0
    output: str = "emrekit-out"
    emit: frozenset = EMIT_KINDS
    fredkin: str = "three_toffoli"
    spec_version: int = SPEC_VERSION

    def build_circuit(self, noise: NoiseModel) -> CircuitIR:
        if self.circuit == "swap_test":
            return build_swap_test_circuit(noise, fredkin=self.fredkin)
        if self.circuit == "swap_test_ghz":
            return build_swap_test_circuit(noise, fredkin=self.fredkin, second_ghz=True)
        return CircuitIR.load(self.circuit, noise)


@dataclass
class RunRecord:
    noise: NoiseModel
    method: str
    rep: int
    report: EstimateReport
    wall_time_ms: float


# ---------------------------------------------------------------- config parsing

def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc.strerror}") from None
    if path.suffix == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path.name}:{exc.lineno}:{exc.colno}", exc.msg) from None
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(path.name, str(exc)) from None


def _get(d: dict, key: str, types, where: str, default=None):
    if key not in d:
        return default
    v = d[key]
    if isinstance(v, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"{where}.{key}", f"has the wrong type ({type(v).__name__})")
    if not isinstance(v, types):
        raise ConfigError(f"{where}.{key}", f"has the wrong type ({type(v).__name__})")
    return v


def _noise_list(raw, where: str) -> list[NoiseModel]:
    """``[[noise]]`` entries; a list-valued ``p`` (or ``px``/``py``/``pz``) expands into a sweep."""
    if isinstance(raw, dict):
        raw = [raw]
    if not isinstance(raw, list) or not raw:
        raise ConfigError(where, "must be a non-empty list of noise tables")
    out = []
    for i, entry in enumerate(raw):
        w = f"{where}[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(w, "must be a table/object")
        sweep_keys = [k for k in ("p", "px", "py", "pz") if isinstance(entry.get(k), list)]
        if not sweep_keys:
            out.append(noise_from_config(entry, w))
            continue
        lengths = {len(entry[k]) for k in sweep_keys}
        if len(lengths) != 1:
            raise ConfigError(w, "swept probability lists must have equal length")
        for j in range(lengths.pop()):
            e = dict(entry)
            for k in sweep_keys:
                e[k] = entry[k][j]
            out.append(noise_from_config(e, f"{w}.{sweep_keys[0]}[{j}]"))
    return out


def _method(entry, where: str, defaults: dict) -> MethodConfig:
    if isinstance(entry, str):
        entry = {"method": entry}
    if not isinstance(entry, dict):
        raise ConfigError(where, "must be a table/object or a method name")
    merged = {**defaults, **entry}
    m = merged.get("method")
    if m not in METHODS:
        raise ConfigError(f"{where}.method", f"must be one of {METHODS}, got {m!r}")
    shots = _get(merged, "shots", int, where)
    c = _get(merged, "c", (int, float), where)
    if shots is None and c is None:
        raise ConfigError(f"{where}.shots", "either shots or c is required")
    if shots is not None and shots < 1:
        raise ConfigError(f"{where}.shots", "must be >= 1")
    if c is not None and c <= 0:
        raise ConfigError(f"{where}.c", "must be positive")
    if m in ("none", "pec") and shots is None:
        raise ConfigError(f"{where}.shots", f"{m} needs a shot count")
    p_fail = float(_get(merged, "p_fail", (int, float), where, 0.05))
    if not 0 < p_fail < 1:
        raise ConfigError(f"{where}.p_fail", "must lie in (0, 1)")
    delta = float(_get(merged, "delta_fixed", (int, float), where, 0.0))
    if delta < 0:
        raise ConfigError(f"{where}.delta_fixed", "must be >= 0")
    selector = _get(merged, "selector", str, where, "greedy")
    if selector not in ("greedy", "window"):
        raise ConfigError(f"{where}.selector", "must be 'greedy' or 'window'")
    emre_mode = _get(merged, "emre_mode", str, where, POSITIVE_PART)
    if emre_mode not in (POSITIVE_PART, CLOSED_FORM):
        raise ConfigError(f"{where}.emre_mode", f"must be {POSITIVE_PART!r} or {CLOSED_FORM!r}")
    shot_mode = _get(merged, "shot_mode", str, where, SINGLE_SHOT)
    if shot_mode not in SHOT_MODES:
        raise ConfigError(f"{where}.shot_mode", f"must be one of {SHOT_MODES}")
    base = _get(merged, "hemre_epsilon_base", str, where, "s_total")
    if base not in ("s_total", "s_incl"):
        raise ConfigError(f"{where}.hemre_epsilon_base", "must be 's_total' or 's_incl'")
    return MethodConfig(m, shots, None if c is None else float(c), p_fail, delta, selector, emre_mode,
                        shot_mode, base, _get(merged, "label", str, where, ""))


def parse_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a table/object")
    version = data.get("spec_version", SPEC_VERSION)
    if version != SPEC_VERSION:
        raise ConfigError("spec_version", f"unsupported version {version!r} (expected {SPEC_VERSION})")
    exp = data.get("experiment", {})
    if not isinstance(exp, dict):
        raise ConfigError("experiment", "must be a table/object")
    circuit = _get(exp, "circuit", str, "experiment", "swap_test")
    if circuit not in ("swap_test", "swap_test_ghz") and not Path(circuit).exists():
        raise ConfigError("experiment.circuit", f"not a builtin name or readable file: {circuit!r}")
    reps = _get(exp, "repetitions", int, "experiment", 50)
    if reps < 1:
        raise ConfigError("experiment.repetitions", "must be >= 1")
    seed = _get(exp, "seed", int, "experiment", 0)
    if not 0 <= seed < 2**64:
        raise ConfigError("experiment.seed", "must fit in 64 unsigned bits")
    emit = _get(exp, "emit", list, "experiment", sorted(EMIT_KINDS))
    if set(emit) - EMIT_KINDS:
        raise ConfigError("experiment.emit", f"entries must come from {sorted(EMIT_KINDS)}")
    fredkin = _get(exp, "fredkin", str, "experiment", "three_toffoli")
    if fredkin not in ("three_toffoli", "cnot_toffoli"):
        raise ConfigError("experiment.fredkin", "must be 'three_toffoli' or 'cnot_toffoli'")
    defaults = {k: exp[k] for k in ("shots", "c", "p_fail", "shot_mode", "emre_mode") if k in exp}
    noise = _noise_list(data.get("noise", [{"kind": "none"}]), "noise")
    raw_methods = data.get("methods", [])
    if not isinstance(raw_methods, list):
        raise ConfigError("methods", "must be a list")
    methods = [_method(m, f"methods[{i}]", defaults) for i, m in enumerate(raw_methods)]
    return ExperimentConfig(circuit, noise, methods, reps, seed,
                            _get(exp, "output", str, "experiment", "emrekit-out"), frozenset(emit), fredkin)


def load_config(path: str | Path) -> ExperimentConfig:
    """Load a config file; a bare name such as ``table2`` falls back to the bundled configs."""
    p = Path(path)
    if not p.exists():
        for cand in (CONFIG_DIR / p.name, CONFIG_DIR / f"{p.name}.toml"):
            if cand.exists():
                p = cand
                break
    return parse_config(read_config_file(p))


def bundled_config(name: str) -> Path:
    return CONFIG_DIR / name


# ---------------------------------------------------------------- running

def derive_seed(master: int, *indices: int) -> int:
    """64-bit seed for one (noise, method, repetition) cell."""
    ss = np.random.SeedSequence([int(master), *[int(i) for i in indices]])
    return int(ss.generate_state(1, np.uint64)[0])


def resolve_threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("EMREKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("EMREKIT_THREADS", f"must be an integer, got {env!r}") from None
    return 1


class MethodRunner:
    """Plan and compiled sampler for one (circuit, method), reused across repetitions."""

    def __init__(self, circuit: CircuitIR, mc: MethodConfig):
        self.circuit = circuit
        self.mc = mc
        if mc.method == "none":
            self.plan = plan_none(circuit)
        elif mc.method == "pec":
            self.plan = plan_pec(circuit)
        elif mc.method == "emre":
            self.plan = plan_emre(circuit, mc.emre_mode)
        else:
            s_total = plan_emre(circuit, mc.emre_mode).s_total
            c0 = mc.c if mc.c is not None else c_from_shots(mc.shots, mc.p_fail)
            self.plan = plan_hemre(circuit, mc.delta_fixed, c0 * s_total, mc.selector, mc.emre_mode)
        self.sampler = CompiledSampler(circuit, self.plan)

    def run(self, seed: int) -> EstimateReport:
        mc, c = self.mc, self.circuit
        kw = dict(seed=seed, shot_mode=mc.shot_mode, sampler=self.sampler, plan=self.plan)
        if mc.method == "none":
            return noem_estimate(c, mc.shots, p_fail=mc.p_fail, **kw)
        if mc.method == "pec":
            return pec_estimate(c, mc.shots, p_fail=mc.p_fail, **kw)
        if mc.method == "emre":
            return emre_estimate(c, mc.c if mc.shots is None else None, mc.p_fail, mc.emre_mode,
                                 shots=mc.shots, **kw)
        kw.pop("plan")
        return hemre_estimate(c, self.plan, mc.c if mc.shots is None else None, mc.p_fail, shots=mc.shots,
                              epsilon_base=mc.hemre_epsilon_base, **kw)


def run_sweep(cfg: ExperimentConfig, threads: int = 1, progress=None) -> tuple[list[RunRecord], dict]:
    """Every (noise, method, repetition) cell; results are independent of ``threads``."""
    records: list[RunRecord] = []
    exact: dict = {}
    for ni, noise in enumerate(cfg.noise):
        circuit = cfg.build_circuit(noise)
        exact[ni] = (exact_expectation(circuit, ideal=True), exact_expectation(circuit))
        for mi, mc in enumerate(cfg.methods):
            runner = MethodRunner(circuit, mc)

            def one(rep, runner=runner, ni=ni, mi=mi, noise=noise, mc=mc):
                t0 = time.perf_counter()
                rep_report = runner.run(derive_seed(cfg.seed, ni, mi, rep))
                return RunRecord(noise, mc.label, rep, rep_report, 1e3 * (time.perf_counter() - t0))

            if threads > 1:
                with ThreadPoolExecutor(threads) as pool:
                    records += list(pool.map(one, range(cfg.repetitions)))
            else:
                records += [one(r) for r in range(cfg.repetitions)]
            if progress:
                progress(f"{noise.label} {mc.label}: done")
    return records, exact


def _noise_fields(noise: NoiseModel) -> dict:
    return {"noise_label": noise.label, "noise_p": noise.total_probability,
            "px": noise.px, "py": noise.py, "pz": noise.pz}


def summarize(records: list[RunRecord], exact: dict, noises: list[NoiseModel]) -> list[dict]:
    rows = []
    keys: list = []
    groups: dict = {}
    for r in records:
        ni = next(i for i, n in enumerate(noises) if n is r.noise)
        k = (ni, r.method)
        if k not in groups:
            groups[k] = []
            keys.append(k)
        groups[k].append(r)
    for ni, method in keys:
        g = groups[(ni, method)]
        ideal, noisy = exact[ni]
        e = np.array([r.report.E for r in g])
        b = np.array([r.report.b for r in g])
        bias = np.abs(e - ideal)
        rows.append({**_noise_fields(noises[ni]), "method": method, "reps": len(g),
                     "mean_bias": float(bias.mean()), "std_bias": _std(bias), "mean_E": float(e.mean()),
                     "std_E": _std(e), "mean_b_reported": float(b.mean()),
                     "coverage": float(np.mean(bias <= b)), "shots": g[0].report.shots,
                     "E_ideal": ideal, "E_noisy": noisy})
    return rows


def _std(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if x.size > 1 else 0.0


def run_rows(records: list[RunRecord]) -> list[dict]:
    out = []
    for r in records:
        rep = r.report
        out.append({**_noise_fields(r.noise), "method": r.method, "rep": r.rep, "E": rep.E, "b": rep.b,
                    "E_hat": rep.E_hat, "E_B": rep.E_B, "epsilon": rep.epsilon, "shots": rep.shots,
                    "seed": rep.seed, "branch": rep.branch or "", "s_total": rep.s, "s_incl": rep.s_incl,
                    "gamma_incl": rep.gamma_incl})
    return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def write_outputs(out_dir: Path, cfg: ExperimentConfig, records: list[RunRecord], exact: dict) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        p = out_dir / name
        p.write_text(text)
        written.append(p)

    summary = summarize(records, exact, cfg.noise)
    runs = run_rows(records)
    if "summary_csv" in cfg.emit:
        put("summary.csv", csv_text(summary, SUMMARY_COLUMNS))
        put("summary.json", json.dumps(summary, indent=2) + "\n")
    if "per_run_csv" in cfg.emit:
        put("runs.csv", csv_text(runs, RUN_COLUMNS))
        put("runs.json", json.dumps(runs, indent=2) + "\n")
    if "histogram_csv" in cfg.emit:
        put("histogram.csv", csv_text(runs, HIST_COLUMNS))
    # wall times vary run to run, so they live apart from the reproducible outputs
    timing = [{**_noise_fields(r.noise), "method": r.method, "rep": r.rep, "wall_time_ms": r.wall_time_ms}
              for r in records]
    put("timings.csv", csv_text(timing, ["noise_label", "noise_p", "method", "rep", "wall_time_ms"]))
    return written


def simulate_rows(cfg: ExperimentConfig, threads: int = 1) -> list[dict]:
    """Exact ideal and noisy values per noise point, plus unmitigated sampling when shots are configured."""
    rows = []
    noem = next((m for m in cfg.methods if m.method == "none"), None)
    for ni, noise in enumerate(cfg.noise):
        circuit = cfg.build_circuit(noise)
        ideal, noisy = exact_expectation(circuit, ideal=True), exact_expectation(circuit)
        row = {**_noise_fields(noise), "E_exact_ideal": ideal, "E_exact_noisy": noisy,
               "exact_bias": abs(noisy - ideal), "reps": 0, "shots": 0, "mean_E": math.nan,
               "mean_bias": math.nan, "std_bias": math.nan}
        if noem is not None:
            runner = MethodRunner(circuit, noem)
            seeds = [derive_seed(cfg.seed, ni, 0, r) for r in range(cfg.repetitions)]
            if threads > 1:
                with ThreadPoolExecutor(threads) as pool:
                    reports = list(pool.map(runner.run, seeds))
            else:
                reports = [runner.run(s) for s in seeds]
            e = np.array([r.E for r in reports])
            bias = np.abs(e - ideal)
            row.update(reps=len(reports), shots=noem.shots, mean_E=float(e.mean()),
                       mean_bias=float(bias.mean()), std_bias=_std(bias))
        rows.append(row)
    return rows
