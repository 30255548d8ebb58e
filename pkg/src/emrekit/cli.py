"""``emre-kit`` command line: simulate, mitigate, robustness."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bench import (SIMULATE_COLUMNS, csv_text, load_config, resolve_threads, run_sweep, simulate_rows,
                    summarize, write_outputs)
from .channels import GATE_MATRICES, Gate, NoiseModel
from .errors import ConfigError, EmreKitError, UnsupportedNoise
from .robustness import (CLOSED_FORM, certify_r_plus, closed_form_r_plus, emre_decompose,
                         pec_decompose_pauli, sandwich_bounds)

EXIT_CONFIG = 2
EXIT_UNSUPPORTED = 3

log = logging.getLogger("emrekit")


def parse_noise_spec(spec: str) -> NoiseModel:
    """``kind:key=value,...`` or ``kind:p``, e.g. ``dephasing:0.1`` or ``pauli:px=1e-4,py=1e-4,pz=3e-4``."""
    aliases = {"depolarizing": "depolarizing_local", "depol": "depolarizing_local",
               "ddim": "depolarizing_ddim", "inhomogeneous_pauli": "pauli"}
    kind, _, rest = spec.partition(":")
    kind = aliases.get(kind.strip(), kind.strip())
    cfg: dict = {"kind": kind}
    for part in filter(None, (x.strip() for x in rest.split(","))):
        key, eq, val = part.partition("=")
        if not eq:
            key, val = "p", key
        try:
            cfg[key.strip()] = int(val) if key.strip() == "d" else float(val)
        except ValueError:
            raise ConfigError(f"--noise.{key.strip()}", f"not a number: {val!r}") from None
    from .channels import noise_from_config
    return noise_from_config(cfg, "--noise")


def parse_gate_spec(spec: str) -> Gate:
    name = spec.strip()
    if name not in GATE_MATRICES:
        raise ConfigError("--gate", f"unknown gate {name!r}; choose from {sorted(GATE_MATRICES)}")
    arity = 1 if GATE_MATRICES[name].shape[0] == 2 else 2
    return Gate(name, tuple(range(arity)))


def robustness_report(gate: Gate, noise: NoiseModel, n_samples: int = 1000, seed: int = 0) -> dict:
    out: dict = {"gate": gate.name, "noise": noise.label}
    if noise.kind == "depolarizing_ddim" and noise.d != 2**gate.arity:
        cf = closed_form_r_plus(noise)
        out.update(cf.to_json())
        out["certificate"] = "not checked (dimension differs from the gate)"
        return out
    try:
        rep = certify_r_plus(gate, noise, n_samples=n_samples, seed=seed)
    except UnsupportedNoise:
        raise
    out.update(rep.to_json())
    tight = abs(rep.upper - rep.lower) <= 1e-9
    out["certificate"] = "tight" if tight else f"gap {rep.upper - rep.lower:.3e}"
    try:
        out["gamma_pec"] = pec_decompose_pauli(gate, noise).gamma
    except EmreKitError:
        out["gamma_pec"] = None
    t1 = sandwich_bounds(emre_decompose(gate, noise, CLOSED_FORM), gate)
    out["sandwich_raw_lower"] = t1.lower
    out["sandwich_certified_lower"] = t1.certified_lower
    out["sandwich_upper"] = t1.upper
    return out


def _out_dir(args, cfg_output: str) -> Path:
    return Path(args.out_dir) if args.out_dir else Path(cfg_output)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    rows = simulate_rows(cfg, resolve_threads(args.threads))
    out = _out_dir(args, cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "simulate.csv").write_text(csv_text(rows, SIMULATE_COLUMNS))
    (out / "simulate.json").write_text(json.dumps(rows, indent=2) + "\n")
    for r in rows:
        line = f"{r['noise_label']:<40} exact ideal {r['E_exact_ideal']:.6f}  noisy {r['E_exact_noisy']:.6f}"
        if r["reps"]:
            line += f"  sampled mean|bias| {r['mean_bias']:.4f}"
        print(line)
    return 0


def cmd_mitigate(args) -> int:
    cfg = load_config(args.config)
    if not cfg.methods:
        raise ConfigError("methods", "at least one method is required")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.reps is not None:
        cfg.repetitions = args.reps
    records, exact = run_sweep(cfg, resolve_threads(args.threads),
                               progress=(lambda m: log.info(m)) if args.verbose else None)
    out = _out_dir(args, cfg.output)
    write_outputs(out, cfg, records, exact)
    print(f"{'noise':<40} {'method':<22} {'mean|bias|':>10} {'std(E)':>8} {'mean b':>8}")
    for r in summarize(records, exact, cfg.noise):
        print(f"{r['noise_label']:<40} {r['method']:<22} {r['mean_bias']:>10.4f} {r['std_E']:>8.4f}"
              f" {r['mean_b_reported']:>8.4f}")
    print(f"results written to {out}")
    return 0


def cmd_robustness(args) -> int:
    noise = parse_noise_spec(args.noise)
    gate = parse_gate_spec(args.gate)
    rep = robustness_report(gate, noise, n_samples=args.samples, seed=args.seed or 0)
    for k, v in rep.items():
        print(f"{k:<26} {v:.10g}" if isinstance(v, float) else f"{k:<26} {v}")
    if args.json or args.out_dir:
        text = json.dumps(rep, indent=2) + "\n"
        if args.out_dir:
            Path(args.out_dir).mkdir(parents=True, exist_ok=True)
            (Path(args.out_dir) / "robustness.json").write_text(text)
        if args.json:
            print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $EMREKIT_THREADS or 1); results do not depend on it")
    common.add_argument("--out-dir", default=None, help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="emre-kit", description="Noisy-circuit error mitigation toolkit.")
    p.add_argument("--version", action="version", version=f"emre-kit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="exact noiseless and noisy expectations")
    s.add_argument("config")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("mitigate", parents=[common], help="run an estimator sweep")
    m.add_argument("config")
    m.add_argument("--reps", type=int, default=None, help="override the repetition count")
    m.set_defaults(func=cmd_mitigate)

    r = sub.add_parser("robustness", parents=[common], help="robustness values and certificates")
    r.add_argument("--noise", required=True, help="e.g. dephasing:0.1, depolarizing:p=0.01, pauli:px=..,py=..,pz=..")
    r.add_argument("--gate", default="H", help="gate name (default H)")
    r.add_argument("--samples", type=int, default=1000, help="random channels checked against the certificate")
    r.add_argument("--json", action="store_true", help="also print the JSON report")
    r.set_defaults(func=cmd_robustness)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: invalid config field {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnsupportedNoise as exc:
        print(f"error: unsupported noise: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except EmreKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
