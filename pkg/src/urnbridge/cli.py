"""Command-line front end.

Commands
--------
simulate   draw a label stream from a power-law urn scheme and write it out
estimate   estimate the growth exponent of a recorded stream
test       run the homogeneity test (known or estimated exponent)
tabulate   precompute a null-distribution artifact (Monte Carlo or spectral)
covcheck   compare empirical covariances against the exact/limit formulas

Every command takes an integer ``--seed`` and writes it (plus a digest of the
full resolved configuration) into its outputs, so any run can be reproduced
byte for byte.  Flags override values from an optional JSON ``--config``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bridge_tests import (
    AutoBackend,
    MonteCarloBackend,
    SpectralBackend,
    run_estimated_theta_test,
    run_known_theta_test,
)
from .estimation import example1_measure, theta_estimator, validate_measure
from .gaussian_limit import LimitSample, cov_kernel, cross_cov_kernel, limit_w2_sample
from .spectral_cdf import SpectralModel, nystrom_eigs
from .urn_model import (
    backward_counts,
    exact_mean_occupancy,
    forward_counts,
    occupancy_checkpoints,
    poisson_mean_occupancy,
    poissonized_checkpoints,
    poissonized_occupancy_cov,
    read_stream,
    sample_stream,
    tail_safe_truncation,
    write_stream,
    write_vocab,
    zipf_law,
)

__all__ = ["main"]

_DEFAULT_GRID = (0.25, 0.5, 0.75, 1.0)


class ConfigError(ValueError):
    pass


def _config_digest(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    return cfg


def _resolve(args: argparse.Namespace, keys: list[str]) -> dict:
    """Merge config-file values with CLI flags (flags win), keep only keys."""
    cfg = _load_config(getattr(args, "config", None))
    out = {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in cfg:
            out[key] = cfg[key]
        else:
            out[key] = None
    return out


def _require(cfg: dict, *keys: str) -> None:
    for key in keys:
        if cfg.get(key) is None:
            raise ConfigError(f"missing required option --{key.replace('_', '-')}")


def _parse_measure(specs):
    if not specs:
        return None
    if len(specs) == 1 and specs[0] == "example1":
        return example1_measure()
    atoms = []
    for spec in specs:
        if spec == "example1":
            raise ConfigError("'example1' cannot be combined with explicit atoms")
        if not spec.startswith("atom="):
            raise ConfigError(f"measure spec must be 'example1' or 'atom=t:h', got {spec!r}")
        body = spec[len("atom="):]
        try:
            t_str, h_str = body.split(":")
            atoms.append((float(t_str), float(h_str)))
        except ValueError as exc:
            raise ConfigError(f"cannot parse atom spec {spec!r}") from exc
    try:
        return validate_measure(atoms)
    except ValueError as exc:
        raise ConfigError(f"invalid measure: {exc}") from exc


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def cmd_simulate(args) -> int:
    cfg = _resolve(args, ["theta", "n", "seed", "support", "output"])
    _require(cfg, "theta", "n", "output")
    if cfg["seed"] is None:
        cfg["seed"] = 0
    theta, n, seed = float(cfg["theta"]), int(cfg["n"]), int(cfg["seed"])
    if n < 1:
        raise ConfigError("n must be >= 1")
    support = int(cfg["support"]) if cfg["support"] is not None else tail_safe_truncation(theta, n)
    cfg["support"] = support
    law = zipf_law(theta, support)
    stream = sample_stream(law, n, seed)
    digest = _config_digest({"command": "simulate", **{k: cfg[k] for k in ("theta", "n", "seed", "support")}})
    header = [
        f"urnbridge {__version__} simulate theta={theta!r} n={n} seed={seed} support={support} digest={digest}",
    ]
    write_stream(cfg["output"], stream, header_lines=header)
    print(f"wrote {n} labels to {cfg['output']} (digest={digest})")
    return 0


def _read_labeled_stream(path: str):
    stream, vocab = read_stream(path)
    if vocab is not None:
        vocab_path = str(path) + ".vocab"
        write_vocab(vocab_path, vocab)
        print(f"# non-integer tokens encoded; mapping written to {vocab_path}")
    return stream


def cmd_estimate(args) -> int:
    cfg = _resolve(args, ["input", "measure", "output"])
    _require(cfg, "input")
    measure = _parse_measure(cfg["measure"]) or example1_measure()
    stream = _read_labeled_stream(cfg["input"])
    est = theta_estimator(forward_counts(stream), backward_counts(stream), measure)
    lines = [
        f"value={est.value!r}",
        f"forward={est.forward!r}",
        f"backward={est.backward!r}",
        f"n={est.n}",
        f"asym_sd={est.asym_sd!r}",
        f"clamped={int(est.clamped)}",
    ]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if cfg["output"]:
        Path(cfg["output"]).write_text(text, encoding="utf-8")
    return 0


def _make_backend(name: str, grid_size: int, reps: int, seed: int):
    mc = MonteCarloBackend(grid_size=grid_size, reps=reps, seed=seed)
    spectral_m = max(grid_size, 256)
    spec = SpectralBackend(m=spectral_m, kmax=spectral_m // 4)
    if name == "montecarlo":
        return mc
    if name == "spectral":
        return spec
    if name == "auto":
        return AutoBackend(spectral=spec, montecarlo=mc)
    raise ConfigError(f"unknown backend {name!r}")


def _persist_test_artifact(backend, report, measure, path: str, provenance: dict) -> None:
    # save whichever null representation the winning backend used
    if report.cdf_backend == "montecarlo":
        mc = backend.montecarlo if isinstance(backend, AutoBackend) else backend
        mc.sample(report.theta, report.variant, measure).save(path, extra_header=provenance)
    else:
        spec = backend.spectral if isinstance(backend, AutoBackend) else backend
        spec.model(report.theta, report.variant, measure).save(path, extra_header=provenance)


def _load_test_artifact(backend, path: str, measure) -> None:
    """Preload a persisted null artifact into the matching backend cache."""
    head = Path(path).read_text(encoding="utf-8").splitlines()
    keys = {line.partition("=")[0] for line in head[:16] if "=" in line}
    if "kmax" in keys:
        spec = backend.spectral if isinstance(backend, AutoBackend) else backend
        if isinstance(spec, SpectralBackend):
            spec.preload(SpectralModel.load(path), measure)
    elif "grid_size" in keys:
        mc = backend.montecarlo if isinstance(backend, AutoBackend) else backend
        if isinstance(mc, MonteCarloBackend):
            mc.preload(LimitSample.load(path), measure)
    else:
        raise ConfigError(f"unrecognized artifact format in {path}")


def cmd_test(args) -> int:
    cfg = _resolve(
        args,
        ["input", "theta", "measure", "backend", "reps", "grid_size", "seed", "output", "artifact"],
    )
    _require(cfg, "input")
    if cfg["theta"] is None and not cfg["measure"]:
        raise ConfigError("need --theta (known-exponent test) or --measure (estimated)")
    backend_name = cfg["backend"] or "auto"
    reps = int(cfg["reps"]) if cfg["reps"] is not None else 100_000
    grid_size = int(cfg["grid_size"]) if cfg["grid_size"] is not None else 256
    seed = int(cfg["seed"]) if cfg["seed"] is not None else 0
    digest = _config_digest({"command": "test", **{k: cfg[k] for k in
                            ("input", "theta", "measure", "backend", "reps", "grid_size", "seed")}})
    backend = _make_backend(backend_name, grid_size, reps, seed)
    measure = _parse_measure(cfg["measure"]) if cfg["theta"] is None else None
    artifact = cfg["artifact"]
    if artifact is None and cfg["output"]:
        artifact = str(cfg["output"]) + ".null"
    if artifact and Path(artifact).exists():
        _load_test_artifact(backend, artifact, measure)
    stream = _read_labeled_stream(cfg["input"])
    if cfg["theta"] is not None:
        report = run_known_theta_test(stream, float(cfg["theta"]), backend)
    else:
        report = run_estimated_theta_test(stream, measure, backend)
    print(f"# urnbridge test seed={seed} digest={digest}")
    sys.stdout.write(report.to_text())
    if cfg["output"]:
        doc = json.loads(report.to_json())
        doc["provenance"] = {"command": "test", "seed": seed, "digest": digest}
        Path(cfg["output"]).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
    if artifact and not Path(artifact).exists():
        _persist_test_artifact(backend, report, measure, artifact,
                               provenance={"command": "test", "run_seed": seed, "digest": digest})
    return 0


def cmd_tabulate(args) -> int:
    cfg = _resolve(
        args,
        ["theta", "variant", "measure", "backend", "reps", "grid_size", "seed", "output"],
    )
    _require(cfg, "theta", "output")
    theta = float(cfg["theta"])
    variant = cfg["variant"] or "known"
    if variant not in ("known", "estimated"):
        raise ConfigError("variant must be 'known' or 'estimated'")
    measure = _parse_measure(cfg["measure"])
    if variant == "estimated" and measure is None:
        raise ConfigError("estimated variant requires --measure")
    backend_name = cfg["backend"] or "montecarlo"
    reps = int(cfg["reps"]) if cfg["reps"] is not None else 100_000
    grid_size = int(cfg["grid_size"]) if cfg["grid_size"] is not None else 256
    seed = int(cfg["seed"]) if cfg["seed"] is not None else 0
    digest = _config_digest({"command": "tabulate", "theta": theta, "variant": variant,
                             "measure": cfg["measure"], "backend": backend_name,
                             "reps": reps, "grid_size": grid_size, "seed": seed})
    provenance = {"command": "tabulate", "digest": digest}
    if backend_name == "montecarlo":
        sample = limit_w2_sample(theta, variant=variant, measure=measure,
                                 grid_size=grid_size, reps=reps, seed=seed)
        sample.save(cfg["output"], extra_header=provenance)
        print(f"wrote montecarlo null sample ({reps} values) to {cfg['output']} (digest={digest})")
    elif backend_name == "spectral":
        m = max(grid_size, 256)
        model = nystrom_eigs(theta, variant=variant, measure=measure, m=m, kmax=m // 4)
        model.save(cfg["output"], extra_header=provenance)
        print(f"wrote spectral model ({len(model.lambdas)} eigenvalues) to {cfg['output']} (digest={digest})")
    else:
        raise ConfigError("tabulate backend must be 'montecarlo' or 'spectral'")
    return 0


def cmd_covcheck(args) -> int:
    cfg = _resolve(args, ["theta", "n", "reps", "seed", "support"])
    _require(cfg, "theta", "n", "reps")
    theta = float(cfg["theta"])
    n = int(cfg["n"])
    reps = int(cfg["reps"])
    seed = int(cfg["seed"]) if cfg["seed"] is not None else 0
    support = int(cfg["support"]) if cfg["support"] is not None else tail_safe_truncation(theta, 2 * n)
    law = zipf_law(theta, support)
    grid = np.array(_DEFAULT_GRID)
    digest = _config_digest({"command": "covcheck", "theta": theta, "n": n, "reps": reps,
                             "seed": seed, "support": support})
    print(f"# covcheck theta={theta!r} n={n} reps={reps} seed={seed} support={support} digest={digest}")
    mean_n = exact_mean_occupancy(law, n)
    ks = np.floor(n * grid + 1e-9).astype(int)
    means = np.array([exact_mean_occupancy(law, int(k)) for k in ks])

    def table(scheme, emp_primary, emp_cross, ref_fn, note):
        print(f"# scheme={scheme} ({note})")
        print("scheme\tside\ts\tt\tempirical\treference\tz")
        for label, data, ref in (("same", emp_primary, "K"), ("cross", emp_cross, "Kp")):
            for i, s in enumerate(grid):
                for j, t in enumerate(grid):
                    if label == "same" and j < i:
                        continue
                    a = data[0][:, i]
                    b = data[1][:, j]
                    prod = (a - a.mean()) * (b - b.mean())
                    emp = prod.mean()
                    se = prod.std(ddof=1) / np.sqrt(reps) if reps > 1 else float("nan")
                    refv = ref_fn(label, s, t)
                    z = (emp - refv) / se if se and np.isfinite(se) and se > 0 else float("nan")
                    print(f"{scheme}\t{label}\t{_fmt(s)}\t{_fmt(t)}\t{_fmt(emp)}\t{_fmt(refv)}\t{_fmt(z)}")

    # fixed-n scheme, compared against the limit kernels
    fwd, bwd = occupancy_checkpoints(law, n, grid, reps, seed)
    zf = (fwd - means[None, :]) / np.sqrt(mean_n)
    zb = (bwd - means[None, :]) / np.sqrt(mean_n)

    def limit_ref(label, s, t):
        return cov_kernel(theta, s, t) if label == "same" else cross_cov_kernel(theta, s, t)

    table("fixed-n", (zf, zf), (zf, zb), limit_ref, "reference: limit kernels")

    # Poissonized scheme, compared against the exact covariance identity
    pfwd, pbwd = poissonized_checkpoints(law, n, grid, reps, seed)

    def exact_ref(label, s, t):
        if label == "same":
            # same-direction Poissonized covariance: occupancy of nested windows
            lo, hi = min(s, t), max(s, t)
            return poisson_mean_occupancy(law, (lo + hi) * n) - poisson_mean_occupancy(law, hi * n)
        return poissonized_occupancy_cov(law, n, s, t)

    table("poissonized", (pfwd, pfwd), (pfwd, pbwd), exact_ref, "reference: exact identity")
    if reps == 1:
        print("# warning: reps=1, z-scores undefined")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="urnbridge",
        description="Occupancy processes, exponent estimation, and homogeneity tests for infinite urn schemes.",
    )
    parser.add_argument("--version", action="version", version=f"urnbridge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int, help="master RNG seed (default 0)")

    p = sub.add_parser("simulate", help="sample a stream from a power-law urn scheme")
    add_common(p)
    p.add_argument("--theta", type=float, help="growth exponent in (0,1)")
    p.add_argument("--n", type=int, help="stream length")
    p.add_argument("--support", type=int, help="urn support size (default: tail-safe)")
    p.add_argument("--output", help="stream file to write")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate the exponent of a recorded stream")
    add_common(p)
    p.add_argument("--input", help="stream file (one token per line)")
    p.add_argument("--measure", action="append",
                   help="'example1' or repeated 'atom=t:h' atoms (default example1)")
    p.add_argument("--output", help="optional file for the report")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("test", help="homogeneity test of a recorded stream")
    add_common(p)
    p.add_argument("--input", help="stream file")
    p.add_argument("--theta", type=float, help="hypothesized exponent (known-exponent test)")
    p.add_argument("--measure", action="append",
                   help="estimator measure for the estimated-exponent test")
    p.add_argument("--backend", choices=["auto", "montecarlo", "spectral"],
                   help="null CDF backend (default auto)")
    p.add_argument("--reps", type=int, help="Monte Carlo tabulation size (default 100000)")
    p.add_argument("--grid-size", dest="grid_size", type=int,
                   help="simulation grid / quadrature size (default 256)")
    p.add_argument("--output", help="write the report as JSON here")
    p.add_argument("--artifact", help="persist/reuse the null-distribution artifact here")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("tabulate", help="precompute a null-distribution artifact")
    add_common(p)
    p.add_argument("--theta", type=float)
    p.add_argument("--variant", choices=["known", "estimated"])
    p.add_argument("--measure", action="append")
    p.add_argument("--backend", choices=["montecarlo", "spectral"])
    p.add_argument("--reps", type=int)
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.add_argument("--output", help="artifact file to write")
    p.set_defaults(func=cmd_tabulate)

    p = sub.add_parser("covcheck", help="empirical vs exact/limit covariance diagnostics")
    add_common(p)
    p.add_argument("--theta", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--support", type=int)
    p.set_defaults(func=cmd_covcheck)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
