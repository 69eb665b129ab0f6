"""Command-line driver: ``tempo-im <experiment> --config <file>``.

The config is plain text with one ``key = value`` per line; values are Python
literals (numbers, strings, lists, ``None``) and ``#`` starts a comment.  A
list on a sweep key expands into independent jobs (cartesian product); an
empty list falls back to the key's default.  Each experiment writes one or
more CSV tables plus ``manifest.json`` into the output directory.

Exit codes: 0 ok, 2 config error, 3 resource limit hit (partial output kept).
"""

from __future__ import annotations

import argparse
import ast
import hashlib
import io
import itertools
import json
import math
import os
import sys
import time
import tokenize
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from ._csvio import write_csv
from .analysis import (
    autocorrelator,
    butterfly_velocity,
    entropy_bounds,
    norm_scaling_fit,
    otoc_grid,
    pd_decompose,
    truncation_error,
)
from .im_core import coarse_grain, save_mps, schmidt_spectrum, temporal_entropy, uniform_mask
from .kim import BathInitialState, KimParams, lcga_build
from .toy_bath import (
    ToyBathParams,
    annealed_renyi2,
    asymptotic_renyi2,
    coarse_grain_params,
    im_purity_closed_form,
    inout_purity_closed_form,
    mc_haar_stats,
    pd_trace_distance_bound,
    round_half_up,
)

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE = 0, 2, 3


class ConfigError(Exception):
    pass


@dataclass
class Config:
    path: str
    values: dict
    lines: dict

    def where(self, key: str) -> str:
        return f"{self.path}:{self.lines[key]}" if key in self.lines else self.path


def parse_config(text: str, path: str = "<config>") -> Config:
    values, lines = {}, {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw, path, n)
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep or not key.isidentifier():
            raise ConfigError(f"{path}:{n}: expected 'key = value', got {raw.strip()!r}")
        if key in values:
            raise ConfigError(f"{path}:{n}: duplicate key {key!r} (first set on line {lines[key]})")
        try:
            values[key] = ast.literal_eval(val.strip())
        except (ValueError, SyntaxError):
            raise ConfigError(f"{path}:{n}: cannot parse value for {key!r}: {val.strip()!r}") from None
        lines[key] = n
    return Config(path, values, lines)


def _strip_comment(raw: str, path: str, n: int) -> str:
    try:
        toks = list(tokenize.generate_tokens(io.StringIO(raw).readline))
    except (tokenize.TokenError, SyntaxError) as e:
        raise ConfigError(f"{path}:{n}: cannot tokenize line: {e}") from None
    for tok in toks:
        if tok.type == tokenize.COMMENT:
            return raw[: tok.start[1]].strip()
    return raw.strip()


# ----------------------------------------------------------------- experiments

Rows = dict[str, list[tuple]]


@dataclass(frozen=True)
class Experiment:
    defaults: dict
    sweep: tuple[str, ...]  # keys whose lists become separate jobs
    lists: tuple[str, ...]  # keys that are always lists, looped inside a job
    tables: dict[str, tuple[str, ...]]
    plan: Callable[[dict], object]  # validated job argument
    run: Callable[[object, dict], Rows]


def _kim(c: dict) -> KimParams:
    return KimParams(c["g"], c["J"], c["h"], c["g0"])


def _bath(c: dict) -> BathInitialState:
    return BathInitialState(c["initial"], c["phi"]) if c["initial"] == "tilted" else BathInitialState(c["initial"])


KIM_DEFAULTS = {"g": math.pi / 4, "J": math.pi / 4, "h": 0.5, "g0": None, "initial": "tilted", "phi": 0.7}


def _toy_static_plan(c):
    base = ToyBathParams(d=c["d"], b=c["b"], T=c["T"], initial=c["initial"])
    if not c["r"]:
        return [base]
    return [ToyBathParams(d=c["d"], b=c["b"], T=round_half_up(r * c["b"]), initial=c["initial"]) for r in c["r"]]


def _toy_static_run(plist, c):
    rows = []
    for pr in plist:
        rows.append((pr.d, pr.b, pr.T, pr.p, pr.T / pr.b if pr.b else math.inf, pr.initial,
                     annealed_renyi2(pr), asymptotic_renyi2(pr.D_B, pr.T / pr.b, pr.d) if pr.b else math.nan))
    return {"renyi2": rows}


def _toy_growing_plan(c):
    Ts = c["T"] or [8]
    out = []
    for T in Ts:
        pr = ToyBathParams(d=c["d"], T=T, initial=c["initial"], mode="growing", v_B=c["v_B"])
        out.append(coarse_grain_params(pr, c["n_cg"]) if c["n_cg"] != 1 else pr)
    return out


def _toy_growing_run(plist, c):
    rows = [(c["v_B"], c["n_cg"], T0, pr.T, pr.p, pr.v_B, annealed_renyi2(pr)) for T0, pr in zip(c["T"] or [8], plist)]
    slope = math.nan
    if len(rows) > 1:
        slope = float(np.polyfit([r[2] for r in rows], [r[-1] for r in rows], 1)[0])
    return {"renyi2": rows, "slopes": [(c["v_B"], c["n_cg"], slope)]}


def _toy_mc_plan(c):
    return ToyBathParams(d=c["d"], b=c["b"], T=c["T"], p=c["p"], initial=c["initial"])


def _toy_mc_run(pr, c):
    st = mc_haar_stats(pr, c["n_samples"], c["seed"], workers=c["workers"])
    s2, s2_se = st.renyi2_estimate()
    fro = st.frobenius_pd()
    bound = pd_trace_distance_bound(pr)
    return {
        "mc": [
            ("purity_i", st.means["purity_i"], st.ses["purity_i"], im_purity_closed_form(pr)[0]),
            ("purity_inout", st.means["purity_inout"], st.ses["purity_inout"], inout_purity_closed_form(pr)),
            ("renyi2", s2, s2_se, annealed_renyi2(pr)),
            ("frobenius_pd", float(fro.mean()), float(fro.std(ddof=1) / math.sqrt(len(fro))), bound),
            ("fraction_below_bound", float(np.mean(fro <= bound)), math.nan, 1.0),
        ]
    }


def _kim_plan(c):
    return _kim(c), _bath(c)


def _build(c, params, bath):
    return lcga_build(params, c["T"], bath, chi_max=c["chi_max"], svd_tol=c["svd_tol"])


def _kim_te_run(job, c):
    params, bath = job
    mps = _build(c, params, bath)
    save_mps(Path(c["out"]) / f"im_T{c['T']}_chi{c['chi_max']}_phi{c['phi']:g}.tim", mps)
    spectra, svals = [], []
    for p in range(mps.T + 1):
        sp = schmidt_spectrum(mps, p)
        spectra.append((c["T"], c["chi_max"], c["phi"], p, len(sp.values),
                        temporal_entropy(sp, 1, 2), temporal_entropy(sp, 2, 2), mps.discarded[p] if mps.discarded else 0.0))
        svals.extend((c["T"], c["chi_max"], c["phi"], p, i, v) for i, v in enumerate(mps.singular_values[p]))
    return {"spectra": spectra, "singular_values": svals}


def _kim_cg_run(job, c):
    params, bath = job
    mps = _build(c, params, bath)
    rows = []
    for n in c["n_cg"] or [1.0]:
        im = mps if n == 1 else coarse_grain(mps, uniform_mask(mps.T, n))
        for p in range(im.T + 1):
            sp = schmidt_spectrum(im, p)
            rows.append((c["T"], n, im.T, p, len(sp.values), temporal_entropy(sp, 1, 2)))
    return {"te": rows}


def _kim_corr_run(job, c):
    params, bath = job
    chis = sorted(c["chi"]) or [c["chi_max"]]
    ref_chi = c["chi_ref"] or max(x for x in chis if x is not None)
    ref = autocorrelator(lcga_build(params, c["T"], bath, chi_max=ref_chi, svd_tol=c["svd_tol"]), params)
    rows = []
    for chi in chis:
        s = ref if chi == ref_chi else autocorrelator(
            lcga_build(params, c["T"], bath, chi_max=chi, svd_tol=c["svd_tol"]), params)
        err = truncation_error(s, ref)
        for i, t in enumerate(s.times):
            rows.append((chi, ref_chi, int(t), float(np.real(s.values[i])), err.delta[i], err.delta_avg[i], err.abs_error[i]))
    return {"series": rows}


def _kim_otoc_run(job, c):
    params, _ = job
    grid = otoc_grid(params, c["L"], c["t_max"])
    rows = [(params.g, params.J, params.h, r, t, grid.values[t, r]) for t in range(grid.t_max + 1) for r in range(grid.L)]
    try:
        v, spread = butterfly_velocity(grid, tuple(c["thresholds"]), c["n_thresholds"])
    except ValueError:
        v, spread = math.nan, math.nan
    return {"otoc": rows, "velocity": [(params.g, params.J, params.h, c["L"], v, spread)]}


def _kim_decompose_run(job, c):
    params, bath = job
    mps = _build(c, params, bath)
    dec, bnd = [], []
    for n in c["n_cg"] or [1.0]:
        im = mps if n == 1 else coarse_grain(mps, uniform_mask(mps.T, n))
        rep = pd_decompose(im, c["p"], measure_entropies=c["measure_entropies"])
        try:
            fit = norm_scaling_fit(rep, n != 1, n)
            fit_vals = (fit.C, fit.slope, fit.residual)
        except ValueError:
            fit_vals = (math.nan,) * 3
        eb = entropy_bounds(rep, component_entropies=rep.entropy_source, coarse_grained=n != 1, n_cg=n,
                            C=fit_vals[0] if n != 1 and not math.isnan(fit_vals[0]) else None)
        dec.extend((n, k, rep.inner_norms[k], rep.norms2[k], rep.weights[k], rep.component_entropies[k])
                   for k in range(rep.T + 1))
        bnd.append((n, rep.T, rep.p, eb.S_mix, eb.S_cl, eb.lower, eb.upper, rep.S_te,
                    eb.S_mix_cap if eb.S_mix_cap is not None else math.nan, *fit_vals))
    return {"decomposition": dec, "bounds": bnd}


_TE_COLS = {
    "spectra": ("T", "chi_max", "phi", "p", "chi", "S_vN", "S_2", "discarded"),
    "singular_values": ("T", "chi_max", "phi", "p", "index", "value"),
}
_LCGA = {"T": 8, "chi_max": None, "svd_tol": 0.0}

EXPERIMENTS: dict[str, Experiment] = {
    "toy-static": Experiment(
        {"d": 2, "b": 64, "T": 4, "r": [], "initial": "pure"},
        ("d", "b", "initial"), ("r",),
        {"renyi2": ("d", "b", "T", "p", "r", "initial", "S2_annealed", "S2_asymptotic")},
        _toy_static_plan, _toy_static_run),
    "toy-growing": Experiment(
        {"d": 2, "v_B": 1.0, "T": [8, 10, 12, 14, 16], "n_cg": 1.0, "initial": "pure"},
        ("d", "v_B", "n_cg", "initial"), ("T",),
        {"renyi2": ("v_B", "n_cg", "T", "T_eff", "p_eff", "v_B_eff", "S2_annealed"),
         "slopes": ("v_B", "n_cg", "slope")},
        _toy_growing_plan, _toy_growing_run),
    "toy-mc": Experiment(
        {"d": 2, "b": 3, "T": 4, "p": None, "initial": "pure", "n_samples": 500},
        ("b", "T", "initial"), (),
        {"mc": ("quantity", "mean", "se", "reference")},
        _toy_mc_plan, _toy_mc_run),
    "kim-te": Experiment(
        {**KIM_DEFAULTS, **_LCGA}, ("g", "J", "h", "phi", "T", "chi_max"), (), _TE_COLS,
        _kim_plan, _kim_te_run),
    "kim-cg": Experiment(
        {**KIM_DEFAULTS, **_LCGA, "n_cg": [1.0, 0.5]}, ("g", "J", "h", "phi", "T", "chi_max"), ("n_cg",),
        {"te": ("T", "n_cg", "T_cg", "p", "chi", "S_vN")},
        _kim_plan, _kim_cg_run),
    "kim-corr": Experiment(
        {**KIM_DEFAULTS, **_LCGA, "g": math.pi / 4, "J": 0.65 * math.pi / 4, "initial": "maximally_mixed",
         "T": 14, "chi": [16, 64, 256], "chi_ref": None},
        ("g", "J", "h", "T"), ("chi",),
        {"series": ("chi", "chi_ref", "T", "C_zz", "delta", "delta_avg", "delta_abs")},
        _kim_plan, _kim_corr_run),
    "kim-otoc": Experiment(
        {**KIM_DEFAULTS, "L": 10, "t_max": None, "thresholds": [0.3, 0.6], "n_thresholds": 7},
        ("g", "J", "h", "L"), ("thresholds",),
        {"otoc": ("g", "J", "h", "r", "t", "C"), "velocity": ("g", "J", "h", "L", "v_B", "v_B_spread")},
        _kim_plan, _kim_otoc_run),
    "kim-decompose": Experiment(
        {**KIM_DEFAULTS, **_LCGA, "T": 12, "p": None, "n_cg": [1.0, 0.5], "measure_entropies": True},
        ("g", "J", "h", "phi", "T"), ("n_cg",),
        {"decomposition": ("n_cg", "k", "inner_norm", "N2", "w", "S_k"),
         "bounds": ("n_cg", "T", "p", "S_mix", "S_cl", "lower", "upper", "S_TE", "S_mix_cap",
                    "fit_C", "fit_slope", "fit_residual")},
        _kim_plan, _kim_decompose_run),
}

RUNTIME_KEYS = {"experiment", "seed", "workers", "out"}


def _check_types(cfg: Config, exp: Experiment) -> None:
    for key, val in cfg.values.items():
        if key in RUNTIME_KEYS:
            continue
        if key not in exp.defaults:
            raise ConfigError(f"{cfg.where(key)}: unknown key {key!r}; allowed: {', '.join(sorted(exp.defaults))}")
        items = val if isinstance(val, list) else [val]
        if isinstance(val, list) and key not in exp.sweep + exp.lists:
            raise ConfigError(f"{cfg.where(key)}: {key!r} cannot be swept")
        ref = exp.defaults[key]
        for item in items:
            ok = (
                item is None
                or (isinstance(ref, str) and isinstance(item, str))
                or (isinstance(ref, bool) and isinstance(item, bool))
                or (not isinstance(ref, (str, bool)) and isinstance(item, (int, float)) and not isinstance(item, bool))
            )
            if not ok:
                raise ConfigError(f"{cfg.where(key)}: bad value {item!r} for {key!r}")


def expand_jobs(cfg: Config, exp: Experiment) -> list[dict]:
    """Resolved per-job settings in deterministic (row-major) order."""
    merged = {**exp.defaults, **{k: v for k, v in cfg.values.items() if k not in RUNTIME_KEYS}}
    axes = []
    for key in exp.sweep:
        val = merged[key]
        if isinstance(val, list):
            axes.append([(key, v) for v in val] or [(key, exp.defaults[key])])
        else:
            axes.append([(key, val)])
    for key in exp.lists:
        if not isinstance(merged[key], list):
            merged[key] = [merged[key]]
    return [{**merged, **dict(combo)} for combo in itertools.product(*axes)]


def config_hash(experiment: str, values: dict) -> str:
    blob = json.dumps({"experiment": experiment, **values}, sort_keys=True, default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def run(experiment: str, cfg: Config, out: Path, seed: int, workers: int) -> int:
    exp = EXPERIMENTS[experiment]
    _check_types(cfg, exp)
    jobs = expand_jobs(cfg, exp)
    for job in jobs:
        job.update(seed=seed, workers=workers, out=str(out))
    planned = []
    for job in jobs:
        try:
            planned.append(exp.plan(job))
        except (ValueError, TypeError) as e:
            swept = [k for k in exp.sweep + exp.lists if k in cfg.lines]
            loc = ", ".join(cfg.where(k) for k in swept) or cfg.path
            raise ConfigError(f"{loc}: invalid parameters: {e}") from None
    resolved = {**cfg.values, "seed": seed}
    resolved.pop("out", None)
    resolved.pop("workers", None)
    digest = config_hash(experiment, resolved)
    out.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()
    results, status, error = [None] * len(jobs), "ok", None
    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(jobs)))) as pool:
        futures = [pool.submit(exp.run, p, j) for p, j in zip(planned, jobs)]
        for i, fut in enumerate(futures):
            try:
                results[i] = fut.result()
            except MemoryError as e:
                status, error = "resource_limit", str(e)
    meta = {"tempo-im": __version__, "experiment": experiment, "config_hash": digest, "seed": seed}
    if status != "ok":
        meta["status"] = "partial"
    files = []
    for name, cols in exp.tables.items():
        rows = [row for res in results if res is not None for row in res.get(name, [])]
        path = out / f"{experiment}_{name}.csv"
        write_csv(path, list(cols), rows, meta)
        files.append(path.name)
    manifest = {
        "version": __version__,
        "experiment": experiment,
        "config_hash": digest,
        "config": resolved,
        "seed": seed,
        "workers": workers,
        "jobs": len(jobs),
        "completed": sum(r is not None for r in results),
        "status": status,
        "error": error,
        "wall_time_s": time.perf_counter() - start,
        "outputs": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=repr) + "\n")
    return EXIT_OK if status == "ok" else EXIT_RESOURCE


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="tempo-im", description=__doc__.split("\n\n")[0])
    ap.add_argument("experiment", choices=sorted(EXPERIMENTS))
    ap.add_argument("--config", required=True, help="key = value config file")
    ap.add_argument("--out", help="output directory (default: config 'out' or ./out)")
    ap.add_argument("--seed", type=int, help="u64 seed (default: config 'seed' or 0)")
    ap.add_argument("--workers", type=int, help="worker threads (default: config or CPU count)")
    args = ap.parse_args(argv)
    try:
        text = Path(args.config).read_text()
    except OSError as e:
        print(f"tempo-im: cannot read config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text, args.config)
        declared = cfg.values.get("experiment", args.experiment)
        if declared != args.experiment:
            raise ConfigError(f"{cfg.where('experiment')}: config is for {declared!r}, not {args.experiment!r}")
        seed = args.seed if args.seed is not None else cfg.values.get("seed", 0)
        if not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ConfigError(f"{cfg.where('seed')}: seed must be an integer in [0, 2**64)")
        workers = args.workers or cfg.values.get("workers") or os.cpu_count() or 1
        if not isinstance(workers, int) or workers < 1:
            raise ConfigError(f"{cfg.where('workers')}: workers must be a positive integer")
        out = Path(args.out or cfg.values.get("out", "out"))
        return run(args.experiment, cfg, out, seed, workers)
    except ConfigError as e:
        print(f"tempo-im: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MemoryError as e:
        print(f"tempo-im: resource limit: {e}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
