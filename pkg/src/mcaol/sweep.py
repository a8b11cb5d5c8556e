"""Replicate sweep: methods x parameter grid x noise replicates.

One sweep simulates `replicates` noisy acquisitions of a preset's
ground truth, reconstructs every (method, parameter, replicate) cell,
and reduces each (method, parameter) group to an (STD, AbsBias) point
per channel.  Output is one CSV and one figure per channel plus a run
manifest.

Determinism contract: replicate r draws its low then high sinogram
from a fresh generator seeded with seed + r, so every method and every
parameter sees identical data, and rerunning a spec reproduces the
CSVs byte for byte.
"""

from __future__ import annotations

import json
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .learning import TrainConfig, caol_train, mcaol_train
from .metrics import abs_bias, std_metric, support_region
from .optim import SolverConfig
from .phantom import get_preset, make_phantom, training_phantoms
from .physics import mean_counts, sample_poisson
from .projector import build_system_matrix, cached_system_matrix
from .recon import (ReconConfig, caol_pwls_reconstruct, caol_reconstruct,
                    jtv_reconstruct, mcaol_reconstruct, mle_reconstruct,
                    tv_reconstruct)
from .types import ChannelPair

__all__ = ["SweepSpec", "run_sweep", "DEFAULT_GRIDS", "METHODS"]

METHODS = ("mcaol", "caol", "caol-pwls", "tv", "jtv", "none")

# Regularization grids: four decades, log spaced.  The prior-free
# baseline has no knob, hence the single dummy point.
DEFAULT_GRIDS = {
    "mcaol": tuple(np.logspace(0.0, 4.0, 5)),
    "caol": tuple(np.logspace(0.0, 4.0, 5)),
    "caol-pwls": tuple(np.logspace(0.0, 4.0, 5)),
    "tv": tuple(np.logspace(2.0, 6.0, 5)),
    "jtv": tuple(np.logspace(2.0, 6.0, 5)),
    "none": (0.0,),
}

_TRAIN_DEFAULTS = {"filter_size": 5, "filter_count": 25, "alpha": 1e-5,
                   "gammas": (1e5, 1e5), "pairs": 5, "max_outer": 300,
                   "tol": 1e-5, "normalize": False}

_RECON_DEFAULTS = {"n_outer": 30, "init_iters": 50, "inner_iters": 25,
                   "solve_iters": 400, "epsilon": 1e-8, "grad_tol": 1e-7}


@dataclass(frozen=True)
class SweepSpec:
    """Declarative sweep description, JSON round-trippable.

    `grids` may override the per-method parameter grid (data weight rho
    for the learned priors, edge weight beta for the TV pair); missing
    methods fall back to DEFAULT_GRIDS.  `train` and `recon` override
    the training / reconstruction budget defaults field by field.
    """

    preset: str
    methods: tuple = ("mcaol", "caol", "tv")
    grids: dict = field(default_factory=dict)
    replicates: int | None = None
    seed: int = 0
    workers: int = 1
    train: dict = field(default_factory=dict)
    recon: dict = field(default_factory=dict)

    def __post_init__(self):
        get_preset(self.preset)
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; have {sorted(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("duplicate method in sweep")
        for m in self.grids:
            if m not in METHODS:
                raise ValueError(f"grid for unknown method {m!r}")
        if self.replicates is not None and self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @classmethod
    def from_mapping(cls, data: dict) -> "SweepSpec":
        known = {"preset", "methods", "grids", "replicates", "seed",
                 "workers", "train", "recon"}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown sweep keys {sorted(extra)}")
        if "preset" not in data:
            raise ValueError("sweep spec needs a preset")
        out = dict(data)
        if "methods" in out:
            out["methods"] = tuple(out["methods"])
        if "grids" in out:
            out["grids"] = {m: tuple(float(v) for v in g)
                            for m, g in out["grids"].items()}
        return cls(**out)

    @classmethod
    def from_json(cls, path) -> "SweepSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(json.load(fh))

    def to_mapping(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["grids"] = {m: list(g) for m, g in self.grids.items()}
        return d

    def grid_for(self, method: str) -> tuple:
        grid = tuple(float(v) for v in self.grids.get(method, DEFAULT_GRIDS[method]))
        if not grid:
            raise ValueError(f"empty grid for {method!r}")
        return grid

    def n_replicates(self) -> int:
        if self.replicates is not None:
            return self.replicates
        return get_preset(self.preset).replicates


def _train_config(spec: SweepSpec) -> tuple[TrainConfig, int]:
    opts = {**_TRAIN_DEFAULTS, **spec.train}
    pairs = int(opts.pop("pairs"))
    if pairs < 1:
        raise ValueError("need at least one training pair")
    opts.setdefault("seed", spec.seed)
    if "gammas" in opts:
        opts["gammas"] = tuple(float(g) for g in opts["gammas"])
    return TrainConfig(**opts), pairs


def _recon_configs(spec: SweepSpec, tcfg: TrainConfig) -> tuple[ReconConfig, ReconConfig]:
    """Outer-loop budget for the learned priors, single-solve budget for
    the rest.  Prior strengths come from the training configuration."""
    opts = {**_RECON_DEFAULTS, **spec.recon}
    inner = SolverConfig(max_iter=int(opts["inner_iters"]),
                         grad_tol=float(opts["grad_tol"]))
    single = SolverConfig(max_iter=int(opts["solve_iters"]),
                          grad_tol=float(opts["grad_tol"]))
    learned = ReconConfig(gammas=tcfg.gammas, alpha=tcfg.alpha,
                          epsilon=float(opts["epsilon"]),
                          n_outer=int(opts["n_outer"]),
                          init_iters=int(opts["init_iters"]), inner=inner)
    smooth = ReconConfig(epsilon=float(opts["epsilon"]), inner=single)
    return learned, smooth


def _git_describe() -> str | None:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10)
    except OSError:
        return None
    return out.stdout.strip() if out.returncode == 0 else None


def train_banks(spec: SweepSpec, corpus=None) -> dict:
    """Train the filter banks a sweep needs: a coupled pair for the
    joint prior, per-channel banks for the uncoupled ones.  Returns a
    possibly empty dict keyed by method family."""
    tcfg, pairs = _train_config(spec)
    need_joint = "mcaol" in spec.methods
    need_single = any(m in spec.methods for m in ("caol", "caol-pwls"))
    if not (need_joint or need_single):
        return {}
    if corpus is None:
        corpus = training_phantoms(spec.preset, pairs, spec.seed + 1000)
    banks = {}
    if need_joint:
        banks["mcaol"] = mcaol_train(corpus, tcfg)
    if need_single:
        banks["caol"] = ChannelPair(
            caol_train([p.low for p in corpus], tcfg),
            caol_train([p.high for p in corpus], tcfg),
            corpus[0].labels)
    return banks


def simulate_replicates(preset, sm, gt: ChannelPair, n: int, seed: int) -> list:
    """Noisy sinogram pairs for replicates 0..n-1, one generator per
    replicate seeded seed + r, low channel drawn before high."""
    srcs = preset.sources()
    means = [mean_counts(sm, gt.low.array, srcs.low),
             mean_counts(sm, gt.high.array, srcs.high)]
    out = []
    for r in range(n):
        rng = np.random.default_rng(seed + r)
        out.append((sample_poisson(means[0], rng), sample_poisson(means[1], rng)))
    return out


_CTX: dict = {}


def _set_context(ctx: dict) -> None:
    global _CTX
    _CTX = ctx


def _run_cell(key: tuple) -> tuple:
    """One (method, parameter, replicate) reconstruction; returns the
    flattened pair of channel images."""
    method, param, rep = key
    c = _CTX
    ys = c["sinograms"][rep]
    sm, srcs = c["sm"], c["srcs"]
    learned, smooth = c["learned_cfg"], c["smooth_cfg"]
    if method == "mcaol":
        b = c["banks"]["mcaol"]
        cfg = ReconConfig(rhos=(param, param), gammas=learned.gammas,
                          alpha=learned.alpha, epsilon=learned.epsilon,
                          n_outer=learned.n_outer, init_iters=learned.init_iters,
                          inner=learned.inner)
        xs = mcaol_reconstruct(list(ys), sm, [srcs.low, srcs.high],
                               [b.low, b.high], cfg)
        return key, (xs[0].ravel(), xs[1].ravel())
    if method in ("caol", "caol-pwls"):
        b = c["banks"]["caol"]
        fn = caol_reconstruct if method == "caol" else caol_pwls_reconstruct
        xs = [fn(ys[e], sm, srcs.as_tuple()[e], b.as_tuple()[e], learned,
                 rho=param) for e in range(2)]
        return key, (xs[0].ravel(), xs[1].ravel())
    if method == "tv":
        xs = [tv_reconstruct(ys[e], sm, srcs.as_tuple()[e], smooth, rho=1.0,
                             beta=param) for e in range(2)]
        return key, (xs[0].ravel(), xs[1].ravel())
    if method == "jtv":
        xs = jtv_reconstruct(list(ys), sm, [srcs.low, srcs.high], smooth,
                             beta=param)
        return key, (xs[0].ravel(), xs[1].ravel())
    if method == "none":
        xs = [mle_reconstruct(ys[e], sm, srcs.as_tuple()[e], smooth)
              for e in range(2)]
        return key, (xs[0].ravel(), xs[1].ravel())
    raise ValueError(f"unknown method {method!r}")


def _format_rows(rows) -> str:
    lines = ["method,param,std,absbias"]
    for method, param, std, bias in rows:
        lines.append(f"{method},{param!r},{std!r},{bias!r}")
    return "\n".join(lines) + "\n"


def run_sweep(spec: SweepSpec, out_dir, cache_dir=None, banks=None,
              gt=None, progress=None) -> dict:
    """Execute a sweep and write per-channel CSVs, figures and the run
    manifest under `out_dir`.  Returns the result table and file paths.

    `banks` short-circuits training (dict with "mcaol" and/or "caol"
    ChannelPair entries); `gt` overrides the preset phantom; `progress`
    gets (done, total) after each cell.
    """
    from .plots import render_curves

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    preset = get_preset(spec.preset)
    if gt is None:
        gt = make_phantom(preset)
    n_rep = spec.n_replicates()

    geometry = preset.geometry()
    if cache_dir is not None:
        sm = cached_system_matrix(geometry, preset.image_size, cache_dir)
    else:
        sm = build_system_matrix(geometry, preset.image_size)

    if banks is None:
        banks = train_banks(spec)
    tcfg, _ = _train_config(spec)
    learned_cfg, smooth_cfg = _recon_configs(spec, tcfg)

    sinograms = simulate_replicates(preset, sm, gt, n_rep, spec.seed)
    ctx = {"sinograms": sinograms, "sm": sm, "srcs": preset.sources(),
           "banks": banks, "learned_cfg": learned_cfg, "smooth_cfg": smooth_cfg}

    keys = [(m, p, r) for m in spec.methods for p in spec.grid_for(m)
            for r in range(n_rep)]
    results: dict = {}
    done = 0
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers,
                                 initializer=_set_context,
                                 initargs=(ctx,)) as pool:
            for key, val in pool.map(_run_cell, keys):
                results[key] = val
                done += 1
                if progress:
                    progress(done, len(keys))
    else:
        _set_context(ctx)
        for key in keys:
            key, val = _run_cell(key)
            results[key] = val
            done += 1
            if progress:
                progress(done, len(keys))

    masks = [support_region(gt.low.array), support_region(gt.high.array)]
    gts = [gt.low.array, gt.high.array]
    n = preset.image_size
    rows: list[list] = [[], []]
    for method in spec.methods:
        for param in spec.grid_for(method):
            stacks = [[results[(method, param, r)][e].reshape(n, n)
                       for r in range(n_rep)] for e in range(2)]
            for e in range(2):
                bias = abs_bias(stacks[e], gts[e], masks[e])
                std = (float("nan") if n_rep < 2
                       else std_metric(stacks[e], region=masks[e]))
                rows[e].append((method, float(param), std, bias))

    names = ("low", "high")
    csv_paths, fig_paths = {}, {}
    for e, name in enumerate(names):
        csv_path = out_dir / f"curves_{name}.csv"
        csv_path.write_text(_format_rows(rows[e]), encoding="utf-8")
        csv_paths[name] = csv_path
        fig_path = out_dir / f"curves_{name}.png"
        render_curves(rows[e], fig_path,
                      title=f"{spec.preset} {name} ({gt.labels[e]:g} keV)")
        fig_paths[name] = fig_path

    manifest = {
        "tool": "mcaol", "version": __version__, "git": _git_describe(),
        "preset": spec.preset, "seed": spec.seed, "replicates": n_rep,
        "spec": spec.to_mapping(),
        "grids": {m: list(spec.grid_for(m)) for m in spec.methods},
        "outputs": sorted(str(p.name) for p in (*csv_paths.values(),
                                                *fig_paths.values())),
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    return {"rows": {"low": rows[0], "high": rows[1]}, "csv": csv_paths,
            "figures": fig_paths, "manifest": manifest_path, "banks": banks,
            "gt": gt}
