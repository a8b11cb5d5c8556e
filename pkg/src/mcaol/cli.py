"""Command line front end.

Subcommands cover the full desk study: phantom generation, noisy
acquisition, filter-bank training, reconstruction with any of the
priors, the replicate sweep, and metric tables.  Exit codes: 0 on
success, 1 on usage errors, 2 on data errors (unreadable or mismatched
inputs).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .learning import TrainConfig, caol_train, mcaol_train
from .metrics import abs_bias, std_metric
from .optim import SolverConfig
from .phantom import PRESETS, get_preset, make_phantom, training_phantoms
from .physics import SourceModel, mean_counts, sample_poisson
from .projector import build_system_matrix, cached_system_matrix
from .recon import (ReconConfig, caol_pwls_reconstruct, caol_reconstruct,
                    jtv_reconstruct, mcaol_reconstruct, mle_reconstruct,
                    tv_reconstruct)
from .sweep import SweepSpec, run_sweep
from .types import (ChannelPair, Image, Sinogram, load_bank, load_image,
                    load_sinogram, save_bank, save_image, save_sinogram)

__all__ = ["main"]

_PRIORS = ("mcaol", "caol", "caol-pwls", "tv", "jtv", "none")


class _Parser(argparse.ArgumentParser):
    """argparse parser that exits 1 (not 2) on usage errors, keeping 2
    reserved for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _git_describe():
    from .sweep import _git_describe as gd
    return gd()


def _write_manifest(out_dir: Path, command: str, args: dict, outputs) -> Path:
    manifest = {"tool": "mcaol", "version": __version__, "git": _git_describe(),
                "command": command, "args": args,
                "outputs": sorted(str(o) for o in outputs)}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def _out_dir(ns) -> Path:
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _system_matrix(preset, cache):
    if cache is not None:
        return cached_system_matrix(preset.geometry(), preset.image_size, cache)
    return build_system_matrix(preset.geometry(), preset.image_size)


def _load_pair_images(low, high, labels=(60.0, 120.0)) -> ChannelPair:
    a, b = load_image(low), load_image(high)
    la = a.energy if a.energy is not None else labels[0]
    lb = b.energy if b.energy is not None else labels[1]
    return ChannelPair(a, b, (la, lb))


def _source(preset, ns) -> SourceModel:
    incident = preset.incident if ns.incident is None else ns.incident
    background = preset.background if ns.background is None else ns.background
    return SourceModel(incident, background)


# ---------------------------------------------------------------------------
# subcommands


def _with_headers(raw_paths) -> list:
    out = []
    for p in raw_paths:
        out.append(Path(p))
        out.append(Path(p).with_suffix(".json"))
    return out


def _cmd_phantom(ns) -> int:
    out = _out_dir(ns)
    gt = make_phantom(ns.preset)
    raws = [save_image(gt.low, out / "gt_low"),
            save_image(gt.high, out / "gt_high")]
    if ns.variants:
        for k, pair in enumerate(training_phantoms(ns.preset, ns.variants,
                                                   ns.seed)):
            raws.append(save_image(pair.low, out / f"train_{k:03d}_low"))
            raws.append(save_image(pair.high, out / f"train_{k:03d}_high"))
    outputs = _with_headers(raws)
    if ns.figures:
        from .plots import render_image
        for name, img in (("gt_low", gt.low), ("gt_high", gt.high)):
            fig = out / f"{name}.png"
            render_image(img, fig, title=f"{ns.preset} {name}")
            outputs.append(fig)
    _write_manifest(out, "phantom",
                    {"preset": ns.preset, "variants": ns.variants,
                     "seed": ns.seed}, [Path(o).name for o in outputs])
    print(f"wrote {len(outputs)} files to {out}")
    return 0


def _cmd_simulate(ns) -> int:
    out = _out_dir(ns)
    preset = get_preset(ns.preset)
    gt = _load_pair_images(ns.low, ns.high, preset.labels)
    if gt.low.width != preset.image_size:
        raise ValueError(f"image size {gt.low.width} does not match preset "
                         f"{preset.name} ({preset.image_size})")
    sm = _system_matrix(preset, ns.cache)
    src = _source(preset, ns)
    rng = np.random.default_rng(ns.seed)
    raws = []
    for name, img in (("low", gt.low), ("high", gt.high)):
        counts = sample_poisson(mean_counts(sm, img.array, src), rng)
        sino = Sinogram(preset.detectors, preset.geometry().angles, counts,
                        units="counts", energy=img.energy)
        raws.append(save_sinogram(sino, out / f"counts_{name}"))
    outputs = _with_headers(raws)
    _write_manifest(out, "simulate",
                    {"preset": ns.preset, "seed": ns.seed,
                     "incident": src.incident, "background": src.background},
                    [Path(o).name for o in outputs])
    print(f"wrote {len(outputs)} sinograms to {out}")
    return 0


def _discover_pairs(images_dir: Path) -> list:
    lows = sorted(images_dir.glob("*_low.json"))
    if not lows:
        raise ValueError(f"no *_low.json images under {images_dir}")
    pairs = []
    for low in lows:
        base = low.with_suffix("")
        high = low.with_name(low.name.replace("_low.json", "_high"))
        if not high.with_suffix(".json").exists():
            raise ValueError(f"missing high-channel partner for {base}")
        pairs.append(_load_pair_images(base, high))
    return pairs


def _cmd_train(ns) -> int:
    out = _out_dir(ns)
    pairs = _discover_pairs(Path(ns.images))
    cfg = TrainConfig(filter_size=ns.filter_size, filter_count=ns.filter_count,
                      alpha=ns.alpha, gammas=tuple(ns.gammas), tol=ns.tol,
                      max_outer=ns.max_outer, seed=ns.seed,
                      normalize=ns.normalize)
    if ns.mode == "mcaol":
        banks = mcaol_train(pairs, cfg)
    else:
        banks = ChannelPair(caol_train([p.low for p in pairs], cfg),
                            caol_train([p.high for p in pairs], cfg),
                            pairs[0].labels)
    raws = [save_bank(banks.low, out / "bank_low"),
            save_bank(banks.high, out / "bank_high")]
    outputs = _with_headers(raws)
    _write_manifest(out, "train",
                    {"mode": ns.mode, "images": str(ns.images),
                     "filter_size": ns.filter_size,
                     "filter_count": ns.filter_count, "alpha": ns.alpha,
                     "gammas": list(ns.gammas), "pairs": len(pairs),
                     "max_outer": ns.max_outer, "tol": ns.tol,
                     "seed": ns.seed, "normalize": ns.normalize},
                    [Path(o).name for o in outputs])
    print(f"trained {ns.mode} banks on {len(pairs)} pairs -> {out}")
    return 0


def _load_counts(path, preset) -> Sinogram:
    sino = load_sinogram(path)
    geometry = preset.geometry()
    if sino.detectors != preset.detectors or sino.angles.size != preset.n_views:
        raise ValueError(
            f"sinogram {Path(path).name} is {sino.detectors}x{sino.angles.size}, "
            f"preset {preset.name} expects {preset.detectors}x{preset.n_views}")
    if not np.allclose(sino.angles, geometry.angles):
        raise ValueError(f"sinogram angles do not match preset {preset.name}")
    if sino.units != "counts":
        raise ValueError("reconstruction expects a counts sinogram")
    return sino


def _cmd_reconstruct(ns) -> int:
    out = _out_dir(ns)
    preset = get_preset(ns.preset)
    ys = [_load_counts(ns.low, preset), _load_counts(ns.high, preset)]
    sm = _system_matrix(preset, ns.cache)
    src = _source(preset, ns)
    inner = SolverConfig(max_iter=ns.inner_iters)
    single = SolverConfig(max_iter=ns.solve_iters)
    learned = ReconConfig(rhos=(ns.rho, ns.rho), gammas=tuple(ns.gammas),
                          alpha=ns.alpha, n_outer=ns.n_outer,
                          init_iters=ns.init_iters, inner=inner)
    smooth = ReconConfig(epsilon=ns.epsilon, inner=single)

    trace_rows: list = []

    def record(info):
        trace_rows.append((info["outer"], info["phase"], info["objective"]))

    needs_banks = ns.prior in ("mcaol", "caol", "caol-pwls")
    if needs_banks:
        if ns.banks is None:
            raise ValueError(f"--banks is required for prior {ns.prior!r}")
        banks = [load_bank(Path(ns.banks) / "bank_low"),
                 load_bank(Path(ns.banks) / "bank_high")]
        if banks[0].filter_size > preset.image_size:
            raise ValueError("filters larger than the image")

    values = [y.values for y in ys]
    traces = {}
    trace_files = []
    if ns.prior == "mcaol":
        xs = mcaol_reconstruct(values, sm, [src, src], banks, learned, record)
        traces["trace.csv"] = trace_rows
    elif ns.prior in ("caol", "caol-pwls"):
        fn = caol_reconstruct if ns.prior == "caol" else caol_pwls_reconstruct
        xs = []
        for e, name in enumerate(("low", "high")):
            trace_rows = []
            xs.append(fn(values[e], sm, src, banks[e], learned, rho=ns.rho,
                         callback=record))
            traces[f"trace_{name}.csv"] = trace_rows
    elif ns.prior == "tv":
        trace_files = [out / "trace_low.csv", out / "trace_high.csv"]
        xs = [tv_reconstruct(values[e], sm, src, smooth, rho=1.0, beta=ns.beta,
                             trace_csv=trace_files[e]) for e in range(2)]
    elif ns.prior == "jtv":
        trace_files = [out / "trace.csv"]
        xs = jtv_reconstruct(values, sm, [src, src], smooth, beta=ns.beta,
                             trace_csv=trace_files[0])
    else:
        trace_files = [out / "trace_low.csv", out / "trace_high.csv"]
        xs = [mle_reconstruct(values[e], sm, src, smooth,
                              trace_csv=trace_files[e]) for e in range(2)]

    outputs = list(trace_files)
    for e, name in enumerate(("low", "high")):
        img = Image.from_array(np.asarray(xs[e]).reshape(sm.image_size, -1),
                               preset.pixel_size, preset.labels[e])
        outputs += _with_headers([save_image(img, out / f"recon_{name}")])
        if ns.figures:
            from .plots import render_image
            fig = out / f"recon_{name}.png"
            render_image(img, fig, title=f"{ns.prior} recon_{name}")
            outputs.append(fig)
    for name, rows in traces.items():
        path = out / name
        path.write_text("outer,phase,objective\n" + "".join(
            f"{o},{ph},{val!r}\n" for o, ph, val in rows), encoding="utf-8")
        outputs.append(path)
    _write_manifest(out, "reconstruct",
                    {"prior": ns.prior, "preset": ns.preset, "rho": ns.rho,
                     "beta": ns.beta, "gammas": list(ns.gammas),
                     "alpha": ns.alpha, "n_outer": ns.n_outer,
                     "init_iters": ns.init_iters, "inner_iters": ns.inner_iters,
                     "solve_iters": ns.solve_iters,
                     "banks": None if ns.banks is None else str(ns.banks)},
                    [Path(o).name for o in outputs])
    print(f"reconstructed with prior={ns.prior} -> {out}")
    return 0


def _cmd_sweep(ns) -> int:
    spec = SweepSpec.from_json(ns.config)
    if ns.seed is not None or ns.workers is not None:
        data = spec.to_mapping()
        if ns.seed is not None:
            data["seed"] = ns.seed
        if ns.workers is not None:
            data["workers"] = ns.workers
        spec = SweepSpec.from_mapping(data)
    progress = None
    if not ns.quiet:
        def progress(done, total):
            print(f"\r{done}/{total} reconstructions", end="", flush=True)
    result = run_sweep(spec, ns.out, cache_dir=ns.cache, progress=progress)
    if not ns.quiet:
        print()
    for name in ("low", "high"):
        print(f"{name}: {result['csv'][name]} {result['figures'][name]}")
    return 0


def _cmd_metrics(ns) -> int:
    if len(ns.low) != len(ns.high):
        raise ValueError("need the same number of --low and --high replicates")
    gt = _load_pair_images(ns.gt_low, ns.gt_high)
    lines = ["channel,replicates,absbias,std"]
    for name, paths, truth in (("low", ns.low, gt.low),
                               ("high", ns.high, gt.high)):
        recs = [load_image(p) for p in paths]
        bias = abs_bias(recs, truth)
        std = float("nan") if len(recs) < 2 else std_metric(recs, truth)
        lines.append(f"{name},{len(recs)},{bias!r},{std!r}")
    table = "\n".join(lines) + "\n"
    if ns.out is not None:
        Path(ns.out).parent.mkdir(parents=True, exist_ok=True)
        Path(ns.out).write_text(table, encoding="utf-8")
    else:
        print(table, end="")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_common_sim(p):
    p.add_argument("--incident", type=float, default=None,
                   help="override preset photons per ray")
    p.add_argument("--background", type=float, default=None,
                   help="override preset background counts")
    p.add_argument("--cache", default=None,
                   help="directory for cached system matrices")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mcaol",
                     description="Dual-energy CT with learned convolutional "
                                 "sparsifying filters.")
    parser.add_argument("--version", action="version",
                        version=f"mcaol {__version__}")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("phantom", help="write a preset ground-truth pair")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--out", required=True)
    p.add_argument("--variants", type=int, default=0,
                   help="also write this many jittered training pairs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--figures", action="store_true")
    p.set_defaults(fn=_cmd_phantom)

    p = sub.add_parser("simulate", help="draw one noisy acquisition")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--low", required=True, help="low-channel image base path")
    p.add_argument("--high", required=True, help="high-channel image base path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_common_sim(p)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("train", help="learn filter banks from image pairs")
    p.add_argument("--mode", required=True, choices=("caol", "mcaol"))
    p.add_argument("--images", required=True,
                   help="directory of *_low / *_high image pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--filter-size", type=int, default=5)
    p.add_argument("--filter-count", type=int, default=25)
    p.add_argument("--alpha", type=float, default=1e-5)
    p.add_argument("--gammas", type=float, nargs=2, default=(1e5, 1e5),
                   metavar=("G_LOW", "G_HIGH"))
    p.add_argument("--max-outer", type=int, default=300)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction,
                   default=False,
                   help="scale training images to unit peak first")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruct a sinogram pair")
    p.add_argument("--prior", required=True, choices=_PRIORS)
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--low", required=True, help="low counts base path")
    p.add_argument("--high", required=True, help="high counts base path")
    p.add_argument("--banks", default=None,
                   help="directory holding bank_low / bank_high")
    p.add_argument("--rho", type=float, default=10.0,
                   help="data weight of the learned priors")
    p.add_argument("--beta", type=float, default=1e3,
                   help="edge weight of tv / jtv")
    p.add_argument("--gammas", type=float, nargs=2, default=(1e4, 1e4),
                   metavar=("G_LOW", "G_HIGH"))
    p.add_argument("--alpha", type=float, default=1e-4)
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--n-outer", type=int, default=30)
    p.add_argument("--init-iters", type=int, default=50)
    p.add_argument("--inner-iters", type=int, default=25)
    p.add_argument("--solve-iters", type=int, default=400)
    p.add_argument("--out", required=True)
    p.add_argument("--figures", action="store_true")
    _add_common_sim(p)
    p.set_defaults(fn=_cmd_reconstruct)

    p = sub.add_parser("sweep", help="replicate study over a parameter grid")
    p.add_argument("--config", required=True, help="sweep spec JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--cache", default=None)
    p.add_argument("--seed", type=int, default=None,
                   help="override the spec seed")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("metrics", help="AbsBias / STD table from replicates")
    p.add_argument("--gt-low", required=True)
    p.add_argument("--gt-high", required=True)
    p.add_argument("--low", action="append", required=True,
                   help="low-channel replicate (repeatable)")
    p.add_argument("--high", action="append", required=True,
                   help="high-channel replicate (repeatable)")
    p.add_argument("--out", default=None, help="write CSV here instead of stdout")
    p.set_defaults(fn=_cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.fn(ns)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"mcaol: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
