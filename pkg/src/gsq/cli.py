"""Command-line front end: ``gsq <subcommand> ...``.

Settings resolve as flags > ``--config`` file > preset defaults. The config
file is flat ``key = value`` text; ``#`` starts a comment. ``GSQ_SEED`` sets
the seed when neither a flag nor the config file does.

Exit codes: 0 when the artifact was written and read back, 1 on a library
error (bad file, bad configuration), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import distance_stats, fit_scaling
from .errors import FixedCodebook, GSQError, InvalidConfig
from .latents import LinearProjection
from .metrics import perplexity, usage_percent
from .persistence import (
    load_codebook,
    read_indices,
    read_tensor,
    reassemble,
    save_codebook,
    write_indices,
    write_ppm,
    write_tensor,
)
from .pipeline import (
    RUN_COLUMNS,
    Cell,
    evaluate_run,
    load_corpus,
    projection_for,
    rows_to_csv,
    run_cell,
    run_id,
    tiled,
)
from .quantizer import INIT_KINDS, QuantizerConfig, dequantize, effective_vocab_bits, init_codebook, quantize
from .training import DEFAULT_DECAY, train
from .zoo import PRESET_NAMES, preset

PRESET_DEFAULTS = {
    "preset": "gsq",
    "groups": 1,
    "init": "spherical_gaussian",
    "l2": "auto",
    "shared": "auto",
    "decay": DEFAULT_DECAY,
    "steps": 1000,
    "batch_size": 256,
}

DEFAULT_VOCAB = 1024

# key -> parser for values read from a config file
CONFIG_KEYS = {
    "preset": str,
    "dim": int,
    "groups": int,
    "vocab": None,  # parse_count
    "levels": str,
    "l2": str,
    "shared": str,
    "init": str,
    "seed": int,
    "decay": float,
    "steps": int,
    "batch_size": int,
    "patch_size": int,
    "stride": int,
    "report_every": int,
}


class UsageError(Exception):
    pass


def parse_count(text) -> int:
    """Integer with optional ``k``/``m`` (x1024) suffix or ``2^n`` form: ``256k``, ``2^18``."""
    s = str(text).strip().lower()
    try:
        if "^" in s:
            base, exp = s.split("^")
            return int(base) ** int(exp)
        mult = {"k": 1024, "m": 1024 * 1024}.get(s[-1:], 1)
        return int(s[:-1] if mult > 1 else s) * mult
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a count: {text!r}") from None


def parse_levels(text) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in str(text).replace(",", ":").split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must look like 8:8:5, got {text!r}") from None


def read_config_file(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        conv = CONFIG_KEYS[key] or parse_count
        try:
            out[key] = conv(value)
        except (ValueError, argparse.ArgumentTypeError):
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def resolve(args) -> dict:
    """Merge preset defaults, config file and explicit flags (in rising priority)."""
    merged = dict(PRESET_DEFAULTS)
    env_seed = os.environ.get("GSQ_SEED")
    if env_seed is not None:
        try:
            merged["seed"] = int(env_seed)
        except ValueError:
            raise UsageError(f"GSQ_SEED must be an integer, got {env_seed!r}") from None
    else:
        merged["seed"] = 0
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config))
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if "steps" in merged and merged["steps"] < 1:
        raise UsageError("--steps must be >= 1")
    if merged.get("levels") is not None and isinstance(merged["levels"], str):
        merged["levels"] = parse_levels(merged["levels"])
    return merged


def build_config(s: dict, dim: int):
    """QuantizerConfig (and fixed codebook, if any) for resolved settings ``s``."""
    l2 = {"auto": None, "on": True, "off": False}.get(s["l2"])
    if s["l2"] not in ("auto", "on", "off") or s["shared"] not in ("auto", "on", "off"):
        raise UsageError("--l2 and --shared take auto, on or off")
    vocab = s.get("vocab")
    if vocab is None and s["preset"] in ("vq", "vqgan-vit", "gsq"):
        vocab = DEFAULT_VOCAB
    p = preset(s["preset"], dim, V=vocab, levels=s.get("levels"), groups=s["groups"], l2=l2)
    cfg = p.derived_config
    if s["shared"] != "auto" and not cfg.fixed_codebook:
        cfg = dataclasses.replace(cfg, shared_codebook=s["shared"] == "on")
    return cfg, p.codebook


def echo_config(cfg: QuantizerConfig, extra: dict | None = None, stream=None) -> None:
    stream = stream or sys.stdout
    items = dict(cfg.as_dict())
    items["bits"] = effective_vocab_bits(cfg)
    items.update(extra or {})
    for k, v in items.items():
        print(f"{k}={v}", file=stream)


def projection_path(codebook_path) -> Path:
    return Path(str(codebook_path) + ".proj.gsqt")


def load_projection(codebook_path, cfg: QuantizerConfig, explicit=None) -> LinearProjection:
    path = Path(explicit) if explicit else projection_path(codebook_path)
    if path.exists():
        proj = LinearProjection.load(path)
        if proj.dim != cfg.latent_dim:
            raise InvalidConfig(f"{path}: projection gives {proj.dim} dims, codebook expects {cfg.latent_dim}")
        return proj
    return LinearProjection.identity(cfg.latent_dim)


def write_csv(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------- commands


def cmd_init(args) -> int:
    s = resolve(args)
    if s.get("dim") is None:
        raise UsageError("init needs --dim")
    cfg, fixed = build_config(s, s["dim"])
    cb = fixed if fixed is not None else init_codebook(cfg, s["seed"], s["init"])
    save_codebook(cb, cfg, args.out)
    load_codebook(args.out)
    echo_config(cfg, {"seed": s["seed"], "init": cb.init_kind, "out": args.out})
    return 0


def cmd_train(args) -> int:
    s = resolve(args)
    corpus = load_corpus(args.corpus, s.get("patch_size"), s.get("stride"))
    raw = corpus.vectors.shape[1]
    if args.codebook:
        cb0, cfg = load_codebook(args.codebook)
        cb0 = dataclasses.replace(cb0, tables=cb0.tables.astype(np.float64))
    else:
        cb0 = None
        cfg, fixed = build_config(s, s.get("dim") or raw)
        if fixed is not None:
            raise FixedCodebook(f"preset {s['preset']} has a fixed codebook and cannot be trained")
    proj = projection_for(corpus, cfg.latent_dim)
    latents = proj.encode(corpus.vectors)
    windows = []

    def on_report(rep):
        windows.append(rep)

    cb, _ = train(
        latents, cfg, s["seed"], s["steps"], batch_size=s["batch_size"], decay=s["decay"],
        init=s["init"], codebook=cb0, report_every=s.get("report_every") or 0, on_report=on_report,
    )
    save_codebook(cb, cfg, args.out)
    if cfg.latent_dim != raw:
        proj.save(projection_path(args.out))
    cb_loaded, _ = load_codebook(args.out)

    base = dict(cfg.as_dict())
    base.update(schema="gsq-run/1", bits=effective_vocab_bits(cfg), seed=s["seed"], steps=s["steps"],
                batch_size=s["batch_size"], decay=s["decay"], init=s["init"], preset=s["preset"],
                patch_size=corpus.patch_size, stride=corpus.stride, train_rows=latents.shape[0])
    base["run_id"] = run_id({k: base[k] for k in sorted(base)})
    rows = []
    for rep in windows:
        rows.append(base | {"phase": "train", "step": rep.steps, "status": "ok",
                            "usage_pct": usage_percent(rep.usage), "ppl": perplexity(rep.usage),
                            "quant_error": rep.mean_quantization_error, "commitment": rep.commitment})
    geom = tiled(corpus).geometry()
    if geom is not None:
        base.update(f=geom.downsample, H=geom.image_height, W=geom.image_width,
                    compression_ratio=geom.compression_ratio(cfg.latent_dim))
    final = evaluate_run(tiled(corpus), cb_loaded, cfg, proj)
    rows.append(base | final | {"phase": "final", "step": s["steps"], "status": "ok"})
    if args.report_csv:
        cols = RUN_COLUMNS[:4] + ["phase", "step"] + RUN_COLUMNS[4:]
        write_csv(args.report_csv, rows_to_csv(rows, cols))
    echo_config(cfg, {"seed": s["seed"], "steps": s["steps"], "decay": s["decay"],
                      "usage_pct": final["usage_pct"], "ppl": final["ppl"], "out": args.out},
                stream=sys.stderr if args.report_csv == "-" else sys.stdout)
    return 0


def _encode_input(path, proj, patch_size):
    corpus = load_corpus([path], patch_size, patch_size)
    if corpus.vectors.shape[1] != proj.raw_dim:
        raise InvalidConfig(f"{path}: vectors have {corpus.vectors.shape[1]} dims, expected {proj.raw_dim}")
    return proj.encode(corpus.vectors)


def cmd_encode(args) -> int:
    cb, cfg = load_codebook(args.codebook)
    proj = load_projection(args.codebook, cfg, args.projection)
    latents = _encode_input(args.input, proj, args.patch_size)
    idx = quantize(latents, cb, cfg).indices
    write_indices(args.out, idx, cfg.vocab)
    read_indices(args.out)
    print(f"rows={idx.shape[0]} groups={idx.shape[1]} V={cfg.vocab} out={args.out}")
    return 0


def cmd_decode(args) -> int:
    cb, cfg = load_codebook(args.codebook)
    proj = load_projection(args.codebook, cfg, args.projection)
    idx, vocab = read_indices(args.input)
    if vocab != cfg.vocab:
        raise InvalidConfig(f"index file was written for V={vocab}, codebook has V={cfg.vocab}")
    vectors = proj.decode(dequantize(idx, cb, cfg))
    if args.image_size:
        h, w = args.image_size
        if args.patch_size is None:
            raise UsageError("--image-size needs --patch-size")
        img = np.clip(reassemble(vectors, h, w, args.patch_size, args.patch_size), 0.0, 1.0)
        write_ppm(args.out, img)
    else:
        write_tensor(args.out, vectors)
        read_tensor(args.out)
    print(f"rows={vectors.shape[0]} dim={vectors.shape[1]} out={args.out}")
    return 0


def cmd_eval(args) -> int:
    cb, cfg = load_codebook(args.codebook)
    proj = load_projection(args.codebook, cfg, args.projection)
    corpus = tiled(load_corpus(args.corpus, args.patch_size, None))
    if corpus.vectors.shape[1] != proj.raw_dim:
        raise InvalidConfig(f"corpus vectors have {corpus.vectors.shape[1]} dims, expected {proj.raw_dim}")
    row = {"schema": "gsq-run/1", "status": "ok", "patch_size": corpus.patch_size, "init": cb.init_kind}
    row.update(cfg.as_dict())
    row["bits"] = effective_vocab_bits(cfg)
    geom = corpus.geometry()
    if geom is not None:
        row.update(f=geom.downsample, H=geom.image_height, W=geom.image_width,
                   compression_ratio=geom.compression_ratio(cfg.latent_dim))
    row.update(evaluate_run(corpus, cb, cfg, proj))
    write_csv(args.csv, rows_to_csv([row]))
    return 0


def _run_cell(job):
    cell, kwargs = job
    return run_cell(cell, **kwargs)


def sweep_cells(args, s) -> list[Cell]:
    patch_sizes = args.patch_size_grid or [s.get("patch_size")]
    vocabs = args.vocab_grid or [s.get("vocab") or DEFAULT_VOCAB]
    cells = []
    for p in patch_sizes:
        dims = args.dim_grid or ([s["dim"]] if s.get("dim") else [3 * p * p] if p else [])
        if not dims:
            raise UsageError("sweep needs --dim (or --patch-size for image corpora)")
        for D in dims:
            if args.group_dims:
                split = [dict(G=None, group_dim=d) for d in args.group_dims]
            else:
                split = [dict(G=g) for g in (args.groups_grid or [s["groups"]])]
            for kw, V in itertools.product(split, vocabs):
                cells.append(Cell(D=D, V=V, patch_size=p, **kw))
    return cells


def cmd_sweep(args) -> int:
    s = resolve(args)
    cells = sweep_cells(args, s)
    kwargs = dict(
        train_paths=args.corpus, eval_paths=args.eval_corpus, steps=s["steps"], batch_size=s["batch_size"],
        decay=s["decay"], seed=s["seed"], init=s["init"], stride=s.get("stride"), l2=s["l2"],
        shared=s["shared"], record_time=args.record_time,
    )
    jobs = [(c, kwargs) for c in cells]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_run_cell, jobs))
    else:
        rows = [_run_cell(j) for j in jobs]
    write_csv(args.csv, rows_to_csv(rows))
    ok = sum(r["status"] == "ok" for r in rows)
    print(f"cells={len(rows)} ok={ok} skipped={len(rows) - ok}", file=sys.stderr)
    return 0


def cmd_dist_stats(args) -> int:
    seed = resolve(args)["seed"]
    modes = [False, True] if args.both else [args.normalized]
    rows = []
    for normalized, n, sigma in itertools.product(modes, args.n, args.sigma):
        rep = distance_stats(n, sigma, normalized, args.samples, seed)
        zp = rep.z_scores("predicted")
        ze = rep.z_scores("exact")
        rows.append(rep.as_dict() | {"seed": seed, "z_mean_predicted": zp[0], "z_var_predicted": zp[1],
                                     "z_mean_exact": ze[0], "z_var_exact": ze[1]})
    cols = ["schema"] + list(rows[0].keys())
    write_csv(args.csv, rows_to_csv([{"schema": "gsq-dist/1"} | r for r in rows], cols))
    return 0


def read_observations(path, score_column: str | None):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        col = score_column or next((c for c in ("score", "rfid", "rFID") if c in fields), None)
        if col is None or col not in fields or "V" not in fields or "D" not in fields:
            raise InvalidConfig(f"{path}: need columns V, D and a score column (score or rfid)")
        obs = []
        for row in reader:
            if row.get("status", "ok") not in ("ok", ""):
                continue
            obs.append((float(row["V"]), float(row["D"]), float(row[col])))
    return obs


def cmd_fit_scaling(args) -> int:
    obs = read_observations(args.csv_in, args.score_column)
    fit = fit_scaling(obs, args.log_base, relative=not args.absolute)
    row = {"schema": "gsq-fit/1"} | fit.as_dict() | {"observations": len(obs),
                                                       "weighting": "absolute" if args.absolute else "relative"}
    write_csv(args.out, rows_to_csv([row], list(row)))
    return 0


# ---------------------------------------------------------------- parser


def _positive_int(text) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _steps(text) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("--steps must be >= 1")
    return v


def _image_size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError("image size looks like 64x48 (HxW)") from None
    return h, w


def _add_quantizer_flags(p, sweep: bool = False):
    p.add_argument("--config", help="flat key=value settings file")
    p.add_argument("--preset", choices=PRESET_NAMES)
    if not sweep:
        p.add_argument("--dim", type=_positive_int, help="latent dim D")
        p.add_argument("--groups", type=_positive_int, help="group count G")
        p.add_argument("--vocab", type=parse_count, help="vocabulary size V (e.g. 1024, 256k, 2^18)")
    p.add_argument("--levels", type=parse_levels, help="fsq levels per dim, e.g. 8:8:8:5:5:5")
    p.add_argument("--l2", choices=("auto", "on", "off"))
    p.add_argument("--shared", choices=("auto", "on", "off"))
    p.add_argument("--init", choices=INIT_KINDS[:2])
    p.add_argument("--seed", type=int)


def _add_training_flags(p):
    p.add_argument("--steps", type=_steps)
    p.add_argument("--decay", type=float, help=f"EMA decay (default {DEFAULT_DECAY})")
    p.add_argument("--batch-size", dest="batch_size", type=_positive_int)
    p.add_argument("--patch-size", dest="patch_size", type=_positive_int)
    p.add_argument("--stride", type=_positive_int, help="patch stride for training (default: patch size)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gsq", description="Grouped spherical quantization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a freshly initialized codebook")
    _add_quantizer_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("train", help="EMA-train a codebook on a corpus")
    _add_quantizer_flags(p)
    _add_training_flags(p)
    p.add_argument("--corpus", nargs="+", required=True, help=".ppm images or .gsqt tensors")
    p.add_argument("--codebook", help="start from this codebook instead of a fresh init")
    p.add_argument("--report-every", dest="report_every", type=_positive_int)
    p.add_argument("--report-csv", dest="report_csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("encode", cmd_encode, "vectors or image -> index file"),
                              ("decode", cmd_decode, "index file -> vectors (or image)")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--codebook", required=True)
        p.add_argument("--in", dest="input", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--projection", help="latent projection (default: <codebook>.proj.gsqt if present)")
        p.add_argument("--patch-size", dest="patch_size", type=_positive_int)
        if name == "decode":
            p.add_argument("--image-size", dest="image_size", type=_image_size,
                           help="reassemble patches into an HxW .ppm")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="usage, perplexity and reconstruction metrics")
    p.add_argument("--codebook", required=True)
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--projection")
    p.add_argument("--patch-size", dest="patch_size", type=_positive_int)
    p.add_argument("--csv", default="-")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train and evaluate every cell of a grid")
    _add_quantizer_flags(p, sweep=True)
    _add_training_flags(p)
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--eval-corpus", dest="eval_corpus", nargs="+")
    p.add_argument("--dim", dest="dim_grid", type=_positive_int, nargs="+")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--groups", dest="groups_grid", type=_positive_int, nargs="+")
    g.add_argument("--group-dims", dest="group_dims", type=_positive_int, nargs="+")
    p.add_argument("--vocab", dest="vocab_grid", type=parse_count, nargs="+")
    p.add_argument("--patch-sizes", dest="patch_size_grid", type=_positive_int, nargs="+")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--record-time", dest="record_time", action="store_true",
                   help="add a wall_time column (makes the CSV non-reproducible)")
    p.add_argument("--csv", default="-")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dist-stats", help="Monte-Carlo moments of squared distances")
    p.add_argument("--n", type=_positive_int, nargs="+", required=True)
    p.add_argument("--sigma", type=float, nargs="+", default=[1.0])
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--normalized", action="store_true")
    mode.add_argument("--both", action="store_true", help="raw and normalized")
    p.add_argument("--samples", type=_positive_int, default=1_000_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--csv", default="-")
    p.set_defaults(func=cmd_dist_stats)

    p = sub.add_parser("fit-scaling", help="fit score = B/(log V)^alpha + c*D^beta")
    p.add_argument("--csv-in", dest="csv_in", required=True)
    p.add_argument("--score-column", dest="score_column")
    p.add_argument("--log-base", dest="log_base", type=float, default=2.0)
    p.add_argument("--absolute", action="store_true", help="unweighted residuals instead of relative")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_fit_scaling)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (GSQError, OSError) as exc:
        print(f"gsq {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
