"""Train/evaluate harness behind the CLI: corpora, single runs and sweep cells."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, GSQError, InvalidConfig
from .latents import LinearProjection
from .metrics import mse, perplexity, perplexity_per_group_mean, ssim, usage_percent
from .objectives import entropy_loss
from .persistence import extract_patches, grid_shape, load_image, read_tensor, reassemble
from .quantizer import CompressionGeometry, Codebook, QuantizerConfig, dequantize, effective_vocab_bits, quantize
from .training import evaluate, train

CSV_SCHEMA = "gsq-run/1"

RUN_COLUMNS = [
    "schema", "run_id", "status", "reason",
    "preset", "D", "G", "d", "V", "shared", "l2", "fixed", "levels", "init",
    "patch_size", "stride", "f", "H", "W", "compression_ratio", "bits",
    "seed", "steps", "batch_size", "decay", "train_rows", "eval_rows",
    "usage_pct", "ppl", "ppl_pooled", "ppl_per_group_mean",
    "mse", "psnr_db", "ssim", "commitment", "quant_error",
    "entropy_per_sample", "entropy_codebook", "entropy_loss",
]

# rows used for the entropy terms; the full pass is O(N * V)
ENTROPY_ROWS = 4096


@dataclass
class Corpus:
    """Vectors plus, for image corpora, what is needed to put patches back together."""

    vectors: np.ndarray
    images: list = field(default_factory=list)
    patch_size: int | None = None
    stride: int | None = None

    @property
    def is_image(self) -> bool:
        return bool(self.images)

    def geometry(self) -> CompressionGeometry | None:
        if not self.images:
            return None
        h, w = self.images[0].shape[:2]
        p = self.patch_size
        nr, nc = grid_shape(h, w, p, p)
        return CompressionGeometry(nr * p, nc * p, p)


def load_corpus(paths, patch_size: int | None = None, stride: int | None = None) -> Corpus:
    """Read images (``.ppm``, (H, W, 3) ``.gsqt``) or (N, D) vector tensors; not both."""
    images, vectors = [], []
    for path in paths:
        if str(path).endswith(".gsqt"):
            arr = read_tensor(path).astype(np.float64)
            if arr.ndim == 2:
                vectors.append(arr)
                continue
        images.append(load_image(path))
    if images and vectors:
        raise InvalidConfig("a corpus must be all images or all vector tensors")
    if vectors:
        return Corpus(np.concatenate(vectors, axis=0))
    if not images:
        raise InvalidConfig("empty corpus")
    if patch_size is None:
        raise InvalidConfig("image corpora need a patch size")
    stride = stride or patch_size
    patches = [extract_patches(img, patch_size, stride) for img in images]
    return Corpus(np.concatenate(patches, axis=0), images, patch_size, stride)


def tiled(corpus: Corpus) -> Corpus:
    """Same images cut into non-overlapping patches, for reconstruction metrics."""
    if not corpus.is_image or corpus.stride == corpus.patch_size:
        return corpus
    p = corpus.patch_size
    patches = [extract_patches(img, p, p) for img in corpus.images]
    return Corpus(np.concatenate(patches, axis=0), corpus.images, p, p)


def projection_for(corpus: Corpus, dim: int) -> LinearProjection:
    raw = corpus.vectors.shape[1]
    if dim > raw:
        raise DimensionMismatch(f"latent dim {dim} exceeds raw vector dim {raw}")
    return LinearProjection.fit(corpus.vectors, dim)


def evaluate_run(eval_corpus: Corpus, codebook: Codebook, config: QuantizerConfig,
                 projection: LinearProjection) -> dict:
    """Metrics row for ``codebook`` over ``eval_corpus`` (tiled when it holds images)."""
    latents = projection.encode(eval_corpus.vectors)
    rep = evaluate(latents, codebook, config)
    row = {
        "eval_rows": latents.shape[0],
        "usage_pct": usage_percent(rep.usage),
        "ppl": perplexity(rep.usage),
        "ppl_pooled": perplexity(rep.usage),
        "ppl_per_group_mean": perplexity_per_group_mean(rep.usage),
        "quant_error": rep.mean_quantization_error,
        "commitment": rep.commitment,
    }
    if not config.is_finite:
        per, cb, loss = entropy_loss(latents[:ENTROPY_ROWS], codebook, config)
        row.update(entropy_per_sample=per, entropy_codebook=cb, entropy_loss=loss)

    recon = np.empty_like(latents)
    for lo in range(0, latents.shape[0], 8192):
        idx = quantize(latents[lo:lo + 8192], codebook, config).indices
        recon[lo:lo + 8192] = dequantize(idx, codebook, config)
    if eval_corpus.is_image:
        p = eval_corpus.patch_size
        pixels = projection.decode(recon)
        sse, count, ssims, start = 0.0, 0, [], 0
        for img in eval_corpus.images:
            h, w = img.shape[:2]
            nr, nc = grid_shape(h, w, p, p)
            out = reassemble(pixels[start:start + nr * nc], h, w, p, p)
            start += nr * nc
            ref = img[: out.shape[0], : out.shape[1]]
            sse += float(np.sum((ref - out) ** 2))
            count += ref.size
            if min(out.shape[:2]) >= 11:
                ssims.append(ssim(ref, out, 1.0))
        err = sse / count
        row.update(mse=err, psnr_db=math.inf if err == 0 else 10.0 * math.log10(1.0 / err),
                   ssim=float(np.mean(ssims)) if ssims else None)
    else:
        row.update(mse=mse(latents, recon))
    return row


@dataclass
class Cell:
    """One sweep point. Give either ``G`` or ``group_dim``; the other is derived."""

    D: int
    G: int | None
    V: int
    patch_size: int | None
    group_dim: int | None = None
    preset: str = "gsq"

    def resolve_groups(self) -> int:
        if self.group_dim is not None:
            if self.group_dim < 1 or self.D % self.group_dim:
                raise InvalidConfig(f"d={self.group_dim} does not divide D={self.D}")
            return self.D // self.group_dim
        if self.G is None or self.G < 1 or self.D % self.G:
            raise InvalidConfig(f"G={self.G} does not divide D={self.D}")
        return self.G


def config_for_cell(cell: Cell, l2: str = "auto", shared: str = "auto") -> QuantizerConfig:
    G = cell.resolve_groups()
    l2_flag = None if l2 == "auto" else l2 == "on"
    shared_flag = cell.D // G > 2 if shared == "auto" else shared == "on"
    return QuantizerConfig(cell.D, G, cell.V, shared_codebook=shared_flag, l2_lookup=l2_flag)


def run_id(values: dict) -> str:
    key = "|".join(f"{k}={values[k]}" for k in sorted(values))
    return hashlib.sha1(key.encode()).hexdigest()[:12]


def run_cell(cell: Cell, train_paths, eval_paths, *, steps: int, batch_size: int, decay: float,
             seed: int, init: str, stride: int | None, l2: str = "auto", shared: str = "auto",
             record_time: bool = False) -> dict:
    """Train and evaluate one grid cell; failures become a ``skipped`` row with a reason."""
    t0 = time.perf_counter()
    row = {
        "schema": CSV_SCHEMA, "preset": cell.preset, "D": cell.D, "G": cell.G, "d": cell.group_dim,
        "V": cell.V,
        "patch_size": cell.patch_size, "seed": seed, "steps": steps, "batch_size": batch_size,
        "decay": decay, "init": init, "stride": stride,
    }
    row["run_id"] = run_id({k: row[k] for k in ("D", "G", "d", "V", "patch_size", "seed", "steps",
                                                 "batch_size", "decay", "init", "stride")} | {"l2": l2, "shared": shared})
    try:
        config = config_for_cell(cell, l2, shared)
        row.update(config.as_dict())
        row["bits"] = effective_vocab_bits(config)
        train_corpus = load_corpus(train_paths, cell.patch_size, stride)
        eval_corpus = tiled(load_corpus(eval_paths, cell.patch_size, None) if eval_paths else train_corpus)
        projection = projection_for(train_corpus, cell.D)
        geom = eval_corpus.geometry()
        if geom is not None:
            row.update(f=geom.downsample, H=geom.image_height, W=geom.image_width,
                       compression_ratio=geom.compression_ratio(cell.D))
        codebook, _ = train(projection.encode(train_corpus.vectors), config, seed, steps,
                            batch_size=batch_size, decay=decay, init=init)
        row["train_rows"] = train_corpus.vectors.shape[0]
        row.update(evaluate_run(eval_corpus, codebook, config, projection))
        row["status"] = "ok"
    except (GSQError, ValueError) as exc:
        row["status"] = "skipped"
        row["reason"] = str(exc)
    if record_time:
        row["wall_time"] = time.perf_counter() - t0
    return row


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    if columns is None:
        columns = list(RUN_COLUMNS)
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([format_value(r.get(c)) for c in columns])
    return buf.getvalue()
