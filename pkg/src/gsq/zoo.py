"""Other tokenizers' quantizers expressed as grouped-quantizer configurations.

=========  ===  ===  =====  ======  ======  ==  =====
name        d    G    V     finite  shared  l2  fixed
=========  ===  ===  =====  ======  ======  ==  =====
vq          D    1    V     no      no      no  no
vqgan-vit   D    1    V     no      no      yes no
lfq         1    D    2     {-1,1}  no      yes yes
fsq         1    D    L_g   yes     no      yes yes
bsq         2   D/2   V     no      yes     yes yes
gsq        D/G   G    V     no      d > 2   *   no
=========  ===  ===  =====  ======  ======  ==  =====

``*`` gsq turns the sphere projection on when d > 2 unless overridden.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, IndexOutOfRange, InvalidConfig, InvalidPreset
from .quantizer import CodeAssignment, Codebook, QuantizerConfig, effective_vocab_bits

PRESET_NAMES = ("vq", "vqgan-vit", "lfq", "fsq", "bsq", "gsq")


@dataclass(frozen=True)
class FiniteLevelRule:
    levels_per_group: tuple[int, ...]

    def __post_init__(self):
        levels = tuple(int(v) for v in self.levels_per_group)
        if not levels or min(levels) < 2:
            raise InvalidConfig("every level count must be >= 2")
        object.__setattr__(self, "levels_per_group", levels)

    @property
    def groups(self) -> int:
        return len(self.levels_per_group)

    def grid_values(self, indices: np.ndarray) -> np.ndarray:
        steps = np.asarray(self.levels_per_group, dtype=np.float64) - 1.0
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (np.any(idx < 0) or np.any(idx > steps.astype(np.int64))):
            raise IndexOutOfRange("finite-level index exceeds its group's level count")
        return idx / steps


def fsq_quantize(batch, rule: FiniteLevelRule) -> CodeAssignment:
    """Squash each component with a sigmoid and snap it to its group's grid.

    Grid ``k`` of a group with ``L`` levels sits at ``k / (L - 1)``. The
    reconstruction is the grid value itself, in sigmoid space.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != rule.groups:
        raise DimensionMismatch(f"expected (N, {rule.groups}) components, got {x.shape}")
    s = expit(x)
    steps = np.asarray(rule.levels_per_group, dtype=np.float64) - 1.0
    # ceil(t - 0.5) sends exact half-way points to the lower grid index
    idx = np.clip(np.ceil(s * steps - 0.5), 0, steps).astype(np.int64)
    grid = idx / steps
    return CodeAssignment(idx, grid, (s - grid) ** 2, s[:, :, None])


@dataclass
class ZooPreset:
    name: str
    derived_config: QuantizerConfig
    codebook: Codebook | None = None  # set for fixed codebooks


def _norm_name(name: str) -> str:
    key = name.strip().lower().replace("_", "-")
    if key not in PRESET_NAMES:
        raise InvalidPreset(f"unknown preset {name!r}; expected one of {', '.join(PRESET_NAMES)}")
    return key


def circle_table(V: int) -> np.ndarray:
    """V unit 2-vectors evenly spaced on the circle, starting at angle 0."""
    theta = 2.0 * np.pi * np.arange(V) / V
    return np.stack([np.cos(theta), np.sin(theta)], axis=1)


def preset(
    name: str,
    D: int,
    V: int | None = None,
    levels=None,
    groups: int | None = None,
    table=None,
    l2: bool | None = None,
) -> ZooPreset:
    key = _norm_name(name)
    try:
        return _build(key, int(D), V, levels, groups, table, l2)
    except InvalidConfig as exc:
        if isinstance(exc, InvalidPreset):
            raise
        raise InvalidPreset(f"{key}: {exc}") from exc


def _build(key, D, V, levels, groups, table, l2) -> ZooPreset:
    if D < 1:
        raise InvalidPreset("D must be positive")
    if key in ("vq", "vqgan-vit"):
        if V is None:
            raise InvalidPreset(f"{key} requires a vocabulary size")
        cfg = QuantizerConfig(D, 1, V, l2_lookup=(key == "vqgan-vit") if l2 is None else l2)
        return ZooPreset(key, cfg)

    if key == "lfq":
        if V not in (None, 2):
            raise InvalidPreset("lfq has exactly two codes per group")
        cfg = QuantizerConfig(D, D, 2, shared_codebook=False, l2_lookup=True, fixed_codebook=True)
        tables = np.tile(np.array([[-1.0], [1.0]]), (D, 1, 1))
        return ZooPreset(key, cfg, Codebook(tables, "explicit"))

    if key == "fsq":
        if levels is None:
            raise InvalidPreset("fsq requires a level count per dimension")
        levels = tuple(int(v) for v in levels)
        if len(levels) != D:
            raise InvalidPreset(f"fsq needs {D} level counts, got {len(levels)}")
        cfg = QuantizerConfig(
            D, D, max(levels), shared_codebook=False, l2_lookup=True,
            finite_levels=levels, fixed_codebook=True,
        )
        return ZooPreset(key, cfg, Codebook(np.zeros((0, cfg.vocab, 1)), "explicit"))

    if key == "bsq":
        if D % 2:
            raise InvalidPreset(f"bsq splits D into pairs; D={D} is odd")
        if V is None:
            V = len(table) if table is not None else None
        if V is None:
            raise InvalidPreset("bsq requires a vocabulary size or an explicit table")
        tab = circle_table(V) if table is None else np.asarray(table, dtype=np.float64)
        if tab.shape != (V, 2):
            raise InvalidPreset(f"bsq table must have shape ({V}, 2), got {tab.shape}")
        if np.any(np.abs(np.linalg.norm(tab, axis=1) - 1.0) > 1e-6):
            raise InvalidPreset("bsq table entries must be unit vectors")
        cfg = QuantizerConfig(D, D // 2, V, shared_codebook=True, l2_lookup=True, fixed_codebook=True)
        return ZooPreset(key, cfg, Codebook(tab[None], "explicit"))

    # gsq
    if V is None or groups is None:
        raise InvalidPreset("gsq requires a vocabulary size and a group count")
    if groups < 1 or D % groups:
        raise InvalidPreset(f"groups={groups} does not divide D={D}")
    d = D // groups
    cfg = QuantizerConfig(D, groups, V, shared_codebook=d > 2, l2_lookup=l2)
    return ZooPreset(key, cfg)


def preset_effective_codes(p: ZooPreset) -> float:
    return 2.0 ** effective_vocab_bits(p.derived_config)

