"""The surrogate network: stem, cross-shaped operator blocks, head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import Tensor
from .layers import DTYPES, Context, CrossBlock, Head, Stem


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters plus the ablation switches.

    ``modes`` is (k_z, k_x): kept Fourier modes along the propagation and
    transverse axes.  ``droppath`` is the maximum stochastic-depth rate;
    blocks get linearly increasing rates from 0 up to it.
    """

    in_channels: int = 8
    channels: int = 64
    blocks: int = 12
    modes: tuple[int, int] = (70, 40)
    expand: int = 2
    dropout: float = 0.0
    droppath: float = 0.1
    stem_schedule: tuple[int, ...] = ()
    head_hidden: int = 256
    stem: str = "bsconv"
    conv_path: bool = False
    ffn_dwconv: bool = True
    ffn_norm: bool = False
    extra_gelu: bool = False
    dtype: str = "real32"

    def __post_init__(self):
        if self.channels < 2 or self.channels % 2:
            raise ValueError("channels must be even (the blocks bisect them)")
        if self.blocks < 1:
            raise ValueError("need at least one block")
        if min(self.modes) < 1:
            raise ValueError("mode counts must be positive")
        if self.expand < 1:
            raise ValueError("expansion ratio must be at least 1")
        if not (0.0 <= self.dropout < 1.0 and 0.0 <= self.droppath < 1.0):
            raise ValueError("dropout and droppath rates must be in [0, 1)")
        if self.in_channels < 1 or self.head_hidden < 1:
            raise ValueError("channel counts must be positive")
        if self.stem not in ("bsconv", "lift"):
            raise ValueError(f"unknown stem kind {self.stem!r}")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")

    @property
    def schedule(self) -> tuple[int, ...]:
        if self.stem_schedule:
            return self.stem_schedule
        return (self.channels // 2, self.channels)


class NeurOLightModel:
    """Maps packed PDE observations to predicted complex field pairs.

    Deterministic for a fixed construction seed; forward passes without a
    training flag never touch randomness, so concurrent inference is safe.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        if config.schedule[-1] != config.channels:
            raise ValueError("stem schedule must end at the block width")
        self.config = config
        dtype = DTYPES[config.dtype]
        rng = np.random.default_rng(seed)
        self.stem = Stem(rng, config.in_channels, config.schedule, dtype,
                         kind=config.stem)
        rates = np.linspace(0.0, config.droppath, config.blocks)
        k_z, k_x = config.modes
        self.blocks = [
            CrossBlock(rng, config.channels, k_z, k_x, config.expand,
                       float(r), dtype, conv_path=config.conv_path,
                       ffn_dwconv=config.ffn_dwconv, ffn_norm=config.ffn_norm,
                       extra_gelu=config.extra_gelu)
            for r in rates
        ]
        self.head = Head(rng, config.channels, config.head_hidden,
                         config.dropout, dtype)

    def forward(self, x, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=DTYPES[self.config.dtype]))
        if x.ndim != 4:
            raise ValueError("expected input of shape (batch, channels, M, N)")
        b, c, m, n = x.shape
        if c != self.config.in_channels:
            raise ValueError(
                f"model expects {self.config.in_channels} channels, got {c}"
            )
        k_z, k_x = self.config.modes
        if k_z > n or k_x > m:
            raise ValueError(
                f"kept modes {self.config.modes} exceed grid axes ({m}, {n})"
            )
        if training and rng is None and (
            self.config.dropout > 0 or self.config.droppath > 0
        ):
            raise ValueError("training forward needs a random generator")
        ctx = Context(training=training, rng=rng)
        v = self.stem(x)
        for block in self.blocks:
            v = block(v, ctx)
        return self.head(v, ctx)

    __call__ = forward

    def named_params(self):
        yield from self.stem.named_params("stem")
        for i, block in enumerate(self.blocks):
            yield from block.named_params(f"blocks.{i}")
        yield from self.head.named_params("head")

    def parameters(self) -> dict[str, Tensor]:
        return {name: t for name, t, _ in self.named_params()}

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t, _ in self.named_params()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for name, t in params.items():
            arr = np.asarray(state[name], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{arr.shape} vs {t.data.shape}")
            t.data = arr.copy()


def block_core_formula(c: int, modes_total: int, s: int) -> int:
    """Parameters of one block's spectral kernels plus FFN channel mixers.

    Complex kernel entries count once: the two spectral kernels hold
    modes_total (c/2 x c/2) complex matrices and the two pointwise layers
    hold 2 s c^2 real weights, giving (modes_total + 8 s) c^2 / 4.
    """
    return (modes_total + 8 * s) * c * c // 4


def count_params(model: NeurOLightModel, complex_as_one: bool = False) -> int:
    """Total scalar parameter count.

    With ``complex_as_one`` a complex kernel entry (stored as a real pair)
    counts once instead of twice, matching how operator-learning papers
    usually report model sizes.
    """
    total = 0
    for _, t, is_complex in model.named_params():
        total += t.size // 2 if (is_complex and complex_as_one) else t.size
    return total


def param_breakdown(model: NeurOLightModel) -> dict:
    """Per-section counts in both counting conventions."""
    sections: dict[str, dict] = {}
    for name, t, is_complex in model.named_params():
        section = ".".join(name.split(".")[:2 if name.startswith("blocks") else 1])
        d = sections.setdefault(section, {"real": 0, "complex_counted": 0})
        d["real"] += t.size
        d["complex_counted"] += t.size // 2 if is_complex else t.size
    cfg = model.config
    return {
        "sections": sections,
        "total_real": count_params(model),
        "total_complex_counted": count_params(model, complex_as_one=True),
        "formula_block_core": block_core_formula(
            cfg.channels, sum(cfg.modes), cfg.expand),
    }
