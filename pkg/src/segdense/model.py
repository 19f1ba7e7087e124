"""Dense-block backbone with per-block prediction branches and fusion head.

Taps are read after each of the four dense blocks (strides 4, 8, 16, 32).
Each active tap is reduced to one channel by a 1x1 convolution and brought to
stride 4 with a transposed convolution of kernel ``2f``, stride ``f`` and
padding ``f/2`` (``f`` = upsampling factor; the stride-4 tap needs none). The
branch maps are summed with fixed weights, upsampled x4 by a transposed
convolution (kernel 8, stride 4, padding 2) and squashed by a logistic.
"""
from __future__ import annotations

import re
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

TAP_STRIDES = (4, 8, 16, 32)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class PretrainedWeightsError(RuntimeError):
    pass


@dataclass
class BackboneConfig:
    variant: str = "full"
    growth_rate: int = 32
    block_layer_counts: tuple[int, int, int, int] = (6, 12, 24, 16)
    stem_channels: int = 64
    bn_size: int = 4
    pretrained_init: bool = False
    pretrained_path: str | None = None

    def __post_init__(self):
        self.block_layer_counts = tuple(int(n) for n in self.block_layer_counts)
        if self.variant not in ("full", "tiny"):
            raise ValueError(f"variant must be 'full' or 'tiny', got {self.variant!r}")
        if len(self.block_layer_counts) != 4:
            raise ValueError(f"exactly 4 dense blocks required, got {len(self.block_layer_counts)}")
        if any(n < 1 for n in self.block_layer_counts):
            raise ValueError("every dense block needs at least one layer")
        if self.growth_rate < 1 or self.stem_channels < 1 or self.bn_size < 1:
            raise ValueError("growth_rate, stem_channels and bn_size must be positive")
        if self.variant == "full" and (self.block_layer_counts != (6, 12, 24, 16) or self.growth_rate != 32):
            raise ValueError("full variant is DenseNet-121: block_layer_counts (6, 12, 24, 16), growth_rate 32")

    @classmethod
    def full(cls, **kw) -> BackboneConfig:
        return cls(variant="full", **kw)

    @classmethod
    def tiny(cls, **kw) -> BackboneConfig:
        kw.setdefault("growth_rate", 4)
        kw.setdefault("block_layer_counts", (2, 2, 2, 2))
        kw.setdefault("stem_channels", 8)
        kw.setdefault("bn_size", 2)
        return cls(variant="tiny", **kw)


@dataclass
class Preprocess:
    """Grey NIR image -> 3 replicated channels, scaled to [0, 1], normalised."""

    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def __call__(self, images, dtype=torch.float32) -> torch.Tensor:
        x = torch.as_tensor(np.asarray(images, dtype=np.float32)).to(dtype) / 255.0
        if x.ndim == 2:
            x = x[None]
        x = x[:, None].expand(-1, 3, -1, -1)
        mean = torch.tensor(self.mean, dtype=dtype).view(1, 3, 1, 1)
        std = torch.tensor(self.std, dtype=dtype).view(1, 3, 1, 1)
        return (x - mean) / std


def bilinear_kernel(size: int) -> torch.Tensor:
    factor = (size + 1) // 2
    center = factor - 1 if size % 2 == 1 else factor - 0.5
    og = torch.arange(size, dtype=torch.float64)
    filt = 1 - torch.abs(og - center) / factor
    return torch.outer(filt, filt)


def upsampler(factor: int) -> nn.ConvTranspose2d:
    """Single-channel x``factor`` transposed convolution with bilinear init."""
    up = nn.ConvTranspose2d(1, 1, kernel_size=2 * factor, stride=factor, padding=factor // 2, bias=False)
    with torch.no_grad():
        up.weight.copy_(bilinear_kernel(2 * factor).view(1, 1, 2 * factor, 2 * factor))
    return up


class DenseLayer(nn.Module):
    def __init__(self, in_ch, growth_rate, bn_size):
        super().__init__()
        self.norm1 = nn.BatchNorm2d(in_ch)
        self.relu1 = nn.ReLU()
        self.conv1 = nn.Conv2d(in_ch, bn_size * growth_rate, kernel_size=1, bias=False)
        self.norm2 = nn.BatchNorm2d(bn_size * growth_rate)
        self.relu2 = nn.ReLU()
        self.conv2 = nn.Conv2d(bn_size * growth_rate, growth_rate, kernel_size=3, padding=1, bias=False)

    def forward(self, x):
        y = self.conv1(self.relu1(self.norm1(x)))
        y = self.conv2(self.relu2(self.norm2(y)))
        return torch.cat([x, y], 1)


class DenseBlock(nn.Sequential):
    def __init__(self, n_layers, in_ch, growth_rate, bn_size):
        super().__init__()
        for i in range(n_layers):
            self.add_module(f"denselayer{i + 1}", DenseLayer(in_ch + i * growth_rate, growth_rate, bn_size))


class Transition(nn.Sequential):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.add_module("norm", nn.BatchNorm2d(in_ch))
        self.add_module("relu", nn.ReLU())
        self.add_module("conv", nn.Conv2d(in_ch, out_ch, kernel_size=1, bias=False))
        self.add_module("pool", nn.AvgPool2d(kernel_size=2, stride=2))


class Branch(nn.Module):
    """1x1 conv to a single channel, then upsample to stride 4."""

    def __init__(self, in_ch: int, tap_stride: int):
        super().__init__()
        self.tap_stride = tap_stride
        self.score = nn.Conv2d(in_ch, 1, kernel_size=1)
        nn.init.zeros_(self.score.weight)
        nn.init.zeros_(self.score.bias)
        factor = tap_stride // 4
        self.up = upsampler(factor) if factor > 1 else None

    def forward(self, tap):
        y = self.score(tap)
        return y if self.up is None else self.up(y)


def fuse(maps, weights) -> torch.Tensor:
    """Elementwise weighted sum of equally-shaped single-channel maps."""
    maps = list(maps)
    weights = [float(w) for w in weights]
    if not maps or len(maps) != len(weights):
        raise ValueError(f"need one weight per map, got {len(maps)} maps and {len(weights)} weights")
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise ValueError(f"map shapes differ: {tuple(shape)} vs {tuple(m.shape)}")
    out = weights[0] * maps[0]
    for w, m in zip(weights[1:], maps[1:]):
        out = out + w * m
    return out


class SegDenseNet(nn.Module):
    def __init__(self, config: BackboneConfig, branches: int = 4,
                 fusion_weights=(1.0, 1.0, 1.0, 1.0), preprocess: Preprocess | None = None):
        super().__init__()
        if branches not in (1, 2, 3, 4):
            raise ValueError(f"branches must be 1..4, got {branches}")
        weights = tuple(float(w) for w in fusion_weights)
        if len(weights) != 4 or not all(np.isfinite(weights)):
            raise ValueError(f"need 4 finite fusion weights, got {fusion_weights}")
        self.config = config
        self.branches = branches
        self.preprocess = preprocess or Preprocess()

        g, bn = config.growth_rate, config.bn_size
        feats = OrderedDict(
            conv0=nn.Conv2d(3, config.stem_channels, kernel_size=7, stride=2, padding=3, bias=False),
            norm0=nn.BatchNorm2d(config.stem_channels),
            relu0=nn.ReLU(),
            pool0=nn.MaxPool2d(kernel_size=3, stride=2, padding=1),
        )
        ch = config.stem_channels
        self.tap_channels = []
        for i, n in enumerate(config.block_layer_counts):
            feats[f"denseblock{i + 1}"] = DenseBlock(n, ch, g, bn)
            ch += n * g
            self.tap_channels.append(ch)
            if i < 3:
                feats[f"transition{i + 1}"] = Transition(ch, ch // 2)
                ch //= 2
        self.features = nn.ModuleDict(feats)

        # taps ordered shallow -> deep; only the deepest `branches` get a head
        self.active_taps = tuple(range(4 - branches, 4))
        self.heads = nn.ModuleDict(
            {f"tap{k + 1}": Branch(self.tap_channels[k], TAP_STRIDES[k]) for k in self.active_taps}
        )
        self.register_buffer("fusion_weights", torch.tensor(weights, dtype=torch.float32))
        self.final_up = upsampler(4)

    # -- backbone ---------------------------------------------------------
    def taps(self, x: torch.Tensor) -> tuple[torch.Tensor, ...]:
        """Feature maps after dense blocks 1-4 (strides 4, 8, 16, 32)."""
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise ValueError(f"input height and width must be divisible by 32, got {h}x{w}")
        f = self.features
        x = f["pool0"](f["relu0"](f["norm0"](f["conv0"](x))))
        out = []
        for i in range(4):
            x = f[f"denseblock{i + 1}"](x)
            out.append(x)
            if i < 3:
                x = f[f"transition{i + 1}"](x)
        return tuple(out)

    def branch_maps(self, x: torch.Tensor) -> list[torch.Tensor]:
        taps = self.taps(x)
        return [self.heads[f"tap{k + 1}"](taps[k]) for k in self.active_taps]

    def forward_logits(self, x: torch.Tensor) -> torch.Tensor:
        maps = self.branch_maps(x)
        weights = [self.fusion_weights[k].item() for k in self.active_taps]
        return self.final_up(fuse(maps, weights))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.forward_logits(x))

    def predict(self, images) -> np.ndarray:
        """Confidence maps (N, H, W) for a uint8 image batch, in eval mode."""
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                dtype = next(self.parameters()).dtype
                p = self(self.preprocess(images, dtype=dtype))
        finally:
            self.train(was_training)
        return p[:, 0].double().numpy()

    def describe(self) -> dict:
        return {
            "backbone": {k: v for k, v in asdict(self.config).items() if k != "pretrained_path"},
            "branches": self.branches,
            "fusion_weights": [float(w) for w in self.fusion_weights.tolist()],
            "preprocess": {"mean": list(self.preprocess.mean), "std": list(self.preprocess.std)},
        }


def _init_backbone(model: SegDenseNet, seed: int) -> None:
    gen = torch.Generator().manual_seed(int(seed))
    for m in model.features.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, generator=gen)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


_LEGACY_KEY = re.compile(r"^(.*denselayer\d+\.(?:norm|relu|conv))\.((?:[12])\.(?:weight|bias|running_mean|running_var))$")


def _read_state_dict(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise PretrainedWeightsError(f"pretrained backbone weights not found: {path}")
    if path.suffix == ".safetensors":
        from safetensors.torch import load_file
        state = load_file(str(path))
    else:
        state = torch.load(path, map_location="cpu", weights_only=True)
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
    fixed = {}
    for key, value in state.items():
        m = _LEGACY_KEY.match(key)
        if m:
            key = m.group(1) + m.group(2)
        key = key.removeprefix("module.")
        fixed[key] = value
    return fixed


def load_pretrained_backbone(model: SegDenseNet, path) -> None:
    """Copy ``features.*`` tensors from a DenseNet state dict (torchvision key layout)."""
    state = _read_state_dict(path)
    own = {k: v for k, v in model.state_dict().items() if k.startswith("features.")}
    missing = [k for k in own if k not in state]
    if missing:
        raise PretrainedWeightsError(f"{path}: missing {len(missing)} backbone tensors, e.g. {missing[0]}")
    for k, v in own.items():
        if tuple(state[k].shape) != tuple(v.shape):
            raise PretrainedWeightsError(
                f"{path}: shape mismatch for {k}: {tuple(state[k].shape)} vs {tuple(v.shape)}"
            )
    with torch.no_grad():
        for k, v in own.items():
            v.copy_(state[k].to(v.dtype))


def build_model(config: BackboneConfig | None = None, branches: int = 4,
                fusion_weights=(1.0, 1.0, 1.0, 1.0), seed: int = 0,
                preprocess: Preprocess | None = None) -> SegDenseNet:
    config = config or BackboneConfig.full()
    # default layer init draws from the global RNG; every tensor is re-initialised below
    with torch.random.fork_rng(devices=[]):
        model = SegDenseNet(config, branches, fusion_weights, preprocess)
    _init_backbone(model, seed)
    if config.pretrained_init:
        if not config.pretrained_path:
            raise PretrainedWeightsError("pretrained_init requested but no pretrained_path given")
        load_pretrained_backbone(model, config.pretrained_path)
    return model


def backbone_forward(model: SegDenseNet, batch: torch.Tensor):
    return model.taps(batch)


def branch_predict(model: SegDenseNet, tap: torch.Tensor, tap_index: int) -> torch.Tensor:
    """Run the head attached to tap ``tap_index`` (0 = shallowest)."""
    key = f"tap{tap_index + 1}"
    if key not in model.heads:
        raise ValueError(f"tap {tap_index} has no active branch (active: {model.active_taps})")
    return model.heads[key](tap)


# -- checkpoints --------------------------------------------------------------

CHECKPOINT_KEY = "segdense"


def save_checkpoint(model: SegDenseNet, path, extra: dict | None = None) -> Path:
    """Write parameters and buffers plus the model description as safetensors."""
    import json

    from safetensors.torch import save_file

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {k: v.detach().cpu().contiguous().clone() for k, v in model.state_dict().items()}
    meta = model.describe()
    meta["extra"] = extra or {}
    save_file(tensors, str(path), metadata={CHECKPOINT_KEY: json.dumps(meta, sort_keys=True)})
    return path


def read_checkpoint_meta(path) -> dict:
    import json

    from safetensors import safe_open

    with safe_open(str(path), framework="pt") as fh:
        meta = fh.metadata() or {}
    if CHECKPOINT_KEY not in meta:
        raise ValueError(f"{path}: not a segdense checkpoint")
    return json.loads(meta[CHECKPOINT_KEY])


def load_checkpoint(path, model: SegDenseNet | None = None) -> SegDenseNet:
    """Rebuild (or fill ``model``) from a checkpoint, bit-exactly."""
    from safetensors.torch import load_file

    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    meta = read_checkpoint_meta(path)
    state = load_file(str(path))
    if model is None:
        bb = dict(meta["backbone"])
        bb["pretrained_init"] = False
        pp = meta["preprocess"]
        model = SegDenseNet(BackboneConfig(**bb), meta["branches"], meta["fusion_weights"],
                            Preprocess(tuple(pp["mean"]), tuple(pp["std"])))
    dtype = state["final_up.weight"].dtype
    if dtype != model.final_up.weight.dtype:
        model.to(dtype)
    model.load_state_dict(state, strict=True)
    return model
