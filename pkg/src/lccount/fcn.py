"""A tiny fully-convolutional encoder–decoder with hand-rolled backprop.

Architecture (defaults, ~30k parameters):

* K=3 encoder stages: 4x4 stride-2 pad-1 conv + ReLU
  (1 -> 16 -> 24 -> 32 channels, spatial size halves per stage)
* K=3 decoder stages: fixed bilinear 2x upsampling + 3x3 conv + ReLU
  (32 -> 24 -> 16 -> 8), with one skip connection adding the first
  encoder stage's activation into the matching-resolution decoder stage
  (pre-ReLU)
* 1x1 classifier conv producing C logits per pixel

Inputs are centered (value − 0.5) and zero-padded on the bottom/right to
a multiple of 2^K; logits are cropped back, so output spatial dims always
equal input dims.  The 4x4/stride-2 downsampling and half-pixel bilinear
upsampling are both mirror-symmetric, which makes the whole network
exactly equivariant to horizontal flips (for widths divisible by 2^K)
once the kernels are width-flipped too — see :func:`hflip_params`.

Parameters live in immutable snapshots (:class:`FcnParams`); training
code produces new snapshots instead of mutating.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .blobs import BlobLabeling, label_blobs
from .grid import LogitMap, softmax

CHECKPOINT_MAGIC = b"LCFCNCKPT1"
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class FcnConfig:
    in_channels: int = 1
    num_classes: int = 2
    encoder_channels: tuple = (16, 24, 32)
    decoder_channels: tuple = (24, 16, 8)
    skip_encoder_stage: int = 1  # 1-based; 0 disables the skip connection

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))
        object.__setattr__(self, "decoder_channels", tuple(self.decoder_channels))
        k = len(self.encoder_channels)
        if k < 1 or len(self.decoder_channels) != k:
            raise ValueError("encoder and decoder must have the same positive depth")
        if self.in_channels < 1 or self.num_classes < 2:
            raise ValueError("need in_channels >= 1 and num_classes >= 2")
        s = self.skip_encoder_stage
        if s:
            if not 1 <= s <= k - 1:
                raise ValueError(f"skip_encoder_stage must be in 1..{k - 1} or 0, got {s}")
            j = k - 1 - s
            if self.decoder_channels[j] != self.encoder_channels[s - 1]:
                raise ValueError(
                    f"skip shape mismatch: decoder stage {j} has "
                    f"{self.decoder_channels[j]} channels but encoder stage {s} "
                    f"has {self.encoder_channels[s - 1]}"
                )

    @property
    def depth(self) -> int:
        return len(self.encoder_channels)

    @property
    def skip_decoder_stage(self) -> int:
        """0-based decoder stage receiving the skip, or -1 when disabled."""
        return self.depth - 1 - self.skip_encoder_stage if self.skip_encoder_stage else -1

    def layer_specs(self):
        """(name, c_in, c_out, kernel, stride, pad) for every conv layer."""
        specs = []
        cin = self.in_channels
        for i, cout in enumerate(self.encoder_channels):
            specs.append((f"enc{i}", cin, cout, 4, 2, 1))
            cin = cout
        for j, cout in enumerate(self.decoder_channels):
            specs.append((f"dec{j}", cin, cout, 3, 1, 1))
            cin = cout
        specs.append(("head", cin, self.num_classes, 1, 1, 0))
        return specs


@dataclass(frozen=True)
class FcnParams:
    config: FcnConfig
    tensors: dict = field(repr=False)

    def __post_init__(self):
        expected = {}
        for name, cin, cout, k, _, _ in self.config.layer_specs():
            expected[f"{name}.w"] = (cout, cin, k, k)
            expected[f"{name}.b"] = (cout,)
        if set(self.tensors) != set(expected):
            raise ValueError(
                f"parameter names {sorted(self.tensors)} do not match the "
                f"architecture ({sorted(expected)})"
            )
        frozen = {}
        for key, shape in expected.items():
            arr = np.array(self.tensors[key], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{key} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{key} contains non-finite values")
            arr.setflags(write=False)
            frozen[key] = arr
        object.__setattr__(self, "tensors", frozen)

    def num_parameters(self) -> int:
        return sum(arr.size for arr in self.tensors.values())


def init_params(cfg: FcnConfig, seed: int = 0) -> FcnParams:
    """Kaiming fan-in initialization (gain 2 for ReLU layers, 1 for the head)."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, cin, cout, k, _, _ in cfg.layer_specs():
        fan_in = cin * k * k
        gain = 1.0 if name == "head" else 2.0
        tensors[f"{name}.w"] = rng.normal(0.0, np.sqrt(gain / fan_in), (cout, cin, k, k))
        tensors[f"{name}.b"] = np.zeros(cout)
    return FcnParams(cfg, tensors)


def _prepare_input(cfg: FcnConfig, image) -> tuple:
    """Validate and convert an (H, W) or (H, W, Cin) image to padded (Cin, Hp, Wp)."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] != cfg.in_channels:
        raise ValueError(
            f"image must be (H, W) or (H, W, {cfg.in_channels}), got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    h, w = arr.shape[:2]
    x = np.ascontiguousarray(arr.transpose(2, 0, 1)) - 0.5
    mult = 2 ** cfg.depth
    ph = (-h) % mult
    pw = (-w) % mult
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, ph), (0, pw)))
    return x, h, w


def _forward_trace(params: FcnParams, x: np.ndarray) -> dict:
    """Run the padded input through the net, keeping every intermediate."""
    cfg = params.config
    t = params.tensors
    trace = {"enc_in": [], "enc_pre": [], "enc_act": [],
             "dec_in": [], "dec_up": [], "dec_pre": [], "dec_act": []}
    cur = x
    for i in range(cfg.depth):
        trace["enc_in"].append(cur)
        pre = np.asarray(kernels.conv2d_forward(cur, t[f"enc{i}.w"], t[f"enc{i}.b"], 2, 1))
        trace["enc_pre"].append(pre)
        cur = np.maximum(pre, 0.0)
        trace["enc_act"].append(cur)
    for j in range(cfg.depth):
        trace["dec_in"].append(cur)
        up = np.asarray(kernels.upsample2x(np.ascontiguousarray(cur)))
        trace["dec_up"].append(up)
        pre = np.asarray(kernels.conv2d_forward(up, t[f"dec{j}.w"], t[f"dec{j}.b"], 1, 1))
        if j == cfg.skip_decoder_stage:
            pre = pre + trace["enc_act"][cfg.skip_encoder_stage - 1]
        trace["dec_pre"].append(pre)
        cur = np.maximum(pre, 0.0)
        trace["dec_act"].append(cur)
    trace["logits"] = np.asarray(
        kernels.conv2d_forward(cur, t["head.w"], t["head.b"], 1, 0)
    )
    return trace


def forward(params: FcnParams, image) -> LogitMap:
    """Per-pixel class logits with the same spatial shape as the input."""
    x, h, w = _prepare_input(params.config, image)
    trace = _forward_trace(params, x)
    logits = trace["logits"][:, :h, :w]
    return LogitMap(np.ascontiguousarray(logits.transpose(1, 2, 0)))


def backward(params: FcnParams, image, upstream) -> dict:
    """Gradients of ``<forward(params, image), upstream>`` for every parameter.

    ``upstream`` has the logits' (H, W, C) shape; returns a dict keyed
    like ``params.tensors``.
    """
    cfg = params.config
    t = params.tensors
    x, h, w = _prepare_input(cfg, image)
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != (h, w, cfg.num_classes):
        raise ValueError(
            f"upstream shape {up.shape} does not match logits {(h, w, cfg.num_classes)}"
        )
    trace = _forward_trace(params, x)
    grads = {}

    g = np.zeros_like(trace["logits"])
    g[:, :h, :w] = up.transpose(2, 0, 1)

    gw, gb = kernels.conv2d_param_grad(trace["dec_act"][-1], g, 1, 1, 1, 0)
    grads["head.w"], grads["head.b"] = np.asarray(gw), np.asarray(gb)
    g = np.asarray(kernels.conv2d_input_grad(
        g, t["head.w"], 1, 0, trace["dec_act"][-1].shape[1], trace["dec_act"][-1].shape[2]))

    g_skip = None
    for j in range(cfg.depth - 1, -1, -1):
        g = g * (trace["dec_pre"][j] > 0.0)
        if j == cfg.skip_decoder_stage:
            g_skip = g
        gw, gb = kernels.conv2d_param_grad(trace["dec_up"][j], g, 3, 3, 1, 1)
        grads[f"dec{j}.w"], grads[f"dec{j}.b"] = np.asarray(gw), np.asarray(gb)
        g = np.asarray(kernels.conv2d_input_grad(
            g, t[f"dec{j}.w"], 1, 1, trace["dec_up"][j].shape[1], trace["dec_up"][j].shape[2]))
        g = np.asarray(kernels.upsample2x_grad(np.ascontiguousarray(g)))

    for i in range(cfg.depth - 1, -1, -1):
        if g_skip is not None and i == cfg.skip_encoder_stage - 1:
            g = g + g_skip
        g = g * (trace["enc_pre"][i] > 0.0)
        gw, gb = kernels.conv2d_param_grad(trace["enc_in"][i], g, 4, 4, 2, 1)
        grads[f"enc{i}.w"], grads[f"enc{i}.b"] = np.asarray(gw), np.asarray(gb)
        if i > 0:
            g = np.asarray(kernels.conv2d_input_grad(
                g, t[f"enc{i}.w"], 2, 1,
                trace["enc_in"][i].shape[1], trace["enc_in"][i].shape[2]))
    return grads


def hflip_params(params: FcnParams) -> FcnParams:
    """Width-flip every conv kernel; forward(flipped params, flipped image)
    mirrors forward(params, image) for widths divisible by 2^depth."""
    tensors = {}
    for key, arr in params.tensors.items():
        tensors[key] = arr[..., ::-1].copy() if arr.ndim == 4 else arr
    return FcnParams(params.config, tensors)


def predict_counts(params: FcnParams, image) -> tuple:
    """Per-class blob counts plus the blob labeling, shape ((C,), BlobLabeling).

    Inference is forward -> softmax -> per-class argmax components ->
    count blobs; no split or false-positive machinery is involved.
    """
    probs = softmax(forward(params, image))
    labeling = label_blobs(probs)
    counts = np.zeros(params.config.num_classes, dtype=np.int64)
    if labeling.num_blobs:
        for c in labeling.classes:
            counts[c] += 1
    return counts, labeling


# ---------------------------------------------------------------------------
# checkpoint container: magic, uint32 header length, JSON header, raw arrays
# ---------------------------------------------------------------------------


def save_checkpoint(params: FcnParams, path) -> None:
    """Versioned binary checkpoint (little-endian float64 payload)."""
    names = sorted(params.tensors)
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": {
            "in_channels": params.config.in_channels,
            "num_classes": params.config.num_classes,
            "encoder_channels": list(params.config.encoder_channels),
            "decoder_channels": list(params.config.decoder_channels),
            "skip_encoder_stage": params.config.skip_encoder_stage,
        },
        "arrays": [{"name": n, "shape": list(params.tensors[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params.tensors[n], dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> FcnParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    if len(data) < off + 4:
        raise ValueError(f"{path}: truncated checkpoint header")
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    try:
        header = json.loads(data[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: corrupt checkpoint header: {exc}") from exc
    off += hlen
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')}")
    cfg = FcnConfig(**header["config"])
    tensors = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if off + nbytes > len(data):
            raise ValueError(f"{path}: truncated checkpoint payload at {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(
            data, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += nbytes
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes in checkpoint")
    return FcnParams(cfg, tensors)
