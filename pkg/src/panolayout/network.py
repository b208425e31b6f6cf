"""Desk-scale dual-projection layout network and its training loop.

Two encoder-decoder branches look at the same panorama in two projections:
the equirectangular view (predicting the floor-ceiling map and the layout
height) and the perspective ceiling view (predicting the floor-plan map).
Decoder features of the panorama branch are warped into the ceiling view and
added into the ceiling decoder with geometrically decaying weights.

Input panoramas are 64x128x3 in [0, 1]; the ceiling view is 64x64x3 taken
with a 160-degree field of view.
"""

from __future__ import annotations

import io as _io
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import projection
from .errors import CheckpointError, DimensionError, TrainingDivergedError
from .layout import CAMERA_TO_CEILING_M

PANO_H, PANO_W = 64, 128
CEIL_W = 64
FOV_DEG = 160.0
ENC_CHANNELS = (16, 32, 64, 128)
DEC_CHANNELS = (64, 32, 16, 8)
VARIANTS = ("full", "no-fusion", "pano-only", "ceiling-only")

CKPT_MAGIC = b"PLCK"
CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    batch: int = 4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    fusion_alpha: float = 0.6
    fusion_beta: float = 3.0
    loss_gamma: float = 0.5
    dropout: float = 0.5
    epochs: int = 60
    seed: int = 0

    def __post_init__(self):
        for name in ("lr", "batch", "adam_beta1", "adam_beta2", "fusion_alpha",
                     "fusion_beta", "loss_gamma", "epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def load_train_config(path) -> TrainConfig:
    import tomli

    with open(path, "rb") as f:
        raw = tomli.load(f)
    fields = {k: v for k, v in raw.items() if k in TrainConfig.__dataclass_fields__}
    return TrainConfig(**fields)


def fuse_features(f_ceiling: ad.Tensor, f_pano_warped: ad.Tensor, layer_index: int,
                  alpha: float, beta: float) -> ad.Tensor:
    """Merge a warped panorama-branch feature into the ceiling branch with the
    decaying coefficient alpha / beta**layer_index."""
    coef = alpha / beta**layer_index
    return ad.add_scaled(f_ceiling, f_pano_warped, coef)


class DualViewNet:
    """Dual-branch encoder-decoder with feature fusion and a height head."""

    def __init__(self, variant: str = "full", seed: int = 0, dtype=np.float32,
                 fusion_alpha: float = 0.6, fusion_beta: float = 3.0,
                 dropout_rate: float = 0.5):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        self.variant = variant
        self.dtype = dtype
        self.fusion_alpha = fusion_alpha
        self.fusion_beta = fusion_beta
        self.dropout_rate = dropout_rate
        self.params: dict[str, ad.Tensor] = {}
        rng = np.random.default_rng(seed)
        self._build(rng)
        self._ceil_cfg = projection.E2PConfig(FOV_DEG, CEIL_W, projection.UP)
        # fusion warp configs per decoder stage (pano feature H doubles 4->32)
        self._fuse_cfgs = [
            projection.E2PConfig(FOV_DEG, 4 * 2**i, projection.UP) for i in range(4)
        ]

    # -- parameter construction -------------------------------------------

    def _param(self, rng, name, shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        data = rng.uniform(-bound, bound, size=shape).astype(self.dtype)
        self.params[name] = ad.Tensor(data, requires_grad=True)

    def _bias(self, name, n):
        self.params[name] = ad.Tensor(np.zeros(n, dtype=self.dtype), requires_grad=True)

    def _conv_params(self, rng, prefix, cin, cout):
        self._param(rng, f"{prefix}.w", (3, 3, cin, cout), fan_in=9 * cin)
        self._bias(f"{prefix}.b", cout)

    def _build(self, rng):
        has_pano = self.variant != "ceiling-only"
        has_ceiling = self.variant != "pano-only"
        for branch, enabled in (("pano", has_pano), ("ceil", has_ceiling)):
            if not enabled:
                continue
            cin = 3
            for i, cout in enumerate(ENC_CHANNELS):
                self._conv_params(rng, f"{branch}_enc{i}", cin, cout)
                cin = cout
            for i, cout in enumerate(DEC_CHANNELS):
                self._conv_params(rng, f"{branch}_dec{i}", cin, cout)
                cin = cout
            self._conv_params(rng, f"{branch}_out", cin, 1)
        if has_pano:
            self._param(rng, "height_fc0.w", (ENC_CHANNELS[-1], 64), fan_in=ENC_CHANNELS[-1])
            self._bias("height_fc0.b", 64)
            self._param(rng, "height_fc1.w", (64, 16), fan_in=64)
            self._bias("height_fc1.b", 16)
            self._param(rng, "height_fc2.w", (16, 1), fan_in=16)
            self._bias("height_fc2.b", 1)

    # -- forward ------------------------------------------------------------

    def ceiling_view(self, pano: np.ndarray) -> np.ndarray:
        pano = pano.astype(self.dtype, copy=False)
        if pano.ndim == 3:
            return projection.e2p(pano, self._ceil_cfg)
        return np.stack([projection.e2p(p, self._ceil_cfg) for p in pano])

    def _encode(self, branch, x):
        feats = x
        for i in range(len(ENC_CHANNELS)):
            feats = ad.relu(
                ad.conv3x3(feats, self.params[f"{branch}_enc{i}.w"],
                           self.params[f"{branch}_enc{i}.b"], stride=2)
            )
        return feats

    def _decode_pano(self, feats):
        taps = []
        for i in range(len(DEC_CHANNELS)):
            taps.append(feats)
            feats = ad.relu(
                ad.conv3x3(ad.upsample2(feats),
                           self.params[f"pano_dec{i}.w"], self.params[f"pano_dec{i}.b"])
            )
        out = ad.sigmoid(
            ad.conv3x3(feats, self.params["pano_out.w"], self.params["pano_out.b"])
        )
        return out, taps

    def _decode_ceiling(self, feats, pano_taps):
        alpha = self.fusion_alpha if self.variant == "full" else 0.0
        for i in range(len(DEC_CHANNELS)):
            if alpha != 0.0 and pano_taps is not None:
                warped = ad.e2p_warp(pano_taps[i], self._fuse_cfgs[i])
                feats = fuse_features(feats, warped, i, alpha, self.fusion_beta)
            feats = ad.relu(
                ad.conv3x3(ad.upsample2(feats),
                           self.params[f"ceil_dec{i}.w"], self.params[f"ceil_dec{i}.b"])
            )
        return ad.sigmoid(
            ad.conv3x3(feats, self.params["ceil_out.w"], self.params["ceil_out.b"])
        )

    def _height_head(self, pooled, train, rng):
        h = ad.relu(ad.linear(pooled, self.params["height_fc0.w"], self.params["height_fc0.b"]))
        h = ad.dropout(h, self.dropout_rate if train else 0.0, rng)
        h = ad.relu(ad.linear(h, self.params["height_fc1.w"], self.params["height_fc1.b"]))
        h = ad.dropout(h, self.dropout_rate if train else 0.0, rng)
        h = ad.linear(h, self.params["height_fc2.w"], self.params["height_fc2.b"])
        return ad.add_constant(ad.softplus(h), CAMERA_TO_CEILING_M)

    def forward(self, pano: np.ndarray, train: bool = False, rng=None):
        """Run the network; returns (m_fc, m_fp, height) Tensors.

        ``pano`` is (64, 128, 3) or batched (B, 64, 128, 3); outputs follow.
        Heads absent from the variant are None.  Height is strictly above
        1.6 m by construction (softplus offset).
        """
        pano = np.asarray(pano, dtype=self.dtype)
        if pano.shape[-3:] != (PANO_H, PANO_W, 3) or pano.ndim not in (3, 4):
            raise DimensionError(f"expected {(PANO_H, PANO_W, 3)} input, got {pano.shape}")
        m_fc = m_fp = height = None
        pano_taps = None
        if self.variant != "ceiling-only":
            x = ad.Tensor(pano)
            enc = self._encode("pano", x)
            m_fc, pano_taps = self._decode_pano(enc)
            pooled = ad.global_avg_pool(enc)
            height = self._height_head(pooled, train, rng)
        if self.variant != "pano-only":
            ceil_img = self.ceiling_view(pano)
            enc_c = self._encode("ceil", ad.Tensor(ceil_img))
            m_fp = self._decode_ceiling(enc_c, pano_taps)
        return m_fc, m_fp, height

    # -- persistence ----------------------------------------------------------

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict):
        for name, tensor in self.params.items():
            if name not in state:
                raise CheckpointError(f"missing parameter {name!r}")
            if state[name].shape != tensor.data.shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: checkpoint {state[name].shape} "
                    f"vs model {tensor.data.shape}"
                )
            tensor.data = state[name].astype(self.dtype)


def save_checkpoint(path, net: DualViewNet, extra: dict = None):
    """PLCK container: magic, u32 version, then named float32 blobs."""
    buf = _io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", CKPT_VERSION))
    state = net.state_dict()
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    from .io import atomic_write_bytes

    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8 or data[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    (version,) = struct.unpack("<I", data[4:8])
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 8
    state = {}
    try:
        while pos < len(data):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + nlen].decode()
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape)
            pos += 4 * count
            state[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from exc
    return state


# ---------------------------------------------------------------------------
# loss and augmentation


def layout_loss(outputs, targets, gamma: float = 0.5) -> ad.Tensor:
    """Sum of per-map binary cross entropies plus gamma * |H - H*|.

    Works on single samples or whole batches (targets shaped like outputs).
    """
    m_fc, m_fp, height = outputs
    terms = []
    if m_fc is not None:
        terms.append(ad.bce_sum(m_fc, np.asarray(targets["mfc"])[..., None]))
    if m_fp is not None:
        terms.append(ad.bce_sum(m_fp, np.asarray(targets["mfp"])[..., None]))
    if height is not None:
        h_target = np.reshape(np.asarray(targets["height"]), height.shape)
        terms.append(ad.scale(ad.l1_loss(height, h_target), gamma))
    return ad.sum_tensors(terms)


def augment_sample(sample: dict, quarter_turns: int, flip: bool) -> dict:
    """Jointly transform a training sample: horizontal rotation by multiples
    of 90 degrees (circular column shift of the panorama, exact rotation of
    the square views) and optional mirror."""
    pano = sample["pano"]
    mfc = sample["mfc"]
    mfp = sample["mfp"]
    k = quarter_turns % 4
    if flip:
        pano = pano[:, ::-1]
        mfc = mfc[:, ::-1]
        mfp = mfp[:, ::-1]
    if k:
        shift = k * pano.shape[1] // 4
        pano = np.roll(pano, shift, axis=1)
        mfc = np.roll(mfc, shift, axis=1)
        mfp = np.rot90(mfp, k)
    out = dict(sample)
    out["pano"] = np.ascontiguousarray(pano)
    out["mfc"] = np.ascontiguousarray(mfc)
    out["mfp"] = np.ascontiguousarray(mfp)
    if "layout" in sample and sample["layout"] is not None:
        from .layout import mirror_layout_x, rotate_layout_90

        lay = sample["layout"]
        if flip:
            lay = mirror_layout_x(lay)
        if k:
            lay = rotate_layout_90(lay, k)
        out["layout"] = lay
    return out


# ---------------------------------------------------------------------------
# optimizer and training


class Adam:
    def __init__(self, params: dict, lr: float, beta1: float, beta2: float, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p.data = p.data - lr_t * self.m[k] / (np.sqrt(self.v[k]) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


@dataclass
class TrainResult:
    net: DualViewNet
    curve: list = field(default_factory=list)  # (step, train_loss, val_loss, val_iou2d)
    steps: int = 0
    wall_time_s: float = 0.0


def _batch_loss(net, samples, cfg, train, rng):
    pano = np.stack([s["pano"] for s in samples]).astype(net.dtype)
    targets = {
        "mfc": np.stack([s["mfc"] for s in samples]).astype(net.dtype),
        "mfp": np.stack([s["mfp"] for s in samples]).astype(net.dtype),
        "height": np.asarray([s["height"] for s in samples], dtype=net.dtype),
    }
    out = net.forward(pano, train=train, rng=rng)
    return layout_loss(out, targets, cfg.loss_gamma)


def validation_loss(net, val_set, cfg, chunk: int = 16) -> float:
    if not val_set:
        return float("nan")
    total = 0.0
    for start in range(0, len(val_set), chunk):
        part = val_set[start : start + chunk]
        total += _batch_loss(net, part, cfg, train=False, rng=None).item()
    return total / len(val_set)


def validation_iou(net, val_set, default_height: float = 3.2) -> float:
    """Mean 2-D IoU of fitted layouts over a validation set.

    Failures count as zero.  Branch-ablated variants fit from whichever maps
    they produce (the fused-map weights renormalize accordingly).
    """
    from . import metrics
    from .layout import default_frame

    frame = default_frame(CEIL_W)
    total = 0.0
    for sample in val_set:
        m_fc, m_fp, height = net.forward(sample["pano"])
        h = height.item() if height is not None else default_height
        try:
            fitted = fit_from_outputs(m_fc, m_fp, h, frame)
            total += metrics.iou2d(fitted, sample["layout"])
        except Exception:
            pass
    return total / len(val_set)


def fit_from_outputs(m_fc, m_fp, height_m: float, frame):
    """Run the fitting pipeline on network outputs, handling ablated branches.

    With both maps present this is the standard fused-map fit.  Without the
    ceiling branch the fused map is the mean of the two warped halves of the
    floor-ceiling map; without the panorama branch it is the floor-plan map
    alone."""
    from . import fitting

    if m_fp is not None and m_fc is not None:
        return fitting.fit(m_fp.data[..., 0], m_fc.data[..., 0], height_m, frame)
    if m_fc is not None:
        mfc_c, mfc_f = fitting.split_fc(m_fc.data[..., 0], height_m, frame)
        fused = 0.5 * mfc_c + 0.5 * mfc_f
        return _fit_fused(fused, frame, height_m)
    return _fit_fused(np.asarray(m_fp.data[..., 0], dtype=np.float64), frame, height_m)


def _fit_fused(fused, frame, height_m, params=None):
    from . import fitting

    params = params or fitting.FitParams()
    mask, rect = fitting.binarize_and_select(fused, params.binarize_threshold)
    diag = math.hypot(rect[1] - rect[0], rect[3] - rect[2])
    poly = fitting.trace_and_simplify(mask, epsilon=params.dp_epsilon_frac * diag)
    lines = fitting.regress_and_cluster(
        poly, rect, delta=params.cluster_delta_frac * diag, min_sep=params.min_line_sep_px
    )
    cells = fitting.vote_cells(mask, lines, params.cell_include_threshold)
    return fitting.cells_to_layout(cells, frame, height_m)


def train(
    train_set,
    cfg: TrainConfig,
    val_set=(),
    variant: str = "full",
    iou_every: int = 0,
    time_budget_s: float = None,
    target_val_iou: float = None,
    log=None,
) -> TrainResult:
    """Adam training with flip/quarter-turn augmentation.

    Deterministic for a fixed seed.  Aborts with TrainingDivergedError on a
    non-finite loss.  Optionally stops early once ``target_val_iou`` is hit
    (checked every ``iou_every`` epochs) or the time budget runs out.
    """
    rng = np.random.default_rng(cfg.seed)
    net = DualViewNet(
        variant=variant, seed=int(rng.integers(2**31)),
        fusion_alpha=cfg.fusion_alpha, fusion_beta=cfg.fusion_beta,
        dropout_rate=cfg.dropout,
    )
    opt = Adam(net.params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2)
    train_set = list(train_set)
    curve = []
    step = 0
    t0 = time.perf_counter()
    stop = False
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_set))
        for start in range(0, len(order), cfg.batch):
            idx = order[start : start + cfg.batch]
            opt.zero_grad()
            batch = []
            for i in idx:
                k = int(rng.integers(4))
                flip = bool(rng.integers(2))
                batch.append(augment_sample(train_set[i], k, flip))
            batch_loss = ad.scale(_batch_loss(net, batch, cfg, train=True, rng=rng),
                                  1.0 / len(batch))
            val = batch_loss.item()
            if not np.isfinite(val):
                raise TrainingDivergedError(
                    f"non-finite loss {val} at step {step} (epoch {epoch})"
                )
            batch_loss.backward()
            opt.step()
            step += 1
        vloss = validation_loss(net, val_set, cfg)
        viou = float("nan")
        if iou_every and val_set and (epoch + 1) % iou_every == 0:
            viou = validation_iou(net, val_set)
            if target_val_iou is not None and viou >= target_val_iou:
                stop = True
        curve.append((step, val, vloss, viou))
        if log:
            log(f"epoch {epoch + 1}/{cfg.epochs} step {step} "
                f"train {val:.2f} val {vloss:.2f} iou {viou:.3f}")
        if time_budget_s is not None and time.perf_counter() - t0 > time_budget_s:
            stop = True
        if stop:
            break
    return TrainResult(net=net, curve=curve, steps=step,
                       wall_time_s=time.perf_counter() - t0)


def write_curve_csv(path, curve):
    import csv

    buf = _io.StringIO()
    w = csv.writer(buf)
    w.writerow(["step", "train_loss", "val_loss", "val_iou2d"])
    for row in curve:
        w.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.6f}", f"{row[3]:.6f}"])
    from .io import atomic_write_bytes

    atomic_write_bytes(path, buf.getvalue().encode())
