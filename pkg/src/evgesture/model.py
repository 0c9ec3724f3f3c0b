"""Gesture classifier: per-frame conv encoder, state-space context block,
bins-temporal shift, temporal pooling and a linear head.

Pipeline for a batch of LNES volumes ``(Bt, T, Bn, 2, H, W)``:

1. every frame goes through the same encoder: 2x2 max-pool of the surface,
   pointwise stem, then Blaze-style blocks (asymmetric depthwise conv,
   pointwise conv, zero-channel-padded residual, SiLU, 2x2 max-pool), and a
   global average pool to a feature vector of width ``F``;
2. the vectors are arranged as ``(Bt, T, Bn, F)`` and passed through the
   state-space block (optional) and the shift (optional);
3. a per-step fusion layer ``silu(W z + b)`` mixes each step's channels, which
   after the shift include neighbouring steps' features;
4. mean over (T, Bn), linear head, softmax.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tn
from .btsm import btsm_backward, btsm_forward
from .ssm import SsmParams, ssm_block_backward, ssm_block_forward

CKPT_FORMAT = "evgesture-ckpt-1"


@dataclass
class ModelConfig:
    height: int = 64
    width: int = 64
    num_classes: int = 5
    widths: tuple = (8, 16, 32)
    kernel_size: int = 3
    state_size: int = 8
    T: int = 2
    Bn: int = 6
    use_ssm: bool = True
    use_btsm: bool = True
    input_pool: bool = True
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if not self.widths:
            raise ValueError("need at least one encoder block")
        if self.use_btsm and self.widths[-1] % 4:
            raise ValueError(f"feature width {self.widths[-1]} not divisible by 4")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd")
        scale = 2 ** (len(self.widths) + int(self.input_pool))
        if self.height % scale or self.width % scale:
            raise ValueError(f"{self.height}x{self.width} not divisible by {scale}")

    @property
    def features(self) -> int:
        return self.widths[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 60
    patience: int = 10
    batch_size: int = 16
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ValueError("invalid training configuration")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")


@dataclass
class LabeledSet:
    volumes: np.ndarray  # (n, T, Bn, 2, H, W)
    labels: np.ndarray  # (n,)

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "LabeledSet":
        return LabeledSet(self.volumes[idx], self.labels[idx])


def _uniform(rng, shape, fan_in):
    lim = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-lim, lim, shape)


class GestureModel:
    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params

    # -- inventory --------------------------------------------------------

    def layer_names(self) -> list[str]:
        names = ["stem"] + [f"block{i}" for i in range(len(self.cfg.widths))]
        if self.cfg.use_ssm:
            names.append("ssm")
        if self.cfg.use_btsm:
            names.append("btsm")
        return names + ["mix", "head"]

    def inventory(self) -> dict[str, int]:
        """Element count per layer; the shift layer owns no parameters."""
        inv = {name: 0 for name in self.layer_names()}
        for key, v in self.params.items():
            inv[key.split(".")[0]] += v.size
        return inv

    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def ssm_params(self) -> SsmParams:
        return SsmParams(**{k[4:]: v for k, v in self.params.items() if k.startswith("ssm.")})

    # -- forward/backward -------------------------------------------------

    def _encode(self, frames):
        p = self.params
        caches = []
        x = frames
        if self.cfg.input_pool:
            caches.append(x)
            x = tn.maxpool2x2(x)
        a = tn.conv_pointwise(x, p["stem.w"], p["stem.b"])
        stem = (x, a)
        h = tn.silu(a)
        for i in range(len(self.cfg.widths)):
            pre = f"block{i}."
            d = tn.conv_depthwise_asym(h, p[pre + "dw_h"], p[pre + "dw_v"])
            q = tn.conv_pointwise(d, p[pre + "pw_w"], p[pre + "pw_b"])
            cin, cout = h.shape[1], q.shape[1]
            s = q.copy()
            s[:, :cin] += h
            a_blk = tn.silu(s)
            caches.append((h, d, s, a_blk, cin, cout))
            h = tn.maxpool2x2(a_blk)
        feat = tn.global_avg_pool(h)
        return feat, (caches, stem, h)

    def _encode_backward(self, gfeat, enc_cache, grads):
        p = self.params
        caches, (x0, a0), h_last = enc_cache
        pooled_in = caches[0] if self.cfg.input_pool else None
        blocks = caches[1:] if self.cfg.input_pool else caches
        gh = tn.global_avg_pool_backward(gfeat, h_last)
        for i in reversed(range(len(blocks))):
            pre = f"block{i}."
            h, d, s, a_blk, cin, cout = blocks[i]
            ga = tn.maxpool2x2_backward(gh, a_blk)
            gs = tn.silu_backward(ga, s)
            gd, gw, gb = tn.conv_pointwise_backward(gs, d, p[pre + "pw_w"], p[pre + "pw_b"])
            grads[pre + "pw_w"], grads[pre + "pw_b"] = gw, gb
            ghh, gwh, gwv = tn.conv_depthwise_asym_backward(
                gd, h, p[pre + "dw_h"], p[pre + "dw_v"]
            )
            grads[pre + "dw_h"], grads[pre + "dw_v"] = gwh, gwv
            ghh += gs[:, :cin]
            gh = ghh
        ga0 = tn.silu_backward(gh, a0)
        gx, gw, gb = tn.conv_pointwise_backward(ga0, x0, p["stem.w"], p["stem.b"])
        grads["stem.w"], grads["stem.b"] = gw, gb
        if pooled_in is not None:
            gx = tn.maxpool2x2_backward(gx, pooled_in)
        return gx

    def forward_train(self, x):
        """Returns ``(logits, cache)`` for a batch ``(Bt, T, Bn, 2, H, W)``."""
        cfg = self.cfg
        x = np.asarray(x, dtype=cfg.dtype)
        if x.ndim != 6 or x.shape[3:] != (2, cfg.height, cfg.width):
            raise ValueError(
                f"expected (Bt, T, Bn, 2, {cfg.height}, {cfg.width}), got {x.shape}"
            )
        Bt, T, Bn = x.shape[:3]
        frames = x.reshape(Bt * T * Bn, 2, cfg.height, cfg.width)
        feat, enc_cache = self._encode(frames)
        z = feat.reshape(Bt, T, Bn, -1)
        ssm_cache = None
        if cfg.use_ssm:
            z, ssm_cache = ssm_block_forward(z, self.ssm_params())
        if cfg.use_btsm:
            z = btsm_forward(z)
        p = self.params
        m_pre = tn.linear(z, p["mix.w"], p["mix.b"])
        m = tn.silu(m_pre)
        pooled = m.mean(axis=(1, 2))
        logits = tn.linear(pooled, p["head.w"], p["head.b"])
        cache = dict(enc=enc_cache, ssm=ssm_cache, z=z, m_pre=m_pre, m=m, pooled=pooled,
                     shape=x.shape)
        return logits, cache

    def backward(self, dlogits, cache) -> dict[str, np.ndarray]:
        p = self.params
        grads: dict[str, np.ndarray] = {}
        gpool, grads["head.w"], grads["head.b"] = tn.linear_backward(
            dlogits, cache["pooled"], p["head.w"], p["head.b"]
        )
        Bt, T, Bn = cache["shape"][:3]
        gm = np.broadcast_to(gpool[:, None, None, :] / (T * Bn), cache["m"].shape)
        gm_pre = tn.silu_backward(gm, cache["m_pre"])
        gz, grads["mix.w"], grads["mix.b"] = tn.linear_backward(
            gm_pre, cache["z"], p["mix.w"], p["mix.b"]
        )
        if self.cfg.use_btsm:
            gz = btsm_backward(gz)
        if self.cfg.use_ssm:
            gz, sg = ssm_block_backward(gz, cache["ssm"])
            for k, v in sg.items():
                grads["ssm." + k] = v
        gfeat = gz.reshape(Bt * T * Bn, -1)
        gx = self._encode_backward(gfeat, cache["enc"], grads)
        grads["input"] = gx.reshape(cache["shape"])
        return {k: np.asarray(v, dtype=self.cfg.dtype) for k, v in grads.items()}

    def logits(self, x):
        return self.forward_train(x)[0]

    def forward(self, x):
        """Class probabilities ``(Bt, C)``."""
        return tn.softmax(self.logits(x))

    def loss_and_grads(self, x, labels):
        logits, cache = self.forward_train(x)
        loss, probs, dlogits = tn.softmax_cross_entropy(logits, labels)
        return loss, probs, self.backward(dlogits, cache)


def build_model(cfg: ModelConfig) -> GestureModel:
    rng = np.random.default_rng(cfg.seed)
    k = cfg.kernel_size
    params: dict[str, np.ndarray] = {}
    c0 = cfg.widths[0]
    params["stem.w"] = _uniform(rng, (c0, 2), 2)
    params["stem.b"] = np.zeros(c0)
    cin = c0
    for i, cout in enumerate(cfg.widths):
        if cout < cin:
            raise ValueError("block widths must be non-decreasing")
        pre = f"block{i}."
        params[pre + "dw_h"] = _uniform(rng, (cin, 1, k), k)
        params[pre + "dw_v"] = _uniform(rng, (cin, k, 1), k)
        params[pre + "pw_w"] = _uniform(rng, (cout, cin), cin)
        params[pre + "pw_b"] = np.zeros(cout)
        cin = cout
    F = cfg.features
    if cfg.use_ssm:
        # own stream so the encoder/head init is identical across ablation variants
        sp = SsmParams.init(F, cfg.state_size, rng=np.random.default_rng([cfg.seed, 1]))
        for name, v in sp.as_dict().items():
            params["ssm." + name] = v
    params["mix.w"] = _uniform(rng, (F, F), F)
    params["mix.b"] = np.zeros(F)
    params["head.w"] = _uniform(rng, (cfg.num_classes, F), F)
    params["head.b"] = np.zeros(cfg.num_classes)
    params = {n: np.asarray(v, dtype=cfg.dtype) for n, v in params.items()}
    return GestureModel(cfg, params)


# -- optimisation ------------------------------------------------------------


class AdamW:
    """Adam moments with decoupled weight decay applied to weight matrices."""

    def __init__(self, params: dict[str, np.ndarray], tc: TrainConfig):
        self.params = params
        self.tc = tc
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    @staticmethod
    def decays(name: str) -> bool:
        return not (name.endswith(".b") or name.endswith("_b") or name.startswith("ssm."))

    def step(self, grads: dict[str, np.ndarray]) -> None:
        tc = self.tc
        self.t += 1
        c1 = 1.0 - tc.beta1 ** self.t
        c2 = 1.0 - tc.beta2 ** self.t
        for k, w in self.params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= tc.beta1
            m += (1.0 - tc.beta1) * g
            v *= tc.beta2
            v += (1.0 - tc.beta2) * g * g
            if tc.lr == 0:
                continue
            if tc.weight_decay and self.decays(k):
                w -= tc.lr * tc.weight_decay * w
            w -= tc.lr * (m / c1) / (np.sqrt(v / c2) + tc.eps)


def _batches(n, batch_size, rng=None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def dataset_loss(model: GestureModel, data: LabeledSet, batch_size=32):
    """Mean cross-entropy and accuracy without gradients."""
    total, correct = 0.0, 0
    for idx in _batches(len(data), batch_size):
        logits = model.logits(data.volumes[idx])
        loss, probs, _ = tn.softmax_cross_entropy(logits, data.labels[idx])
        total += loss * len(idx)
        correct += int(np.sum(np.argmax(probs, axis=1) == data.labels[idx]))
    return total / len(data), correct / len(data)


def train(model: GestureModel, data: LabeledSet, tc: TrainConfig,
          val: LabeledSet | None = None, log=None) -> list[dict]:
    """AdamW on mean cross-entropy. Early-stops on validation loss and
    restores the best parameters. ``log`` receives each epoch's record."""
    if len(data) == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(tc.seed)
    opt = AdamW(model.params, tc)
    history = []
    best = (math.inf, None)
    stale = 0
    for epoch in range(1, tc.epochs + 1):
        seen, total, correct = 0, 0.0, 0
        for idx in _batches(len(data), tc.batch_size, rng):
            # divergence surfaces as a non-finite loss, checked right below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, probs, grads = model.loss_and_grads(data.volumes[idx], data.labels[idx])
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            opt.step(grads)
            total += loss * len(idx)
            seen += len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == data.labels[idx]))
        rec = {"epoch": epoch, "train_loss": total / seen, "train_acc": correct / seen}
        if val is not None and len(val):
            vl, va = dataset_loss(model, val)
            rec.update(val_loss=vl, val_acc=va)
            if vl < best[0]:
                best = (vl, {k: v.copy() for k, v in model.params.items()})
                stale = 0
            else:
                stale += 1
        history.append(rec)
        if log is not None:
            log(rec)
        if val is not None and stale >= tc.patience:
            break
    if best[1] is not None:
        for k, v in best[1].items():
            model.params[k][...] = v
    return history


# -- evaluation --------------------------------------------------------------


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def normalize_rows(cm: np.ndarray) -> np.ndarray:
    """Row-normalized matrix; rows of classes with no samples stay zero."""
    rows = cm.sum(axis=1, keepdims=True).astype(np.float64)
    return np.divide(cm, rows, out=np.zeros(cm.shape), where=rows > 0)


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray

    @property
    def normalized(self) -> np.ndarray:
        return normalize_rows(self.confusion)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "confusion_normalized": self.normalized.tolist(),
        }


def evaluate_predictions(y_true, y_pred, num_classes) -> EvalResult:
    if len(y_true) == 0:
        raise ValueError("empty dataset")
    cm = confusion_matrix(y_true, y_pred, num_classes)
    return EvalResult(float(np.trace(cm) / cm.sum()), cm)


def predict(model: GestureModel, volumes, batch_size=32) -> np.ndarray:
    out = [np.argmax(model.logits(volumes[i:i + batch_size]), axis=1)
           for i in range(0, len(volumes), batch_size)]
    return np.concatenate(out)


def evaluate(model: GestureModel, data: LabeledSet) -> EvalResult:
    if len(data) == 0:
        raise ValueError("empty dataset")
    return evaluate_predictions(data.labels, predict(model, data.volumes),
                                model.cfg.num_classes)


# -- ablation ----------------------------------------------------------------

VARIANTS = {
    "baseline": dict(use_btsm=False, use_ssm=False),
    "+btsm": dict(use_btsm=True, use_ssm=False),
    "+ssm": dict(use_btsm=False, use_ssm=True),
    "full": dict(use_btsm=True, use_ssm=True),
}


def ablate(cfg: ModelConfig, train_set: LabeledSet, test_set: LabeledSet, tc: TrainConfig,
           seeds=(0,), val_set: LabeledSet | None = None, variants=None, log=None) -> dict:
    """Train each variant once per seed; returns per-variant accuracies,
    their mean, and parameter inventories."""
    table = {}
    for name in variants or VARIANTS:
        flags = VARIANTS[name]
        accs = []
        inv = None
        for seed in seeds:
            vcfg = ModelConfig.from_dict({**cfg.to_dict(), **flags, "seed": seed})
            model = build_model(vcfg)
            inv = model.inventory()
            vtc = TrainConfig(**{**asdict(tc), "seed": seed})
            train(model, train_set, vtc, val=val_set)
            acc = evaluate(model, test_set).accuracy
            accs.append(acc)
            if log is not None:
                log({"variant": name, "seed": seed, "accuracy": acc})
        table[name] = {
            "accuracies": accs,
            "mean_accuracy": float(np.mean(accs)),
            "num_params": int(sum(inv.values())),
            "inventory": inv,
        }
    return table


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(model: GestureModel, f) -> None:
    """JSON header line (config + parameter table), then float32 LE payload."""
    header = {
        "format": CKPT_FORMAT,
        "config": model.cfg.to_dict(),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
    }
    f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
    for v in model.params.values():
        f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def checkpoint_bytes(model: GestureModel) -> bytes:
    buf = io.BytesIO()
    save_checkpoint(model, buf)
    return buf.getvalue()


def load_checkpoint(f) -> GestureModel:
    header = json.loads(f.readline().decode("utf-8"))
    if header.get("format") != CKPT_FORMAT:
        raise ValueError("not a checkpoint file")
    cfg = ModelConfig.from_dict(header["config"])
    payload = f.read()
    params = {}
    off = 0
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        if off + 4 * n > len(payload):
            raise ValueError("truncated checkpoint")
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=off).reshape(shape)
        params[entry["name"]] = arr.astype(cfg.dtype)
        off += 4 * n
    if off != len(payload):
        raise ValueError("trailing bytes in checkpoint")
    return GestureModel(cfg, params)

