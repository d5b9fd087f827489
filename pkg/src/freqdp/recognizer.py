"""Toy margin-softmax recognizer and the learnable budget trainer.

The embedder is a small MLP (clip + rescale -> affine -> tanh ->
affine -> L2 normalize) trained with an additive-angular-margin or
additive-cosine-margin softmax. The input layer clips each coordinate
to its calibrated range and rescales it to [-1, 1]; without this the
unbounded Laplace tails at small per-element budgets saturate the
nonlinearity and training stalls. The clip/rescale is part of the
model, not of the privacy mechanism, whose output stays unclipped.

The per-element privacy budgets are learned jointly: the Laplace
perturbation is reparameterized as x = t + scale(theta) * L with L a
unit Laplace draw held fixed per forward pass, so the loss gradient
flows into theta through the noise scales. All gradients are
hand-derived; no autodiff dependency.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dp import SensitivityMap, laplace_sample, softmax_over_support

_COS_EPS = 1e-7


@dataclass
class TrainConfig:
    epsilon_total: float | None = 0.5
    lr_model: float = 0.1
    lr_theta: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 20
    batch_size: int = 32
    loss: str = "arcface"  # or "cosface"
    s: float = 64.0
    m: float = 0.4
    hidden_dim: int = 32
    embed_dim: int = 64
    seed: int = 0
    learn_theta: bool = True
    # lr / 10 at these fractions of the epoch count
    milestones: tuple = (0.42, 0.75, 0.92)

    def __post_init__(self):
        if self.loss not in ("arcface", "cosface"):
            raise ValueError(f"unknown loss kind {self.loss!r}")
        if self.loss == "arcface" and not 0 <= self.m < np.pi / 2:
            raise ValueError("arcface margin must be in [0, pi/2)")
        for name in ("lr_model", "lr_theta", "epochs", "batch_size", "s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epsilon_total is not None and self.epsilon_total <= 0:
            raise ValueError("epsilon_total must be positive or None")


def _normalize_rows(x: np.ndarray):
    norms = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    norms = np.maximum(norms, np.finfo(np.float64).tiny)
    return x / norms, norms


def _normalize_rows_backward(d_unit, unit, norms):
    """Backprop through row-wise L2 normalization."""
    inner = np.sum(d_unit * unit, axis=-1, keepdims=True)
    return (d_unit - inner * unit) / norms


def margin_loss(embeddings, labels, weights, s, m, kind="arcface"):
    """Margin-softmax cross-entropy with analytic gradients.

    embeddings: (B, d) unit rows; weights: (C, d) unit rows. The target
    logit is s*cos(theta_y + m) for arcface and s*(cos(theta_y) - m)
    for cosface; other logits are s*cos(theta_j). Returns
    (mean loss, d_embeddings, d_weights).
    """
    e = np.asarray(embeddings)
    w = np.asarray(weights)
    labels = np.asarray(labels)
    batch = e.shape[0]
    rows = np.arange(batch)

    cos = e @ w.T
    cos_y = np.clip(cos[rows, labels], -1.0 + _COS_EPS, 1.0 - _COS_EPS)
    logits = s * cos
    if kind == "arcface":
        sin_y = np.sqrt(1.0 - cos_y * cos_y)
        cos_m, sin_m = np.cos(m), np.sin(m)
        logits[rows, labels] = s * (cos_y * cos_m - sin_y * sin_m)
        # d(cos(theta + m))/d(cos theta) = sin(theta + m) / sin(theta)
        dtarget_dcos = s * (cos_m + sin_m * cos_y / sin_y)
    elif kind == "cosface":
        logits[rows, labels] = s * (cos_y - m)
        dtarget_dcos = np.full(batch, s)
    else:
        raise ValueError(f"unknown loss kind {kind!r}")

    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    loss = float(-np.mean(shifted[rows, labels] - np.log(exp.sum(axis=1))))

    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    dlogits /= batch
    dcos = dlogits * s
    dcos[rows, labels] = dlogits[rows, labels] * dtarget_dcos

    return loss, dcos @ w, dcos.T @ e


def arcface_loss(embeddings, labels, weights, s=64.0, m=0.4):
    return margin_loss(embeddings, labels, weights, s, m, kind="arcface")


def cosface_loss(embeddings, labels, weights, s=64.0, m=0.35):
    return margin_loss(embeddings, labels, weights, s, m, kind="cosface")


class ToyRecognizer:
    """MLP embedder with a fixed clip/rescale input layer and unit-norm
    class weights.

    norm_lo / norm_hi are the calibrated coordinate bounds; inputs are
    clipped to them and mapped onto [-1, 1] (constant coordinates map
    to 0) before the trainable layers.
    """

    PARAM_NAMES = ("w1", "b1", "w2", "b2", "v")
    NORM_NAMES = ("norm_lo", "norm_hi")

    def __init__(self, norm_lo, norm_hi, w1, b1, w2, b2, v):
        self.norm_lo, self.norm_hi = norm_lo, norm_hi
        self.w1, self.b1, self.w2, self.b2, self.v = w1, b1, w2, b2, v

    @classmethod
    def init(cls, norm_lo, norm_hi, hidden_dim, embed_dim, num_classes, rng,
             dtype=np.float32):
        input_dim = np.asarray(norm_lo).size

        def glorot(fan_out, fan_in):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(fan_out, fan_in)).astype(dtype)

        return cls(
            norm_lo=np.asarray(norm_lo, dtype=np.float64).reshape(-1),
            norm_hi=np.asarray(norm_hi, dtype=np.float64).reshape(-1),
            w1=glorot(hidden_dim, input_dim),
            b1=np.zeros(hidden_dim, dtype=dtype),
            w2=glorot(embed_dim, hidden_dim),
            b2=np.zeros(embed_dim, dtype=dtype),
            v=glorot(num_classes, embed_dim),
        )

    @property
    def params(self) -> dict:
        return {name: getattr(self, name) for name in self.PARAM_NAMES}

    def astype(self, dtype) -> "ToyRecognizer":
        return ToyRecognizer(
            self.norm_lo, self.norm_hi,
            **{k: p.astype(dtype) for k, p in self.params.items()},
        )

    def _input_scale(self):
        width = self.norm_hi - self.norm_lo
        scale = np.zeros_like(width)
        np.divide(2.0, width, out=scale, where=width > 0)
        return scale

    def embed(self, x):
        """Unit-norm embeddings of a (B, n) raw batch; also returns the
        cache needed by embed_backward."""
        x = np.asarray(x, dtype=np.float64)
        clipped = np.clip(x, self.norm_lo, self.norm_hi)
        inside = (x > self.norm_lo) & (x < self.norm_hi)
        scale = self._input_scale()
        xn = ((clipped - self.norm_lo) * scale - 1.0 + (scale == 0)).astype(
            self.w1.dtype
        )
        z1 = xn @ self.w1.T + self.b1
        a = np.tanh(z1)
        z2 = a @ self.w2.T + self.b2
        e, norms = _normalize_rows(z2)
        return e, (xn, inside, scale, a, e, norms)

    def embed_backward(self, d_e, cache):
        """Gradients of the embedder; returns (param grads, d_raw_input)."""
        xn, inside, scale, a, e, norms = cache
        dz2 = _normalize_rows_backward(d_e, e, norms)
        da = dz2 @ self.w2
        dz1 = da * (1.0 - a * a)
        grads = {
            "w2": dz2.T @ a,
            "b2": dz2.sum(axis=0),
            "w1": dz1.T @ xn,
            "b1": dz1.sum(axis=0),
        }
        d_raw = (dz1 @ self.w1).astype(np.float64) * scale * inside
        return grads, d_raw

    def class_weights(self):
        return _normalize_rows(self.v)

    def predict(self, x):
        """Class index by max cosine to the unit class weights."""
        e, _ = self.embed(x)
        wn, _ = self.class_weights()
        return np.argmax(e @ wn.T, axis=1)


def reparam_noise_scales(theta, s: SensitivityMap, epsilon_total):
    """Per-position Laplace scales as a differentiable function of theta.

    Returns (scales, softmax probabilities, support mask); off-support
    positions get scale 0 and carry no theta gradient.
    """
    sup = s.support
    p = softmax_over_support(theta, sup)
    scales = np.zeros(theta.shape, dtype=np.float64)
    scales[sup] = s.sensitivity[sup] / (epsilon_total * p[sup])
    return scales, p, sup


def reparam_perturb_forward(t, s: SensitivityMap, theta, epsilon_total, rng):
    """Noisy batch t + scale(theta) * L with the unit noise L cached.

    t is a (B, n) batch already inside the calibrated ranges.
    """
    scales, _p, _sup = reparam_noise_scales(theta, s, epsilon_total)
    unit_noise = laplace_sample(np.ones(t.shape), rng)
    return np.asarray(t, dtype=np.float64) + scales * unit_noise, unit_noise


def theta_gradient(d_x, unit_noise, scales, p, support):
    """Chain d loss/d input back into theta through the noise scales.

    d scale_i / d theta_j = -scale_i * (delta_ij - p_j) on the support.
    """
    d_scale = np.sum(d_x * unit_noise, axis=0)
    g = np.zeros(p.shape, dtype=np.float64)
    weighted = d_scale[support] * scales[support]
    g[support] = -weighted + p[support] * weighted.sum()
    return g


def forward_backward(model, theta, t, labels, s, epsilon_total, cfg: TrainConfig,
                     unit_noise):
    """Loss and all gradients for one batch with frozen unit noise.

    Returns (loss, grads dict incl. 'theta', predictions). With
    epsilon_total=None the batch is used as-is (no perturbation) and
    the theta gradient is zero.
    """
    if epsilon_total is None:
        x = np.asarray(t, dtype=np.float64)
    else:
        scales, p, sup = reparam_noise_scales(theta, s, epsilon_total)
        x = np.asarray(t, dtype=np.float64) + scales * unit_noise
    e, cache = model.embed(x)
    wn, v_norms = _normalize_rows(model.v)
    loss, d_e, d_wn = margin_loss(e, labels, wn, cfg.s, cfg.m, kind=cfg.loss)
    grads, d_x = model.embed_backward(d_e, cache)
    grads["v"] = _normalize_rows_backward(d_wn, wn, v_norms)
    if epsilon_total is None:
        grads["theta"] = np.zeros(theta.shape, dtype=np.float64)
    else:
        grads["theta"] = theta_gradient(d_x, unit_noise, scales, p, sup)
    cos = e @ wn.T
    return loss, grads, np.argmax(cos, axis=1)


def _flat_sensitivity(s: SensitivityMap) -> SensitivityMap:
    return SensitivityMap(
        s.r_min.reshape(-1), s.r_max.reshape(-1), s.image_count, s.dataset_id
    )


@dataclass
class TrainResult:
    theta: np.ndarray
    model: ToyRecognizer
    history: list = field(default_factory=list)
    diverged: bool = False


def train_budgets(tensors, labels, s: SensitivityMap, cfg: TrainConfig,
                  theta_init=None) -> TrainResult:
    """Jointly train the toy recognizer and the budget parameters.

    tensors: (N, ...) array of calibrated representations; labels: (N,)
    integer classes. SGD with momentum; weight decay on the model
    weights only (decaying theta would bias budgets toward uniform).
    Fresh noise every forward pass; theta starts at zero (uniform
    budgets over the support) unless theta_init is given, e.g. to train
    a model under a frozen, previously learned allocation.
    """
    x_all = np.asarray(tensors, dtype=np.float64).reshape(len(tensors), -1)
    y_all = np.asarray(labels)
    classes = int(y_all.max()) + 1
    if classes < 2 or min(np.bincount(y_all, minlength=classes)) < 2:
        raise ValueError("need >= 2 classes with >= 2 samples each")
    flat_s = _flat_sensitivity(s)
    x_all = np.clip(x_all, flat_s.r_min, flat_s.r_max)

    rng = np.random.default_rng(cfg.seed)
    model = ToyRecognizer.init(
        flat_s.r_min, flat_s.r_max, cfg.hidden_dim, cfg.embed_dim, classes, rng
    )
    if theta_init is None:
        theta = np.zeros(x_all.shape[1], dtype=np.float64)
    else:
        theta = np.asarray(theta_init, dtype=np.float64).reshape(-1).copy()
    velocity = {name: np.zeros_like(p) for name, p in model.params.items()}
    velocity["theta"] = np.zeros_like(theta)

    steps_down = {max(1, int(round(f * cfg.epochs))) for f in cfg.milestones}
    lr_model, lr_theta = cfg.lr_model, cfg.lr_theta
    history = []
    for epoch in range(cfg.epochs):
        if epoch in steps_down:
            lr_model /= 10.0
            lr_theta /= 10.0
        order = rng.permutation(len(x_all))
        losses, correct = [], 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch, y = x_all[idx], y_all[idx]
            unit_noise = laplace_sample(np.ones(batch.shape), rng)
            loss, grads, preds = forward_backward(
                model, theta, batch, y, flat_s, cfg.epsilon_total, cfg, unit_noise
            )
            if not np.isfinite(loss):
                return TrainResult(theta, model, history, diverged=True)
            losses.append(loss)
            correct += int(np.sum(preds == y))
            for name in ToyRecognizer.PARAM_NAMES:
                param = getattr(model, name)
                g = grads[name] + cfg.weight_decay * param
                velocity[name] = cfg.momentum * velocity[name] - lr_model * g
                setattr(model, name, param + velocity[name].astype(param.dtype))
            if cfg.learn_theta:
                velocity["theta"] = (
                    cfg.momentum * velocity["theta"] - lr_theta * grads["theta"]
                )
                theta = theta + velocity["theta"]
        history.append(
            {
                "epoch": epoch,
                "loss": float(np.mean(losses)),
                "accuracy": correct / len(x_all),
            }
        )
    return TrainResult(theta, model, history)


def evaluate(model, tensors, labels, s: SensitivityMap, theta, epsilon_total,
             rng, repeats: int = 1) -> float:
    """Classification accuracy on perturbed held-out tensors.

    `repeats` averages over several fresh noise draws to stabilize the
    estimate. epsilon_total=None evaluates noise-free.
    """
    x = np.asarray(tensors, dtype=np.float64).reshape(len(tensors), -1)
    if len(x) == 0:
        raise ValueError("empty evaluation set")
    y = np.asarray(labels)
    flat_s = _flat_sensitivity(s)
    x = np.clip(x, flat_s.r_min, flat_s.r_max)
    accs = []
    for _ in range(repeats):
        if epsilon_total is None:
            noisy = x
        else:
            noisy, _ = reparam_perturb_forward(x, flat_s, theta, epsilon_total, rng)
        preds = model.predict(noisy)
        accs.append(float(np.mean(preds == y)))
    return float(np.mean(accs))


def evaluate_pairs(model, pairs_a, pairs_b, same, s: SensitivityMap, theta,
                   epsilon_total, rng) -> float:
    """1:1 verification accuracy at the best cosine threshold.

    pairs_a / pairs_b: (P, ...) tensors; same: (P,) booleans.
    """
    if len(pairs_a) == 0:
        raise ValueError("empty evaluation set")
    flat_s = _flat_sensitivity(s)

    def embed_noisy(t):
        x = np.asarray(t, dtype=np.float64).reshape(len(t), -1)
        x = np.clip(x, flat_s.r_min, flat_s.r_max)
        if epsilon_total is not None:
            x, _ = reparam_perturb_forward(x, flat_s, theta, epsilon_total, rng)
        e, _ = model.embed(x)
        return e

    ea, eb = embed_noisy(pairs_a), embed_noisy(pairs_b)
    cos = np.sum(ea * eb, axis=1)
    same = np.asarray(same, dtype=bool)
    best = 0.0
    for thr in np.unique(cos):
        acc = float(np.mean((cos >= thr) == same))
        best = max(best, acc)
    return best
