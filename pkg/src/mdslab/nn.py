"""Toy transformer classifier with hand-written reverse-mode gradients.

Everything is float64 numpy: forward pass with an explicit activation tape,
exact backward pass, cross-entropy + L2 loss, and Adam. No autodiff
framework; the tape records exactly what the backward pass needs.

Parameters live in a flat dict keyed like ``block0.attn.W_q``; optimizer
state mirrors the same keys.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

LN_EPS = 1e-5
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and regularization knobs.

    n_tokens is the number of input slices (spatial cells) and d_in the
    flattened length of each slice. pool selects the head input: "mean"
    averages the final block output over tokens, "cls" reads token 0.
    With wd_exclude_ln_bias the L2 penalty skips LayerNorm parameters and
    biases; by default it covers every parameter.
    """

    n_tokens: int
    d_in: int
    n_emb: int = 64
    n_heads: int = 4
    n_blocks: int = 2
    r_mlp: int = 4
    k_tar: int = 3
    lambda_wd: float = 0.01
    pool: str = "mean"
    wd_exclude_ln_bias: bool = False

    def validate(self) -> None:
        for name in ("n_tokens", "d_in", "n_emb", "n_heads", "r_mlp", "k_tar"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_blocks < 0:
            raise ValueError("n_blocks must be >= 0")
        if self.n_emb % self.n_heads:
            raise ValueError(
                f"n_emb={self.n_emb} not divisible by n_heads={self.n_heads}")
        if self.lambda_wd < 0:
            raise ValueError("lambda_wd must be >= 0")
        if self.pool not in ("mean", "cls"):
            raise ValueError(f"pool must be 'mean' or 'cls', got {self.pool!r}")

    @property
    def d_head(self) -> int:
        return self.n_emb // self.n_heads

    @property
    def d_mlp(self) -> int:
        return self.r_mlp * self.n_emb


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape table; the single source of truth for the layout."""
    cfg.validate()
    shapes: dict[str, tuple[int, ...]] = {
        "patch.W": (cfg.d_in, cfg.n_emb),
        "patch.b": (cfg.n_emb,),
        "pos": (cfg.n_tokens, cfg.n_emb),
    }
    for i in range(cfg.n_blocks):
        p = f"block{i}."
        shapes[p + "ln1.g"] = (cfg.n_emb,)
        shapes[p + "ln1.b"] = (cfg.n_emb,)
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"attn.W_{proj}"] = (cfg.n_emb, cfg.n_emb)
            shapes[p + f"attn.b_{proj}"] = (cfg.n_emb,)
        shapes[p + "ln2.g"] = (cfg.n_emb,)
        shapes[p + "ln2.b"] = (cfg.n_emb,)
        shapes[p + "mlp.W1"] = (cfg.n_emb, cfg.d_mlp)
        shapes[p + "mlp.b1"] = (cfg.d_mlp,)
        shapes[p + "mlp.W2"] = (cfg.d_mlp, cfg.n_emb)
        shapes[p + "mlp.b2"] = (cfg.n_emb,)
    shapes["head.W"] = (cfg.n_emb, cfg.k_tar)
    shapes["head.b"] = (cfg.k_tar,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def _trunc_normal(rng: np.random.Generator, shape, std=0.02, bound=2.0):
    """Normal(0, std) with samples beyond bound*sigma redrawn."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


def init_params(cfg: ModelConfig,
                rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Truncated-normal weights (std 0.02), zero biases and LN shifts,
    unit LN scales. Draw order follows param_shapes for reproducibility."""
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            params[name] = np.ones(shape)
        elif leaf.startswith("b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = _trunc_normal(rng, shape)
    return params


def _check_finite(arr: np.ndarray, layer: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite activations at {layer}")


def _layer_norm(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std)


def _layer_norm_backward(dy, cache, gamma):
    xhat, inv_std = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = inv_std * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def gelu(u: np.ndarray) -> np.ndarray:
    """Exact Gaussian-error-function form, 0.5*u*(1 + erf(u/sqrt(2)))."""
    return 0.5 * u * (1.0 + erf(u * _INV_SQRT2))


def gelu_grad(u: np.ndarray) -> np.ndarray:
    return (0.5 * (1.0 + erf(u * _INV_SQRT2))
            + u * np.exp(-0.5 * u * u) * _INV_SQRT_2PI)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x, n_heads, d_head):
    n = x.shape[0]
    return x.reshape(n, n_heads, d_head).transpose(1, 0, 2)


def _merge_heads(xh):
    h, n, d = xh.shape
    return xh.transpose(1, 0, 2).reshape(n, h * d)


@dataclass
class ForwardTape:
    """Activations recorded during forward, consumed by backward/Grad-CAM.

    block_out[i] is the output of block i; block_out[-1] feeds the head.
    tokens is the embedding output (input to block 0).
    """

    x_flat: np.ndarray
    tokens: np.ndarray
    blocks: list[dict] = field(default_factory=list)
    block_out: list[np.ndarray] = field(default_factory=list)
    pooled: np.ndarray | None = None
    logits: np.ndarray | None = None
    attn_weights: list[np.ndarray] = field(default_factory=list)


def _block_forward(params, prefix, t_in, cfg: ModelConfig):
    c: dict = {"t_in": t_in}
    h, c["ln1"] = _layer_norm(t_in, params[prefix + "ln1.g"],
                              params[prefix + "ln1.b"])
    c["h"] = h
    q = h @ params[prefix + "attn.W_q"] + params[prefix + "attn.b_q"]
    k = h @ params[prefix + "attn.W_k"] + params[prefix + "attn.b_k"]
    v = h @ params[prefix + "attn.W_v"] + params[prefix + "attn.b_v"]
    qh = _split_heads(q, cfg.n_heads, cfg.d_head)
    kh = _split_heads(k, cfg.n_heads, cfg.d_head)
    vh = _split_heads(v, cfg.n_heads, cfg.d_head)
    scale = 1.0 / np.sqrt(cfg.d_head)
    attn = _softmax_rows(np.einsum("hid,hjd->hij", qh, kh) * scale)
    ctx = attn @ vh
    concat = _merge_heads(ctx)
    attn_out = concat @ params[prefix + "attn.W_o"] + params[prefix + "attn.b_o"]
    t_mid = t_in + attn_out
    c.update(qh=qh, kh=kh, vh=vh, attn=attn, concat=concat, t_mid=t_mid)
    h2, c["ln2"] = _layer_norm(t_mid, params[prefix + "ln2.g"],
                               params[prefix + "ln2.b"])
    c["h2"] = h2
    u1 = h2 @ params[prefix + "mlp.W1"] + params[prefix + "mlp.b1"]
    g = gelu(u1)
    mlp_out = g @ params[prefix + "mlp.W2"] + params[prefix + "mlp.b2"]
    t_out = t_mid + mlp_out
    c.update(u1=u1, g=g)
    return t_out, c


def forward(params: dict, x: np.ndarray,
            cfg: ModelConfig) -> tuple[np.ndarray, ForwardTape]:
    """Logits (un-normalized) and the activation tape for one sample.

    x may be [n_tokens, d_in] or a slice stack [n_tokens, h, w] with
    h*w = d_in; slices are flattened row-major.
    """
    cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x.reshape(x.shape[0], -1)
    if x.shape != (cfg.n_tokens, cfg.d_in):
        raise ValueError(
            f"input shape {x.shape}, expected {(cfg.n_tokens, cfg.d_in)}")
    tokens = x @ params["patch.W"] + params["patch.b"] + params["pos"]
    _check_finite(tokens, "embedding")
    tape = ForwardTape(x_flat=x, tokens=tokens)
    t = tokens
    for i in range(cfg.n_blocks):
        t, cache = _block_forward(params, f"block{i}.", t, cfg)
        _check_finite(t, f"block{i}")
        tape.blocks.append(cache)
        tape.block_out.append(t)
        tape.attn_weights.append(cache["attn"])
    pooled = t.mean(axis=0) if cfg.pool == "mean" else t[0]
    logits = pooled @ params["head.W"] + params["head.b"]
    _check_finite(logits, "head")
    tape.pooled = pooled
    tape.logits = logits
    return logits, tape


def _block_backward(params, prefix, cache, d_out, cfg: ModelConfig, grads):
    # MLP branch
    dmlp = d_out
    grads[prefix + "mlp.W2"] += cache["g"].T @ dmlp
    grads[prefix + "mlp.b2"] += dmlp.sum(axis=0)
    dg = dmlp @ params[prefix + "mlp.W2"].T
    du1 = dg * gelu_grad(cache["u1"])
    grads[prefix + "mlp.W1"] += cache["h2"].T @ du1
    grads[prefix + "mlp.b1"] += du1.sum(axis=0)
    dh2 = du1 @ params[prefix + "mlp.W1"].T
    dt_mid, dg2, db2 = _layer_norm_backward(dh2, cache["ln2"],
                                            params[prefix + "ln2.g"])
    grads[prefix + "ln2.g"] += dg2
    grads[prefix + "ln2.b"] += db2
    dt_mid = dt_mid + d_out          # residual around the MLP

    # attention branch
    dattn_out = dt_mid
    grads[prefix + "attn.W_o"] += cache["concat"].T @ dattn_out
    grads[prefix + "attn.b_o"] += dattn_out.sum(axis=0)
    dconcat = dattn_out @ params[prefix + "attn.W_o"].T
    dctx = _split_heads(dconcat, cfg.n_heads, cfg.d_head)
    attn, qh, kh, vh = cache["attn"], cache["qh"], cache["kh"], cache["vh"]
    dattn = np.einsum("hid,hjd->hij", dctx, vh)
    dvh = np.einsum("hji,hjd->hid", attn, dctx)
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    scale = 1.0 / np.sqrt(cfg.d_head)
    dqh = np.einsum("hij,hjd->hid", dscores, kh) * scale
    dkh = np.einsum("hij,hid->hjd", dscores, qh) * scale
    dq = _merge_heads(dqh)
    dk = _merge_heads(dkh)
    dv = _merge_heads(dvh)
    h = cache["h"]
    dh = np.zeros_like(h)
    for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
        grads[prefix + f"attn.W_{name}"] += h.T @ dproj
        grads[prefix + f"attn.b_{name}"] += dproj.sum(axis=0)
        dh += dproj @ params[prefix + f"attn.W_{name}"].T
    dt_in, dg1, db1 = _layer_norm_backward(dh, cache["ln1"],
                                           params[prefix + "ln1.g"])
    grads[prefix + "ln1.g"] += dg1
    grads[prefix + "ln1.b"] += db1
    return dt_in + dt_mid            # residual around attention


def zero_grads(params: dict) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def backward(params: dict, tape: ForwardTape, d_logits: np.ndarray,
             cfg: ModelConfig, grads: dict | None = None,
             stop_block: int | None = None):
    """Reverse pass from a logit cotangent.

    Accumulates parameter gradients into `grads` (created when None) and
    returns (grads, d_activation). With stop_block = i the walk stops as
    soon as the gradient with respect to block i's *output* is known and
    returns that, leaving parameters of blocks <= i untouched. Without
    stop_block the walk runs to the bottom, the patch/positional
    parameters receive gradients, and the returned activation gradient is
    with respect to the embedding tokens.
    """
    if grads is None:
        grads = zero_grads(params)
    d_logits = np.asarray(d_logits, dtype=np.float64)
    grads["head.W"] += np.outer(tape.pooled, d_logits)
    grads["head.b"] += d_logits
    dpooled = params["head.W"] @ d_logits
    n = cfg.n_tokens
    if cfg.pool == "mean":
        dt = np.tile(dpooled / n, (n, 1))
    else:
        dt = np.zeros((n, cfg.n_emb))
        dt[0] = dpooled
    for i in range(cfg.n_blocks - 1, -1, -1):
        if stop_block is not None and i == stop_block:
            return grads, dt
        dt = _block_backward(params, f"block{i}.", tape.blocks[i], dt, cfg,
                             grads)
    grads["patch.W"] += tape.x_flat.T @ dt
    grads["patch.b"] += dt.sum(axis=0)
    grads["pos"] += dt
    return grads, dt


def _l2_mask(cfg: ModelConfig, name: str) -> bool:
    """Whether `name` participates in the L2 penalty."""
    if not cfg.wd_exclude_ln_bias:
        return True
    leaf = name.rsplit(".", 1)[-1]
    # LN scales are "g", LN shifts and every bias start with "b"
    return not (leaf == "g" or leaf.startswith("b"))


def l2_penalty(params: dict, cfg: ModelConfig) -> float:
    """lambda * sum of squared entries over the covered parameters."""
    total = 0.0
    for name, value in params.items():
        if _l2_mask(cfg, name):
            total += float(np.sum(value * value))
    return cfg.lambda_wd * total


def cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Stable CE of one sample; also returns d loss / d logits."""
    z = logits - logits.max()
    log_norm = np.log(np.exp(z).sum())
    probs = np.exp(z - log_norm)
    loss = float(log_norm - z[label])
    d = probs.copy()
    d[label] -= 1.0
    return loss, d


def loss(logits: np.ndarray, label: int, params: dict,
         cfg: ModelConfig) -> float:
    """Cross entropy of one sample plus the L2 penalty."""
    ce, _ = cross_entropy(logits, label)
    return ce + l2_penalty(params, cfg)


def batch_loss_and_grads(params: dict, xs, labels,
                         cfg: ModelConfig) -> tuple[float, dict]:
    """Mean CE over the batch plus L2; gradients include the 2*lambda*phi term.

    Samples are accumulated in order so the result is deterministic.
    """
    n = len(labels)
    if n == 0:
        raise ValueError("empty batch")
    grads = zero_grads(params)
    total_ce = 0.0
    for x, label in zip(xs, labels):
        logits, tape = forward(params, x, cfg)
        ce, d_logits = cross_entropy(logits, int(label))
        total_ce += ce
        backward(params, tape, d_logits, cfg, grads=grads)
    inv = 1.0 / n
    for name in grads:
        grads[name] *= inv
        if _l2_mask(cfg, name):
            grads[name] += 2.0 * cfg.lambda_wd * params[name]
    return total_ce * inv + l2_penalty(params, cfg), grads


def predict(params: dict, x: np.ndarray, cfg: ModelConfig) -> int:
    logits, _ = forward(params, x, cfg)
    return int(np.argmax(logits))


@dataclass
class OptState:
    """Adam moments and step counter, keyed like the parameter dict."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    eta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict, eta=1e-3, beta1=0.9, beta2=0.999,
                   eps=1e-8) -> "OptState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()},
                   t=0, eta=eta, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: dict, grads: dict, state: OptState) -> None:
    """One in-place Adam update with bias-corrected moments."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= state.eta * (m / c1) / (np.sqrt(v / c2) + state.eps)


def save_checkpoint(path: str, params: dict, cfg: ModelConfig) -> None:
    """Write params plus the config scalars as one bundle file."""
    from . import container

    meta = np.array([cfg.n_tokens, cfg.d_in, cfg.n_emb, cfg.n_heads,
                     cfg.n_blocks, cfg.r_mlp, cfg.k_tar,
                     1 if cfg.pool == "cls" else 0,
                     1 if cfg.wd_exclude_ln_bias else 0], dtype=np.int64)
    tensors = {"__config__": meta,
               "__lambda__": np.array([cfg.lambda_wd])}
    tensors.update(params)
    container.write_bundle(path, tensors)


def load_checkpoint(path: str) -> tuple[dict, ModelConfig]:
    from . import container

    tensors = container.read_bundle(path)
    meta = tensors.pop("__config__")
    lam = float(tensors.pop("__lambda__")[0])
    cfg = ModelConfig(n_tokens=int(meta[0]), d_in=int(meta[1]),
                      n_emb=int(meta[2]), n_heads=int(meta[3]),
                      n_blocks=int(meta[4]), r_mlp=int(meta[5]),
                      k_tar=int(meta[6]),
                      lambda_wd=lam,
                      pool="cls" if meta[7] else "mean",
                      wd_exclude_ln_bias=bool(meta[8]))
    expected = param_shapes(cfg)
    if set(tensors) != set(expected):
        raise ValueError("checkpoint parameter names do not match the config")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise ValueError(f"checkpoint tensor {name} has shape "
                             f"{tensors[name].shape}, expected {shape}")
    return tensors, cfg
