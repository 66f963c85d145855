"""Small numpy networks with hand-written backward passes.

Tensors are plain float64 arrays. Sequence inputs are batched as (B, T, D).
Parameters live in per-module dicts; optimizers return fresh arrays rather
than mutating in place, so a forward cache can tell when it went stale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ACTIVATIONS = ("identity", "sigmoid", "tanh")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: overflow-free and a single ufunc pass
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class GruStack:
    """Stacked GRU layers.

    Per layer the parameters are ``W{l}`` (in, 3H), ``U{l}`` (H, 3H) and
    ``b{l}`` (3H,), gate blocks ordered (update, reset, candidate)::

        z = sigmoid(x Wz + h Uz + bz)
        r = sigmoid(x Wr + h Ur + br)
        n = tanh(x Wn + (r * h) Un + bn)
        h' = (1 - z) * n + z * h
    """

    def __init__(self, input_dim: int, hidden_dim: int, num_layers: int, rng: np.random.Generator):
        if min(input_dim, hidden_dim, num_layers) < 1:
            raise ValueError("GRU dimensions must be positive")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        H = hidden_dim
        self.params: dict[str, np.ndarray] = {}
        for l in range(num_layers):
            d_in = input_dim if l == 0 else H
            # the classic GRU cell layout: one kernel over [x, h] for both gates and
            # one for the candidate, gate biases at 1 so the cell starts out retentive
            gates = glorot_uniform(rng, d_in + H, 2 * H, (d_in + H, 2 * H))
            cand = glorot_uniform(rng, d_in + H, H, (d_in + H, H))
            self.params[f"W{l}"] = np.concatenate([gates[:d_in], cand[:d_in]], axis=1)
            self.params[f"U{l}"] = np.concatenate([gates[d_in:], cand[d_in:]], axis=1)
            self.params[f"b{l}"] = np.concatenate([np.ones(2 * H), np.zeros(H)])

    def forward(self, x: np.ndarray, h0: np.ndarray | None = None):
        """Run the stack over ``x`` (B, T, input_dim); returns (top outputs, cache)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        B, T, D = x.shape
        H = self.hidden_dim
        if D != self.input_dim:
            raise ValueError(f"GRU expects input width {self.input_dim}, got {D}")
        if h0 is None:
            h0 = np.zeros((self.num_layers, B, H))
        else:
            h0 = np.asarray(h0, dtype=np.float64)
            if h0.ndim == 2:
                h0 = h0[:, None, :]
            if h0.shape != (self.num_layers, B, H):
                raise ValueError(f"h0 must have shape {(self.num_layers, B, H)}, got {h0.shape}")
        layers = []
        # time-major internally: contiguous per-step slices
        inp = np.ascontiguousarray(x.transpose(1, 0, 2))
        for l in range(self.num_layers):
            W, U, b = self.params[f"W{l}"], self.params[f"U{l}"], self.params[f"b{l}"]
            Uzr, Un = U[:, :2 * H], U[:, 2 * H:]
            xp = inp @ W + b
            hs = np.empty((T + 1, B, H))
            hs[0] = h0[l]
            zr = np.empty((T, B, 2 * H))
            n = np.empty((T, B, H))
            h = hs[0]
            for t in range(T):
                a = xp[t]
                g = zr[t]
                np.add(a[:, :2 * H], h @ Uzr, out=g)
                np.multiply(g, 0.5, out=g)
                np.tanh(g, out=g)
                g += 1.0
                g *= 0.5
                rh = g[:, H:] * h
                nt = n[t]
                np.add(a[:, 2 * H:], rh @ Un, out=nt)
                np.tanh(nt, out=nt)
                zt = g[:, :H]
                # h' = n + z * (h - n)
                hn = hs[t + 1]
                np.subtract(h, nt, out=hn)
                hn *= zt
                hn += nt
                h = hn
            layers.append((inp, hs, zr, n))
            inp = hs[1:]
        cache = {"owner": self, "params": dict(self.params), "layers": layers, "shape": (B, T)}
        return inp.transpose(1, 0, 2), cache

    def _check_cache(self, cache):
        if cache.get("owner") is not self:
            raise ValueError("cache was produced by a different GRU stack")
        for k, v in self.params.items():
            if cache["params"].get(k) is not v:
                raise ValueError(f"stale cache: parameter {k} changed since the forward pass")

    def backward(self, cache, grad_out: np.ndarray):
        """Backpropagation through time.

        Returns (param grads, grad wrt input, grad wrt h0).
        """
        self._check_cache(cache)
        B, T = cache["shape"]
        H = self.hidden_dim
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.ndim == 2:
            grad_out = grad_out[None]
        if grad_out.shape != (B, T, H):
            raise ValueError(f"grad_out must have shape {(B, T, H)}, got {grad_out.shape}")
        grads = {}
        dh0 = np.zeros((self.num_layers, B, H))
        d_top = np.ascontiguousarray(grad_out.transpose(1, 0, 2))
        for l in reversed(range(self.num_layers)):
            inp, hs, zr, n = cache["layers"][l]
            W, U = self.params[f"W{l}"], self.params[f"U{l}"]
            Uzr_T = np.ascontiguousarray(U[:, :2 * H].T)
            Un_T = np.ascontiguousarray(U[:, 2 * H:].T)
            dxp = np.empty((T, B, 3 * H))
            z, r, hp = zr[:, :, :H], zr[:, :, H:], hs[:-1]
            # gate derivative factors for all steps at once
            omz = 1.0 - z
            f_n = omz * (1.0 - n * n)
            f_z = (hp - n) * z * omz
            f_r = hp * r * (1.0 - r)
            carry = np.zeros((B, H))
            for t in range(T - 1, -1, -1):
                dh = d_top[t] + carry
                d = dxp[t]
                dan = d[:, 2 * H:]
                np.multiply(dh, f_n[t], out=dan)
                np.multiply(dh, f_z[t], out=d[:, :H])
                drh = dan @ Un_T
                np.multiply(drh, f_r[t], out=d[:, H:2 * H])
                carry = dh * z[t]
                drh *= r[t]
                carry += drh
                carry += d[:, :2 * H] @ Uzr_T
            dh0[l] = carry
            flat = dxp.reshape(T * B, 3 * H)
            grads[f"W{l}"] = inp.reshape(T * B, -1).T @ flat
            # hidden-to-hidden grads in one product over all steps
            hprev = hs[:-1].reshape(T * B, H)
            rh = (zr[:, :, H:] * hs[:-1]).reshape(T * B, H)
            grads[f"U{l}"] = np.concatenate([hprev.T @ flat[:, :2 * H], rh.T @ flat[:, 2 * H:]], axis=1)
            grads[f"b{l}"] = flat.sum(axis=0)
            d_top = dxp @ W.T
        return grads, d_top.transpose(1, 0, 2), dh0


class Dense:
    """Affine map ``act(x W^T + b)`` applied to the last axis; ``W`` is (out, in)."""

    def __init__(self, input_dim: int, output_dim: int, activation: str, rng: np.random.Generator):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.params = {
            "W": glorot_uniform(rng, input_dim, output_dim, (output_dim, input_dim)),
            "b": np.zeros(output_dim),
        }

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"dense layer expects width {self.input_dim}, got {x.shape[-1]}")
        a = x @ self.params["W"].T + self.params["b"]
        if self.activation == "sigmoid":
            y = sigmoid(a)
        elif self.activation == "tanh":
            y = np.tanh(a)
        else:
            y = a
        return y, {"owner": self, "params": dict(self.params), "x": x, "y": y}

    def backward(self, cache, grad_out: np.ndarray):
        if cache.get("owner") is not self:
            raise ValueError("cache was produced by a different dense layer")
        for k, v in self.params.items():
            if cache["params"].get(k) is not v:
                raise ValueError(f"stale cache: parameter {k} changed since the forward pass")
        y, x = cache["y"], cache["x"]
        if grad_out.shape != y.shape:
            raise ValueError(f"grad_out must have shape {y.shape}, got {grad_out.shape}")
        if self.activation == "sigmoid":
            da = grad_out * y * (1.0 - y)
        elif self.activation == "tanh":
            da = grad_out * (1.0 - y * y)
        else:
            da = grad_out
        da2 = da.reshape(-1, self.output_dim)
        grads = {"W": da2.T @ x.reshape(-1, self.input_dim), "b": da2.sum(axis=0)}
        return grads, da @ self.params["W"]


class SequenceNet:
    """A GRU stack followed by a per-step dense head."""

    def __init__(self, input_dim: int, hidden_dim: int, num_layers: int, output_dim: int,
                 activation: str, rng: np.random.Generator):
        self.gru = GruStack(input_dim, hidden_dim, num_layers, rng)
        self.head = Dense(hidden_dim, output_dim, activation, rng)

    @property
    def params(self) -> dict[str, np.ndarray]:
        out = {f"gru.{k}": v for k, v in self.gru.params.items()}
        out.update({f"head.{k}": v for k, v in self.head.params.items()})
        return out

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for k, v in params.items():
            part, name = k.split(".", 1)
            target = self.gru.params if part == "gru" else self.head.params
            if name not in target or target[name].shape != v.shape:
                raise ValueError(f"unexpected parameter {k} with shape {v.shape}")
            target[name] = v

    def forward(self, x: np.ndarray):
        hidden, gcache = self.gru.forward(x)
        y, dcache = self.head.forward(hidden)
        return y, (gcache, dcache)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray):
        gcache, dcache = cache
        dgrads, dhidden = self.head.backward(dcache, grad_out)
        ggrads, dx, _ = self.gru.backward(gcache, dhidden)
        grads = {f"gru.{k}": v for k, v in ggrads.items()}
        grads.update({f"head.{k}": v for k, v in dgrads.items()})
        return grads, dx


@dataclass
class Adam:
    """Adam with bias correction. ``m``/``v`` are keyed like the parameter dict."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    clip_norm: float | None = None

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Return updated copies of ``params``; the inputs are left untouched."""
        if set(params) != set(grads):
            raise ValueError("parameter and gradient keys differ")
        for k, p in params.items():
            if grads[k].shape != p.shape:
                raise ValueError(f"gradient for {k} has shape {grads[k].shape}, parameter {p.shape}")
            if k in self.m and self.m[k].shape != p.shape:
                raise ValueError(f"optimizer state for {k} does not match parameter shape")
        if self.clip_norm is not None:
            total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if total > self.clip_norm:
                grads = {k: g * (self.clip_norm / total) for k, g in grads.items()}
        self.step_count += 1
        t = self.step_count
        lr_t = self.learning_rate * np.sqrt(1.0 - self.beta2 ** t) / (1.0 - self.beta1 ** t)
        out = {}
        for k in sorted(params):
            g = grads[k]
            m = self.beta1 * self.m.get(k, 0.0) + (1.0 - self.beta1) * g
            v = self.beta2 * self.v.get(k, 0.0) + (1.0 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            out[k] = params[k] - lr_t * m / (np.sqrt(v) + self.eps * np.sqrt(1.0 - self.beta2 ** t))
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.m = {k[2:]: v for k, v in arrays.items() if k.startswith("m.")}
        self.v = {k[2:]: v for k, v in arrays.items() if k.startswith("v.")}


def adam_step(params, grads, state: Adam):
    """Functional spelling of :meth:`Adam.step`."""
    return state.step(params, grads), state


# -- losses ---------------------------------------------------------------

def mse(pred: np.ndarray, target: np.ndarray):
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def bce_with_logits(logits: np.ndarray, label: float):
    """Mean sigmoid cross-entropy against a constant label; returns (loss, dlogits)."""
    # softplus(-y) for label 1, softplus(y) for label 0, stable form
    sp = np.maximum(logits, 0) - logits * label + np.log1p(np.exp(-np.abs(logits)))
    return float(np.mean(sp)), (sigmoid(logits) - label) / logits.size


# -- gradient checking ----------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    failures: list[tuple[str, tuple[int, ...], float, float, float]]

    @property
    def ok(self) -> bool:
        return not self.failures


def relative_error(a, b, floor: float = 1e-8):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)


def gradient_check(params: dict[str, np.ndarray], loss_fn: Callable[[dict], float],
                   analytic: dict[str, np.ndarray], tolerance: float = 1e-4,
                   step: float = 1e-5, floor: float = 1e-8, stencil: int = 2) -> GradCheckReport:
    """Compare ``analytic`` against central differences of ``loss_fn`` at ``params``.

    ``loss_fn`` receives a full parameter dict; every coordinate is perturbed
    in turn. ``stencil=4`` uses the five-point formula, which tolerates a
    larger step and so resolves small gradients of large-valued losses.
    Failures list (name, index, analytic, numeric, rel. error).
    """
    if stencil not in (2, 4):
        raise ValueError("stencil must be 2 or 4")
    total = sum(p.size for p in params.values())
    if total > 10_000:
        raise ValueError(f"gradient check limited to 10^4 parameters, got {total}")
    worst = 0.0
    failures = []
    for name in sorted(params):
        base = params[name]

        def at(idx, delta):
            moved = base.copy()
            moved[idx] += delta
            return loss_fn({**params, name: moved})

        for idx in np.ndindex(base.shape):
            if stencil == 2:
                num = (at(idx, step) - at(idx, -step)) / (2 * step)
            else:
                num = (8 * (at(idx, step) - at(idx, -step)) - (at(idx, 2 * step) - at(idx, -2 * step))) / (12 * step)
            ana = float(analytic[name][idx])
            err = float(relative_error(ana, num, floor))
            worst = max(worst, err)
            if err >= tolerance:
                failures.append((name, idx, ana, num, err))
    return GradCheckReport(worst, total, failures)
