"""Q/S/T networks, time encoding, parameter container and checkpoints."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad

# fixed ordering used by the flat parameter vector and checkpoints
STACK_FIELDS = ("W1", "W2", "W3", "b", "W4", "b4",
                "Ws", "bs", "Wq", "bq", "Wt", "bt", "lambda_s", "lambda_q")
HEADS = ("Ws", "bs", "Wq", "bq", "Wt", "bt")
STACKS = ("v_stack", "x_stack")
CHECKPOINT_VERSION = 1


@dataclass
class Stack:
    """Weights of one Q/S/T network. Fields may hold ndarrays or tape Vars."""

    W1: np.ndarray
    W2: np.ndarray
    W3: np.ndarray
    b: np.ndarray
    W4: np.ndarray
    b4: np.ndarray
    Ws: np.ndarray
    bs: np.ndarray
    Wq: np.ndarray
    bq: np.ndarray
    Wt: np.ndarray
    bt: np.ndarray
    lambda_s: np.ndarray
    lambda_q: np.ndarray

    def arrays(self) -> list:
        return [getattr(self, f) for f in STACK_FIELDS]

    def heads_are_zero(self) -> bool:
        heads = [getattr(self, h) for h in HEADS]
        return all(isinstance(h, np.ndarray) and not h.any() for h in heads)


@dataclass
class NetParams:
    v_stack: Stack
    x_stack: Stack
    n: int
    n_hidden: int
    M: int

    def stacks(self) -> list[Stack]:
        return [self.v_stack, self.x_stack]

    def arrays(self) -> list:
        return self.v_stack.arrays() + self.x_stack.arrays()

    def to_flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(ad.value(a)) for a in self.arrays()])

    @property
    def size(self) -> int:
        return sum(np.size(ad.value(a)) for a in self.arrays())

    def from_flat(self, flat: np.ndarray) -> NetParams:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.size,):
            raise ValueError(f"flat vector has shape {flat.shape}, expected ({self.size},)")
        out, pos = [], 0
        for a in self.arrays():
            shape = np.shape(ad.value(a))
            k = int(np.prod(shape))
            out.append(flat[pos:pos + k].reshape(shape).copy())
            pos += k
        return self._rebuild(out)

    def _rebuild(self, arrays: list) -> NetParams:
        k = len(STACK_FIELDS)
        return dataclasses.replace(self, v_stack=Stack(*arrays[:k]), x_stack=Stack(*arrays[k:]))

    def on_tape(self, tape: ad.Tape) -> NetParams:
        """Copy whose arrays are leaves on ``tape``, in flat order."""
        return self._rebuild([tape.leaf(np.array(ad.value(a))) for a in self.arrays()])

    def copy(self) -> NetParams:
        return self._rebuild([np.array(ad.value(a)) for a in self.arrays()])

    def with_zero_heads(self) -> NetParams:
        """Same hidden layers with every output head zeroed: plain HMC."""
        p = self.copy()
        for stack in p.stacks():
            for name in HEADS:
                setattr(stack, name, np.zeros_like(getattr(stack, name)))
        return p


def encode_time(t: int, M: int) -> np.ndarray:
    if not 1 <= t <= M:
        raise ValueError(f"step index t={t} outside 1..{M}")
    angle = 2.0 * np.pi * t / M
    return np.array([np.cos(angle), np.sin(angle)])


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def _init_stack(rng: np.random.Generator, n: int, nh: int) -> Stack:
    # W1..W3 together form one layer over the (n + n + 2) concatenated inputs
    fan_in = 2 * n + 2
    w_in = _glorot(rng, nh, fan_in)
    return Stack(
        W1=w_in[:, :n].copy(), W2=w_in[:, n:2 * n].copy(), W3=w_in[:, 2 * n:].copy(),
        b=np.zeros(nh),
        W4=_glorot(rng, nh, nh), b4=np.zeros(nh),
        Ws=np.zeros((n, nh)), bs=np.zeros(n),
        Wq=np.zeros((n, nh)), bq=np.zeros(n),
        Wt=np.zeros((n, nh)), bt=np.zeros(n),
        # with zero heads tanh(0) = 0, so outputs are still zero; a zero scale
        # here would also zero the head gradients and freeze S and Q forever
        lambda_s=np.ones(()), lambda_q=np.ones(()),
    )


def init_params(n: int, n_hidden: int, M: int, seed: int) -> NetParams:
    """Glorot-uniform hidden layers, zero output heads, unit output scales."""
    if n < 1 or n_hidden < 1 or M < 1:
        raise ValueError(f"need n, n_hidden, M >= 1, got {n}, {n_hidden}, {M}")
    rng = np.random.default_rng(seed)
    v_stack = _init_stack(rng, n, n_hidden)
    x_stack = _init_stack(rng, n, n_hidden)
    return NetParams(v_stack, x_stack, n=n, n_hidden=n_hidden, M=M)


def randomize_heads(params: NetParams, seed: int, scale: float = 0.1) -> NetParams:
    """Give every head small random weights (used by the property checks)."""
    rng = np.random.default_rng(seed)
    p = params.copy()
    for stack in p.stacks():
        for name in HEADS:
            arr = getattr(stack, name)
            setattr(stack, name, scale * rng.standard_normal(arr.shape))
        stack.b = 0.1 * rng.standard_normal(stack.b.shape)
        stack.b4 = 0.1 * rng.standard_normal(stack.b4.shape)
        stack.lambda_s = np.asarray(rng.uniform(0.5, 1.5))
        stack.lambda_q = np.asarray(rng.uniform(0.5, 1.5))
    return p


def forward(params: NetParams, which: str, group_a, group_b, time_code):
    """Evaluate (S, Q, T) of the named stack on a batch.

    ``group_a`` and ``group_b`` are (N, n); ``time_code`` is a length-2 vector.
    """
    stack = getattr(params, which)
    n = params.n
    if np.shape(ad.value(group_a))[-1] != n or np.shape(ad.value(group_b))[-1] != n:
        raise ValueError(f"inputs must have trailing dimension {n}")
    tau = np.asarray(time_code, dtype=float).reshape(1, 2)
    h1 = ad.relu(ad.linear(group_a, stack.W1) + ad.linear(group_b, stack.W2)
                 + ad.linear(tau, stack.W3) + stack.b)
    h2 = ad.relu(ad.linear(h1, stack.W4) + stack.b4)
    s = stack.lambda_s * ad.tanh(ad.linear(h2, stack.Ws) + stack.bs)
    q = stack.lambda_q * ad.tanh(ad.linear(h2, stack.Wq) + stack.bq)
    t = ad.linear(h2, stack.Wt) + stack.bt
    return s, q, t


# -- checkpoints -------------------------------------------------------------

def _stack_to_json(stack: Stack) -> dict:
    out = {}
    for name in STACK_FIELDS:
        if name.startswith("lambda"):
            continue
        arr = np.asarray(ad.value(getattr(stack, name)), dtype=float)
        out[name] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
    return out


def _stack_from_json(blob: dict, lam_s: float, lam_q: float) -> Stack:
    arrays = {}
    for name in STACK_FIELDS:
        if name.startswith("lambda"):
            continue
        entry = blob[name]
        arrays[name] = np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
    return Stack(**arrays, lambda_s=np.asarray(float(lam_s)), lambda_q=np.asarray(float(lam_q)))


def save_checkpoint(path: str | Path, params: NetParams, masks: np.ndarray,
                    eps: float, seed: int) -> None:
    blob = {
        "version": CHECKPOINT_VERSION,
        "n": params.n,
        "M": params.M,
        "n_hidden": params.n_hidden,
        "masks": np.asarray(masks, dtype=int).tolist(),
        "v_stack": _stack_to_json(params.v_stack),
        "x_stack": _stack_to_json(params.x_stack),
        "lambda_s": {s: float(ad.value(getattr(params, s).lambda_s)) for s in STACKS},
        "lambda_q": {s: float(ad.value(getattr(params, s).lambda_q)) for s in STACKS},
        "eps": float(eps),
        "seed": seed,
    }
    Path(path).write_text(json.dumps(blob, indent=1))


def load_checkpoint(path: str | Path) -> tuple[NetParams, np.ndarray, float, int]:
    blob = json.loads(Path(path).read_text())
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')!r}")
    stacks = [_stack_from_json(blob[s], blob["lambda_s"][s], blob["lambda_q"][s]) for s in STACKS]
    params = NetParams(*stacks, n=int(blob["n"]), n_hidden=int(blob["n_hidden"]), M=int(blob["M"]))
    masks = np.asarray(blob["masks"], dtype=float).reshape(params.M, params.n)
    return params, masks, float(blob["eps"]), blob.get("seed")


def grad_params(loss, taped: NetParams) -> np.ndarray:
    """Reverse-mode gradient of a scalar ``loss`` w.r.t. taped parameters, flat."""
    return np.concatenate([g.ravel() for g in ad.grad_of(loss, taped.arrays())])
