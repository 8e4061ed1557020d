"""Fitting loop: optimizer steps, trajectory recording, serialization.

`run_dip` minimizes sse_loss(model(z), x0) for a fixed noise input z and
records the model output at iteration 0 (before any step), every
`record_every` steps, and at the final step. Everything is deterministic
given the seeds in the config.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, sse_loss


@dataclass
class FitConfig:
    steps: int = 1000
    learning_rate: float = 0.01
    record_every: int = 1
    noise_seed: int = 0
    init_seed: int = 0
    optimizer_kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    input_noise_std: float = 0.1

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 1 <= self.record_every <= self.steps:
            raise ValueError(
                f"record_every must be in [1, steps], got {self.record_every}"
            )
        if self.optimizer_kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer_kind!r}")

    def to_dict(self):
        return {
            "steps": self.steps,
            "learning_rate": self.learning_rate,
            "record_every": self.record_every,
            "noise_seed": self.noise_seed,
            "init_seed": self.init_seed,
            "optimizer_kind": self.optimizer_kind,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "input_noise_std": self.input_noise_std,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def sample_input_noise(shape, noise_seed, std=0.1):
    """Fixed white-noise input: i.i.d. N(0, std²), deterministic per seed."""
    rng = np.random.default_rng(noise_seed)
    return Tensor(rng.normal(0.0, std, size=tuple(shape)))


def optimizer_step(params, grads, state, hyper):
    """Apply one update in place; returns the (possibly new) state.

    hyper: dict with "kind" ("sgd" or "adam"), "lr", and for adam "beta1",
    "beta2", "eps". Adam keeps per-parameter first/second moments and a step
    counter in state.
    """
    kind = hyper["kind"]
    lr = hyper["lr"]
    if kind == "sgd":
        for p, g in zip(params, grads):
            p.data -= lr * g
        return state
    if kind != "adam":
        raise ValueError(f"unknown optimizer kind {hyper['kind']!r}")
    b1, b2, eps = hyper["beta1"], hyper["beta2"], hyper["eps"]
    if state is None:
        state = {
            "t": 0,
            "m": [np.zeros_like(p.data) for p in params],
            "v": [np.zeros_like(p.data) for p in params],
        }
    state["t"] += 1
    t = state["t"]
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


@dataclass
class Trajectory:
    """Recorded outputs along one fit: iteration numbers, f_θ^(i)(z), SSE."""

    iterations: list
    outputs: list
    losses: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.iterations) != len(self.outputs) or len(self.iterations) != len(self.losses):
            raise ValueError("iterations/outputs/losses lengths differ")
        if any(b <= a for a, b in zip(self.iterations, self.iterations[1:])):
            raise ValueError(f"iterations not strictly ascending: {self.iterations}")
        shapes = {tuple(np.shape(o)) for o in self.outputs}
        if len(shapes) > 1:
            raise ValueError(f"recorded outputs disagree on shape: {shapes}")


def run_dip(model, z, x0, cfg):
    """Fit model(z) to x0 for cfg.steps and return the recorded trajectory.

    Aborts with the step index if the loss ever goes non-finite. The final
    recorded loss must not exceed the initial one.
    """
    x0t = x0 if isinstance(x0, Tensor) else Tensor(np.asarray(x0, dtype=float))
    hyper = {
        "kind": cfg.optimizer_kind,
        "lr": cfg.learning_rate,
        "beta1": cfg.beta1,
        "beta2": cfg.beta2,
        "eps": cfg.eps,
    }
    state = None
    iterations, outputs, losses = [], [], []
    for i in range(cfg.steps + 1):
        model.zero_grad()
        out = model.forward(z)
        loss = sse_loss(out, x0t)
        lval = loss.item()
        if not np.isfinite(lval):
            raise RuntimeError(f"non-finite loss at step {i}")
        if i == 0 or i == cfg.steps or i % cfg.record_every == 0:
            iterations.append(i)
            outputs.append(out.data.copy())
            losses.append(lval)
        if i == cfg.steps:
            break
        loss.backward()
        state = optimizer_step(
            model.parameters, [p.grad for p in model.parameters], state, hyper
        )
    if losses[-1] > losses[0]:
        raise RuntimeError(
            f"fit diverged: final loss {losses[-1]:.6g} > initial {losses[0]:.6g}"
        )
    return Trajectory(iterations, outputs, losses, meta={"config": cfg.to_dict()})


# ---------------------------------------------------------------------------
# serialization


def _output_filename(iteration):
    return f"output_{iteration:08d}.bin"


def save_trajectory(traj, dirpath):
    """Write meta.json plus one little-endian float64 file per output."""
    os.makedirs(dirpath, exist_ok=True)
    shape = list(np.shape(traj.outputs[0]))
    meta = {
        "iterations": [int(i) for i in traj.iterations],
        "losses": [float(v) for v in traj.losses],
        "shape": shape,
        **traj.meta,
    }
    with open(os.path.join(dirpath, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    for it, out in zip(traj.iterations, traj.outputs):
        arr = np.ascontiguousarray(np.asarray(out, dtype="<f8"))
        with open(os.path.join(dirpath, _output_filename(it)), "wb") as fh:
            fh.write(arr.tobytes())


def load_trajectory(dirpath):
    with open(os.path.join(dirpath, "meta.json")) as fh:
        meta = json.load(fh)
    iterations = meta.pop("iterations")
    losses = meta.pop("losses")
    shape = tuple(meta.pop("shape"))
    outputs = []
    for it in iterations:
        with open(os.path.join(dirpath, _output_filename(it)), "rb") as fh:
            raw = fh.read()
        outputs.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape))
    return Trajectory(iterations, outputs, losses, meta=meta)
