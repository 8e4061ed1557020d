"""Experiment runners that turn fitted trajectories into data artifacts.

Each exp_* function takes an ExperimentConfig and produces an
ExperimentReport plus CSV/PGM files under the config's output directory.
Everything is seeded, so rerunning the same config reproduces the same
CSV and PGM bytes.
"""

import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, grad_check, conv1d, conv2d, linear, relu, leaky_relu
from .autodiff import sse_loss, tsum, upsample
from .fit import FitConfig, run_dip, sample_input_noise, save_trajectory
from .nets import ModelSpec, build_model
from .signals import (
    add_gaussian_noise,
    add_low_freq_noise,
    load_pgm,
    plaid_image,
    save_pgm,
    synth_pattern_image,
    synthetic_corpus,
    two_sine,
)
from .spectral import (
    ConvergenceCriterion,
    band_energy,
    convergence_time,
    amplitude_at,
    psnr,
    radial_spectrum,
    spectrum_error_map,
    trace_from_outputs,
    trajectory_divergence,
)
from .upsampling import response_decay_report

# Input noise gets its own seed stream so that "seed 3" for the model init
# never reuses the same generator state for z.
NOISE_SEED_OFFSET = 1000
# Second member of a divergence pair: far enough from any plausible seed list.
PAIR_SEED_OFFSET = 5000

KINDS = (
    "1d",
    "divergence",
    "denoise",
    "failure",
    "capacity",
    "stride",
    "spectrum",
    "upsample_response",
    "grad_check",
)


def deep_merge(base, override):
    """Recursive dict merge; override wins, nested dicts merge key-wise.

    A None (JSON null) override deletes the key, so configs can drop a
    default entry (e.g. run the capacity sweep for one family only).
    """
    out = dict(base)
    for k, v in override.items():
        if v is None:
            out.pop(k, None)
        elif isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    """Fully serializable description of one experiment run.

    models maps a role name to {"spec": ModelSpec fields, "fit": overrides
    applied on top of the base fit dict}. signal holds whatever the
    experiment's signal builder needs. seeds drive both the parameter init
    and (offset) the input noise.
    """

    kind: str
    models: dict = field(default_factory=dict)
    fit: dict = field(default_factory=dict)
    signal: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str = None
    workers: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if not self.seeds:
            raise ValueError("seeds list must not be empty")
        self.seeds = [int(s) for s in self.seeds]
        self.workers = int(self.workers)
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self):
        return {
            "kind": self.kind,
            "models": self.models,
            "fit": self.fit,
            "signal": self.signal,
            "seeds": list(self.seeds),
            "out_dir": self.out_dir,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d):
        known = {"kind", "models", "fit", "signal", "seeds", "out_dir", "workers"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    def spec_for(self, role, seed):
        entry = self.models[role]
        return ModelSpec.from_dict({**entry["spec"], "init_seed": int(seed)})

    def fit_for(self, role, seed, **extra):
        merged = dict(self.fit)
        if role is not None:
            merged.update(self.models[role].get("fit", {}))
        merged.update(extra)
        merged.setdefault("noise_seed", int(seed) + NOISE_SEED_OFFSET)
        merged["init_seed"] = int(seed)
        return FitConfig.from_dict(merged)


@dataclass
class ExperimentReport:
    config: dict
    per_seed: list
    aggregate: dict
    wall_clock_s: float = 0.0
    manifest: list = field(default_factory=list)

    def to_dict(self):
        return {
            "config": self.config,
            "per_seed": self.per_seed,
            "aggregate": self.aggregate,
            "wall_clock_s": self.wall_clock_s,
            "manifest": list(self.manifest),
        }

    def save(self, out_dir):
        path = os.path.join(out_dir, "report.json")
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        missing = [
            f for f in self.manifest if not os.path.exists(os.path.join(out_dir, f))
        ]
        if missing:
            raise RuntimeError(f"manifest files missing after run: {missing}")
        return path


class Artifacts:
    """Collects CSV/PGM/trajectory files for one run and records the manifest."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.manifest = []
        os.makedirs(out_dir, exist_ok=True)

    def _note(self, name):
        self.manifest.append(name)
        return os.path.join(self.out_dir, name)

    def csv(self, name, header, rows):
        path = self._note(name)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        return path

    def pgm(self, name, image):
        save_pgm(np.clip(np.asarray(image, dtype=float), 0.0, 1.0), self._note(name))

    def heatmap(self, name, matrix):
        """Row-normalized grayscale: each row scaled by its own max."""
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2:
            raise ValueError("heatmap expects a 2D matrix")
        peaks = m.max(axis=1, keepdims=True)
        peaks[peaks <= 0] = 1.0
        save_pgm(np.clip(m / peaks, 0.0, 1.0), self._note(name))

    def trajectory(self, name, traj):
        save_trajectory(traj, os.path.join(self.out_dir, name))
        meta = os.path.join(name, "meta.json")
        self.manifest.append(meta)


def _cell(v):
    """CSV cell text: floats via repr so they round-trip exactly."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return "nan"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_csv(path):
    """Read back one of our CSVs: header list + rows of strings."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def run_jobs(jobs, workers):
    """Run (key, thunk) pairs, possibly threaded; results keyed determinstically."""
    if workers <= 1:
        return {key: fn() for key, fn in jobs}
    results = {}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [(key, pool.submit(fn)) for key, fn in jobs]
        for key, fut in futures:
            results[key] = fut.result()
    return results


def mean_std(values):
    """Aggregate used in reports; population std to stay recomputable exactly."""
    a = np.asarray(list(values), dtype=float)
    return float(a.mean()), float(a.std())


def _ranks(xs):
    order = sorted(range(len(xs)), key=lambda i: xs[i])
    ranks = [0.0] * len(xs)
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[order[j + 1]] == xs[order[i]]:
            j += 1
        shared = (i + j) / 2.0 + 1.0
        for t in range(i, j + 1):
            ranks[order[t]] = shared
        i = j + 1
    return ranks


def spearman(xs, ys):
    """Rank correlation with average ranks for ties."""
    if len(xs) != len(ys):
        raise ValueError("spearman needs equal-length sequences")
    if len(xs) < 2:
        raise ValueError("spearman needs at least two points")
    rx = np.asarray(_ranks(list(xs)))
    ry = np.asarray(_ranks(list(ys)))
    cx = rx - rx.mean()
    cy = ry - ry.mean()
    denom = math.sqrt(float((cx * cx).sum()) * float((cy * cy).sum()))
    if denom == 0.0:
        return 0.0
    return float((cx * cy).sum()) / denom


# ---------------------------------------------------------------------------
# shared fitting plumbing


def input_noise_for(spec, target_shape, cfg):
    """Build the fixed net input for a family: noise image/vector or None."""
    if spec.family == "relunet":
        return None
    if spec.family in ("dip_conv_1d", "dip_conv_2d"):
        return sample_input_noise(tuple(target_shape), cfg.noise_seed, cfg.input_noise_std)
    n = int(np.prod(target_shape))
    return sample_input_noise((n,), cfg.noise_seed, cfg.input_noise_std)


def fit_role(config, role, seed, target, **fit_extra):
    spec = config.spec_for(role, seed)
    cfg = config.fit_for(role, seed, **fit_extra)
    model = build_model(spec)
    z = input_noise_for(spec, np.asarray(target).shape, cfg)
    return run_dip(model, z, target, cfg)


def _psnr_curve(traj, clean):
    return [psnr(out, clean) for out in traj.outputs]


def _load_corpus(signal_cfg):
    """Corpus images as an ordered name -> array dict."""
    corpus_dir = signal_cfg.get("corpus_dir")
    if corpus_dir:
        images = {}
        for fname in sorted(os.listdir(corpus_dir)):
            if fname.endswith(".pgm"):
                images[fname[:-4]] = load_pgm(os.path.join(corpus_dir, fname))
        if not images:
            raise ValueError(f"no .pgm images found in {corpus_dir}")
        return images
    return synthetic_corpus(int(signal_cfg.get("size", 64)))


# ---------------------------------------------------------------------------
# experiment defaults

DEFAULTS = {
    "1d": {
        "kind": "1d",
        "models": {
            "model": {"spec": {"family": "dip_conv_1d", "depth": 10, "width": 256}}
        },
        "fit": {"steps": 600, "learning_rate": 1e-3, "record_every": 1},
        "signal": {"n": 256, "k1": 5, "k2": 50, "a1": 1.0, "a2": 1.0},
        "seeds": [0, 1, 2, 3, 4],
    },
    "divergence": {
        "kind": "divergence",
        "models": {
            "model": {"spec": {"family": "dip_conv_2d", "depth": 5, "width": 64}}
        },
        "fit": {"steps": 600, "learning_rate": 1e-3, "record_every": 5},
        "signal": {"size": 64, "coverages": [0.25, 0.5, 1.0]},
        "seeds": [0, 1, 2],
    },
    "denoise": {
        "kind": "denoise",
        "models": {
            "dip": {
                "spec": {
                    "family": "dip_conv_2d",
                    "depth": 5,
                    "width": 128,
                    "upsample_mode": "bilinear",
                },
                "fit": {"steps": 400, "learning_rate": 1e-3},
            },
            "relunet": {
                "spec": {
                    "family": "relunet",
                    "depth": 10,
                    "width": 128,
                    "signal_shape": [64, 64],
                },
                "fit": {"steps": 600, "learning_rate": 3e-3},
            },
            "linear_128": {
                "spec": {
                    "family": "dip_linear_2d",
                    "depth": 4,
                    "width": 128,
                    "signal_shape": [64, 64],
                },
                "fit": {"steps": 300, "learning_rate": 1e-3},
            },
            "linear_2048": {
                "spec": {
                    "family": "dip_linear_2d",
                    "depth": 4,
                    "width": 2048,
                    "signal_shape": [64, 64],
                },
                "fit": {"steps": 80, "learning_rate": 1e-3},
            },
        },
        "fit": {"record_every": 10},
        "signal": {"size": 64, "sigma": 25 / 255, "noise_seed_base": 500},
        "seeds": [0, 1, 2, 3, 4],
    },
    "failure": {
        "kind": "failure",
        "models": {
            "model": {"spec": {"family": "dip_conv_2d", "depth": 5, "width": 128}}
        },
        "fit": {"steps": 1000, "learning_rate": 3e-3, "record_every": 10},
        "signal": {
            "size": 64,
            "k": 12,
            "contrast": 0.15,
            "k_max": 5,
            "amplitude": 25 / 255,
            "noise_seed": 3,
            "early_iter": 100,
        },
        "seeds": [0],
    },
    "capacity": {
        "kind": "capacity",
        "models": {
            # plain sgd, not adam: adam's per-parameter normalization makes
            # every fit faster the more parameters it has, which swamps the
            # architectural depth/width trends this sweep measures
            "dip_conv_1d": {
                "spec": {"family": "dip_conv_1d", "depth": 10, "width": 256},
                "fit": {
                    "steps": 5000,
                    "learning_rate": 3e-4,
                    "optimizer_kind": "sgd",
                },
            },
            "dip_linear_1d": {
                "spec": {
                    "family": "dip_linear_1d",
                    "depth": 10,
                    "width": 256,
                    "signal_shape": [256],
                },
                "fit": {
                    "steps": 800,
                    "learning_rate": 3e-4,
                    "optimizer_kind": "sgd",
                },
            },
        },
        "fit": {"record_every": 1},
        "signal": {
            "n": 256,
            "k1": 5,
            "k2": 50,
            "a1": 1.0,
            "a2": 1.0,
            "depths": [4, 6, 8, 10],
            "widths": [64, 128, 256],
        },
        "seeds": list(range(10)),
    },
    "stride": {
        "kind": "stride",
        "models": {
            "stride_4": {
                "spec": {
                    "family": "dip_conv_2d",
                    "depth": 4,
                    "width": 64,
                    "upsample_stride": 4,
                }
            },
            "stride_32": {
                "spec": {
                    "family": "dip_conv_2d",
                    "depth": 2,
                    "width": 64,
                    "upsample_stride": 32,
                }
            },
        },
        "fit": {"steps": 600, "learning_rate": 3e-3, "record_every": 10},
        "signal": {
            "size": 64,
            "corpus_image": "shapes",
            "high_band": [16, 64],
            "low_band": [0, 4],
            "probe_iter": 500,
        },
        "seeds": [0, 1, 2],
    },
    "spectrum": {
        "kind": "spectrum",
        "models": {
            "model": {"spec": {"family": "dip_conv_2d", "depth": 5, "width": 128}}
        },
        "fit": {"learning_rate": 3e-3},
        "signal": {
            "size": 64,
            "corpus_image": "blobs",
            "iterations": [20, 40, 60, 80, 200],
        },
        "seeds": [0],
    },
    "upsample_response": {
        "kind": "upsample_response",
        "models": {},
        "fit": {},
        "signal": {
            "modes": ["nearest", "bilinear"],
            "strides": [2, 4, 8],
            "n": 256,
            "cycles": list(range(0, 13)),
        },
        "seeds": [0],
    },
    "grad_check": {
        "kind": "grad_check",
        "models": {},
        "fit": {},
        "signal": {"configs": 50, "tolerance": 1e-4},
        "seeds": [0],
    },
}


def default_config(kind, overrides=None, **kwargs):
    if kind not in DEFAULTS:
        raise ValueError(f"unknown experiment kind {kind!r}")
    d = deep_merge(DEFAULTS[kind], overrides or {})
    d.update({k: v for k, v in kwargs.items() if v is not None})
    return ExperimentConfig.from_dict(d)


# ---------------------------------------------------------------------------
# 1D two-sine experiments


def _two_sine_run(config, role, seed, sig, spec_over=None):
    """Fit the two-sine target once; return trajectory plus traces/times."""
    target = two_sine(sig["n"], sig["k1"], sig["k2"], sig["a1"], sig["a2"])
    spec_dict = config.models[role]["spec"]
    if spec_over:
        spec_dict = {**spec_dict, **spec_over}
    spec = ModelSpec.from_dict({**spec_dict, "init_seed": int(seed)})
    cfg = config.fit_for(role, seed)
    model = build_model(spec)
    z = input_noise_for(spec, target.shape, cfg)
    traj = run_dip(model, z, target, cfg)
    crit = ConvergenceCriterion()
    tr1 = trace_from_outputs(traj.outputs, sig["k1"], sig["a1"], traj.iterations)
    tr2 = trace_from_outputs(traj.outputs, sig["k2"], sig["a2"], traj.iterations)
    return {
        "trajectory": traj,
        "target": target,
        "trace_k1": tr1,
        "trace_k2": tr2,
        "t1": convergence_time(tr1, crit),
        "t2": convergence_time(tr2, crit),
    }


def exp_1d(config):
    """Two-frequency convergence times for one model family."""
    t0 = time.time()
    out = Artifacts(config.out_dir)
    sig = config.signal
    per_seed = []
    se_rows = []
    time_rows = []
    for idx, seed in enumerate(config.seeds):
        run = _two_sine_run(config, "model", seed, sig)
        traj, tr1, tr2 = run["trajectory"], run["trace_k1"], run["trace_k2"]
        t1, t2 = run["t1"], run["t2"]
        for it, s1, s2 in zip(traj.iterations, tr1.se, tr2.se):
            se_rows.append([seed, it, s1, s2])
        ratio = (t2 / t1) if (t1 and t2 and t1 > 0) else None
        amp2_at_t1 = None
        if t1 is not None:
            amp2_at_t1 = amplitude_at(
                traj.outputs[traj.iterations.index(t1)], sig["k2"]
            )
        time_rows.append([seed, t1, t2, ratio, amp2_at_t1])
        marks = {"t1": t1, "t2": t2, "final": traj.iterations[-1]}
        sig_rows = []
        cols = {}
        for tag, it in marks.items():
            cols[tag] = (
                traj.outputs[traj.iterations.index(it)] if it is not None else None
            )
        for j in range(sig["n"]):
            sig_rows.append(
                [j, run["target"][j]]
                + [cols[tag][j] if cols[tag] is not None else None for tag in marks]
            )
        out.csv(
            f"signals_seed{seed}.csv",
            ["index", "target", "out_t1", "out_t2", "out_final"],
            sig_rows,
        )
        if idx == 0:
            out.trajectory(f"traj_seed{seed}", traj)
        per_seed.append(
            {
                "seed": seed,
                "t1": t1,
                "t2": t2,
                "ratio": ratio,
                "amp_k2_at_t1": amp2_at_t1,
                "final_loss": traj.losses[-1],
            }
        )
    out.csv("se_curves.csv", ["seed", "iteration", "se_k1", "se_k2"], se_rows)
    out.csv(
        "times.csv", ["seed", "t1", "t2", "ratio", "amp_k2_at_t1"], time_rows
    )
    t1s = [r["t1"] for r in per_seed]
    t2s = [r["t2"] for r in per_seed]
    ok = all(v is not None for v in t1s + t2s)
    m1, s1 = mean_std(t1s) if ok else (None, None)
    m2, s2 = mean_std(t2s) if ok else (None, None)
    aggregate = {
        "mean_t1": m1,
        "std_t1": s1,
        "mean_t2": m2,
        "std_t2": s2,
        "ordering_holds": ok and all(a < b for a, b in zip(t1s, t2s)),
        "seeds_with_ratio_ge_1_5": sum(
            1 for r in per_seed if r["ratio"] is not None and r["ratio"] >= 1.5
        ),
        "equal_band_seeds": sum(
            1
            for r in per_seed
            if r["t1"] is not None
            and r["t2"] is not None
            and abs(r["t1"] - r["t2"]) <= 0.2 * max(r["t1"], r["t2"])
        ),
    }
    report = ExperimentReport(
        config.to_dict(), per_seed, aggregate, time.time() - t0, out.manifest
    )
    report.save(config.out_dir)
    return report


def exp_capacity_sweep(config):
    """Depth x width grid of two-sine convergence times, conv and linear."""
    t0 = time.time()
    out = Artifacts(config.out_dir)
    sig = config.signal
    depths = [int(d) for d in sig["depths"]]
    widths = [int(w) for w in sig["widths"]]
    families = [r for r in config.models]

    jobs = []
    for fam in families:
        for depth in depths:
            for width in widths:
                for seed in config.seeds:
                    key = (fam, depth, width, seed)

                    def thunk(fam=fam, depth=depth, width=width, seed=seed):
                        run = _two_sine_run(
                            config,
                            fam,
                            seed,
                            sig,
                            spec_over={"depth": depth, "width": width},
                        )
                        return run["t1"], run["t2"]

                    jobs.append((key, thunk))
    results = run_jobs(jobs, config.workers)

    rows = []
    for fam, depth, width, seed in (k for k, _ in jobs):
        t1, t2 = results[(fam, depth, width, seed)]
        rows.append([fam, depth, width, seed, t1, t2])
    out.csv("times.csv", ["family", "depth", "width", "seed", "t1", "t2"], rows)

    summary_rows = []
    per_config = {}
    for fam in families:
        for depth in depths:
            for width in widths:
                t1s = [results[(fam, depth, width, s)][0] for s in config.seeds]
                t2s = [results[(fam, depth, width, s)][1] for s in config.seeds]
                if any(v is None for v in t1s + t2s):
                    raise RuntimeError(
                        f"unconverged run in sweep at {fam} d{depth} w{width}; "
                        "raise fit.steps"
                    )
                m1, sd1 = mean_std(t1s)
                m2, sd2 = mean_std(t2s)
                per_config[(fam, depth, width)] = (m1, m2)
                summary_rows.append([fam, depth, width, m1, sd1, m2, sd2, m2 - m1])
    out.csv(
        "summary.csv",
        ["family", "depth", "width", "mean_t1", "std_t1", "mean_t2", "std_t2", "mean_gap"],
        summary_rows,
    )

    aggregate = {}
    if "dip_conv_1d" in families:
        pts = [
            (d, w) + per_config[("dip_conv_1d", d, w)] for d in depths for w in widths
        ]
        aggregate["conv_spearman_depth_gap"] = spearman(
            [p[0] for p in pts], [p[3] - p[2] for p in pts]
        )
        aggregate["conv_spearman_width_t1"] = spearman(
            [p[1] for p in pts], [p[2] for p in pts]
        )
        aggregate["conv_spearman_width_t2"] = spearman(
            [p[1] for p in pts], [p[3] for p in pts]
        )
    if "dip_linear_1d" in families:
        aggregate["linear_band_all"] = all(
            abs(m1 - m2) <= 0.2 * max(m1, m2)
            for (fam, _, _), (m1, m2) in per_config.items()
            if fam == "dip_linear_1d"
        )
    per_seed = [
        {
            "family": fam,
            "depth": d,
            "width": w,
            "seed": s,
            "t1": results[(fam, d, w, s)][0],
            "t2": results[(fam, d, w, s)][1],
        }
        for (fam, d, w, s), _ in jobs
    ]
    report = ExperimentReport(
        config.to_dict(), per_seed, aggregate, time.time() - t0, out.manifest
    )
    report.save(config.out_dir)
    return report


# ---------------------------------------------------------------------------
# 2D experiments


def exp_divergence(config):
    """Twin-trajectory divergence across pattern coverage levels."""
    t0 = time.time()
    out = Artifacts(config.out_dir)
    sig = config.signal
    coverages = [float(c) for c in sig["coverages"]]
    size = int(sig["size"])
    per_seed = []
    div_rows, peak_rows = [], []
    for ci, cov in enumerate(coverages):
        target = synth_pattern_image(size, cov)
        for pi, seed in enumerate(config.seeds):
            seed_b = seed + PAIR_SEED_OFFSET
            # Each member is a fresh, complete run: its own parameter init
            # AND its own input noise z, the same way a second run of the
            # same script would redraw both.
            traj_a = fit_role(config, "model", seed, target)
            traj_b = fit_role(config, "model", seed_b, target)
            series = trajectory_divergence(traj_a, traj_b)
            for it, eps in zip(series.iterations, series.values):
                div_rows.append([cov, seed, it, eps])
            i_min = int(np.argmin(series.values))
            it_min = series.iterations[i_min]
            peak_rows.append([cov, seed, series.peak, series.values[0], it_min])
            out.pgm(
                f"out_cov{cov:g}_seed{seed}_a.pgm", traj_a.outputs[i_min]
            )
            out.pgm(
                f"out_cov{cov:g}_seed{seed}_b.pgm", traj_b.outputs[i_min]
            )
            if ci == 0 and pi == 0:
                out.trajectory(f"traj_cov{cov:g}_seed{seed}_a", traj_a)
                out.trajectory(f"traj_cov{cov:g}_seed{seed}_b", traj_b)
            per_seed.append(
                {
                    "coverage": cov,
                    "seed": seed,
                    "peak_eps": series.peak,
                    "eps0": float(series.values[0]),
                    "min_eps_iter": it_min,
                }
            )
        out.pgm(f"pattern_cov{cov:g}.pgm", target)
    out.csv("divergence.csv", ["coverage", "seed", "iteration", "epsilon"], div_rows)
    out.csv(
        "peaks.csv", ["coverage", "seed", "peak_eps", "eps0", "min_eps_iter"], peak_rows
    )
    mean_peaks = []
    for cov in coverages:
        m, _ = mean_std(
            [r["peak_eps"] for r in per_seed if r["coverage"] == cov]
        )
        mean_peaks.append(m)
    nondec_per_seed = {}
    for seed in config.seeds:
        peaks = [
            next(
                r["peak_eps"]
                for r in per_seed
                if r["coverage"] == cov and r["seed"] == seed
            )
            for cov in coverages
        ]
        nondec_per_seed[str(seed)] = all(
            a <= b for a, b in zip(peaks, peaks[1:])
        )
    aggregate = {
        "coverages": coverages,
        "mean_peaks": mean_peaks,
        "mean_peaks_nondecreasing": all(
            a <= b for a, b in zip(mean_peaks, mean_peaks[1:])
        ),
        "nondecreasing_per_seed": nondec_per_seed,
    }
    report = ExperimentReport(
        config.to_dict(), per_seed, aggregate, time.time() - t0, out.manifest
    )
    report.save(config.out_dir)
    return report


def exp_denoise(config):
    """Best-PSNR denoising comparison across the four architectures."""
    required = {"dip", "relunet", "linear_128", "linear_2048"}
    missing = required - set(config.models)
    if missing:
        raise ValueError(f"denoise config must define models {sorted(missing)}")
    t0 = time.time()
    out = Artifacts(config.out_dir)
    sig = config.signal
    sigma = float(sig["sigma"])
    base = int(sig.get("noise_seed_base", 500))
    corpus = _load_corpus(sig)
    noisy = {}
    for idx, (name, clean) in enumerate(sorted(corpus.items())):
        noisy[name] = add_gaussian_noise(clean, sigma=sigma, seed=base + idx)
        out.pgm(f"clean_{name}.pgm", clean)
        out.pgm(f"noisy_{name}.pgm", noisy[name].observed)

    roles = list(config.models)
    jobs = []
    for name in sorted(corpus):
        for role in roles:
            for seed in config.seeds:

                def thunk(name=name, role=role, seed=seed):
                    traj = fit_role(config, role, seed, noisy[name].observed)
                    curve = _psnr_curve(traj, corpus[name])
                    bi = int(np.argmax(curve))
                    return {
                        "curve": curve,
                        "iterations": traj.iterations,
                        "best_psnr": float(curve[bi]),
                        "best_iter": traj.iterations[bi],
                        "final_psnr": float(curve[-1]),
                        "best_output": traj.outputs[bi],
                    }

                jobs.append(((name, role, seed), thunk))
    results = run_jobs(jobs, config.workers)

    run_rows, curve_rows = [], []
    per_seed = []
    for (name, role, seed), _ in jobs:
        r = results[(name, role, seed)]
        npsnr = psnr(noisy[name].observed, corpus[name])
        run_rows.append(
            [name, role, seed, r["best_psnr"], r["best_iter"], r["final_psnr"], npsnr]
        )
        for it, p in zip(r["iterations"], r["curve"]):
            curve_rows.append([name, role, seed, it, p])
        if seed == config.seeds[0]:
            out.pgm(f"best_{name}_{role}.pgm", r["best_output"])
        per_seed.append(
            {
                "image": name,
                "arch": role,
                "seed": seed,
                "best_psnr": r["best_psnr"],
                "best_iter": r["best_iter"],
                "final_psnr": r["final_psnr"],
                "noisy_psnr": npsnr,
            }
        )
    out.csv(
        "runs.csv",
        ["image", "arch", "seed", "best_psnr", "best_iter", "final_psnr", "noisy_psnr"],
        run_rows,
    )
    out.csv(
        "psnr_curves.csv", ["image", "arch", "seed", "iteration", "psnr"], curve_rows
    )

    summary_rows = []
    means = {}
    for role in roles:
        vals = [r["best_psnr"] for r in per_seed if r["arch"] == role]
        m, sd = mean_std(vals)
        means[role] = m
        summary_rows.append([role, m, sd])
    out.csv("summary.csv", ["arch", "mean_best_psnr", "std_best_psnr"], summary_rows)

    per_image_gap = {}
    for name in sorted(corpus):
        dip_m, _ = mean_std(
            [r["best_psnr"] for r in per_seed if r["arch"] == "dip" and r["image"] == name]
        )
        lin_m, _ = mean_std(
            [
                r["best_psnr"]
                for r in per_seed
                if r["arch"] == "linear_128" and r["image"] == name
            ]
        )
        per_image_gap[name] = dip_m - lin_m
    aggregate = {
        "mean_best_psnr": means,
        "gap_dip_minus_linear_128": means["dip"] - means["linear_128"],
        "gap_dip_minus_relunet": means["dip"] - means["relunet"],
        "gap_linear_2048_minus_linear_128": means["linear_2048"] - means["linear_128"],
        "per_image_gap_dip_minus_linear_128": per_image_gap,
    }
    report = ExperimentReport(
        config.to_dict(), per_seed, aggregate, time.time() - t0, out.manifest
    )
    report.save(config.out_dir)
    return report


def exp_failure(config):
    """Low-frequency noise on a high-frequency image, plus a Gaussian control."""
    t0 = time.time()
    out = Artifacts(config.out_dir)
    sig = config.signal
    clean = plaid_image(int(sig["size"]), int(sig["k"]), float(sig["contrast"]))
    seed = config.seeds[0]
    noise_seed = int(sig.get("noise_seed", 3))
    cases = {
        "lowfreq": add_low_freq_noise(
            clean, k_max=int(sig["k_max"]), amplitude=float(sig["amplitude"]),
            seed=noise_seed,
        ),
        "gaussian": add_gaussian_noise(
            clean, sigma=float(sig["amplitude"]), seed=noise_seed
        ),
    }
    out.pgm("clean.pgm", clean)
    curve_rows = []
    per_seed = []
    aggregate = {}
    early = int(sig.get("early_iter", 100))
    for kind, ni in cases.items():
        out.pgm(f"noisy_{kind}.pgm", ni.observed)
        traj = fit_role(config, "model", seed, ni.observed)
        curve = _psnr_curve(traj, clean)
        for it, p, l in zip(traj.iterations, curve, traj.losses):
            curve_rows.append([kind, it, p, l])
        bi = int(np.argmax(curve))
        npsnr = psnr(ni.observed, clean)
        idx_early = int(np.argmin(np.abs(np.asarray(traj.iterations) - early)))
        out.pgm(f"out_{kind}_early.pgm", traj.outputs[idx_early])
        out.pgm(f"out_{kind}_final.pgm", traj.outputs[-1])
        rec = {
            "kind": kind,
            "seed": seed,
            "noisy_psnr": npsnr,
            "max_psnr": float(curve[bi]),
            "max_psnr_iter": traj.iterations[bi],
            "final_psnr": float(curve[-1]),
            "final_sse_over_initial": traj.losses[-1] / traj.losses[0],
        }
        per_seed.append(rec)
        aggregate[f"{kind}_max_minus_noisy_db"] = rec["max_psnr"] - npsnr
        aggregate[f"{kind}_final_sse_over_initial"] = rec["final_sse_over_initial"]
    out.csv("psnr_curves.csv", ["kind", "iteration", "psnr", "loss"], curve_rows)
    report = ExperimentReport(
        config.to_dict(), per_seed, aggregate, time.time() - t0, out.manifest
    )
    report.save(config.out_dir)
    return report


def exp_stride(config):
    """Decoder stride comparison: spectrum error maps and band energies."""
    t0 = time.time()
    out = Artifacts(config.out_dir)
    sig = config.signal
    corpus = _load_corpus(sig)
    target = corpus[sig["corpus_image"]]
    out.pgm("target.pgm", target)
    lo_lo, lo_hi = (int(v) for v in sig["low_band"])
    hi_lo, hi_hi = (int(v) for v in sig["high_band"])
    probe = int(sig["probe_iter"])
    roles = list(config.models)
    band_rows = []
    per_seed = []
    for role in roles:
        for si, seed in enumerate(config.seeds):
            traj = fit_role(config, role, seed, target)
            emap = spectrum_error_map(traj, target)
            if si == 0:
                out.heatmap(f"errmap_{role}.pgm", emap)
                emap_rows = [
                    [it] + list(row) for it, row in zip(traj.iterations, emap)
                ]
                out.csv(
                    f"errmap_{role}.csv",
                    ["iteration"] + [f"bin_{b}" for b in range(emap.shape[1])],
                    emap_rows,
                )
            if probe not in traj.iterations:
                raise RuntimeError(
                    f"probe iteration {probe} not recorded; adjust record_every"
                )
            half_lo = half_hi = None
            lo0 = hi0 = None
            for it, outp in zip(traj.iterations, traj.outputs):
                err = outp - target
                e_lo = band_energy(err, lo_lo, lo_hi)
                e_hi = band_energy(err, hi_lo, hi_hi)
                o_hi = band_energy(outp, hi_lo, hi_hi)
                band_rows.append([role, seed, it, e_lo, e_hi, o_hi])
                if it == traj.iterations[0]:
                    lo0, hi0 = e_lo, e_hi
                if half_lo is None and e_lo <= 0.5 * lo0:
                    half_lo = it
                if half_hi is None and e_hi <= 0.5 * hi0:
                    half_hi = it
            ip = traj.iterations.index(probe)
            rec = {
                "arch": role,
                "seed": seed,
                "out_high_band_at_probe": band_energy(traj.outputs[ip], hi_lo, hi_hi),
                "half_time_low_err": half_lo,
                "half_time_high_err": half_hi,
                "final_loss": traj.losses[-1],
            }
            per_seed.append(rec)
    out.csv(
        "bands.csv",
        ["arch", "seed", "iteration", "err_low_band", "err_high_band", "out_high_band"],
        band_rows,
    )
    aggregate = {"target_high_band": band_energy(target, hi_lo, hi_hi)}
    if set(roles) >= {"stride_4", "stride_32"}:
        wins = []
        for seed in config.seeds:
            h4 = next(
                r["out_high_band_at_probe"]
                for r in per_seed
                if r["arch"] == "stride_4" and r["seed"] == seed
            )
            h32 = next(
                r["out_high_band_at_probe"]
                for r in per_seed
                if r["arch"] == "stride_32" and r["seed"] == seed
            )
            wins.append(h32 < h4)
        aggregate["stride32_smoother_per_seed"] = wins
        aggregate["stride32_smoother_all"] = all(wins)
    aggregate["low_before_high_all"] = all(
        r["half_time_low_err"] is not None
        and (r["half_time_high_err"] is None or r["half_time_low_err"] <= r["half_time_high_err"])
        for r in per_seed
    )
    report = ExperimentReport(
        config.to_dict(), per_seed, aggregate, time.time() - t0, out.manifest
    )
    report.save(config.out_dir)
    return report


def exp_spectrum_traj(config):
    """Radial power spectra of the output at a fixed list of iterations."""
    t0 = time.time()
    out = Artifacts(config.out_dir)
    sig = config.signal
    iters = sorted(int(i) for i in sig["iterations"])
    if not iters or iters[0] < 1:
        raise ValueError("iterations must be positive")
    step = iters[0]
    for i in iters[1:]:
        step = math.gcd(step, i)
    corpus = _load_corpus(sig)
    target = corpus[sig["corpus_image"]]
    seed = config.seeds[0]
    traj = fit_role(
        config, "model", seed, target, steps=iters[-1], record_every=step
    )
    tgt_spec = radial_spectrum(target)
    rows = []
    mat = []
    for it in iters:
        s = radial_spectrum(traj.outputs[traj.iterations.index(it)])
        mat.append(s**2)
        for b, v in enumerate(s**2):
            rows.append([it, b, v])
    out.csv("spectra.csv", ["iteration", "bin", "power"], rows)
    out.csv(
        "target_spectrum.csv",
        ["bin", "power"],
        [[b, v] for b, v in enumerate(tgt_spec**2)],
    )
    out.heatmap("spectra.pgm", np.asarray(mat))

    # Band bookkeeping at the first listed iteration: how much of the
    # initial spectral error is gone, low band vs high band.
    nb = len(tgt_spec)
    cut = nb // 4
    hi_cap = max(target.shape)  # past the largest 2D radius, corners included
    first = traj.outputs[traj.iterations.index(iters[0])]
    init = traj.outputs[0]
    e0_lo = band_energy(init - target, 0, cut)
    e0_hi = band_energy(init - target, cut, hi_cap)
    e1_lo = band_energy(first - target, 0, cut)
    e1_hi = band_energy(first - target, cut, hi_cap)
    final = traj.outputs[traj.iterations.index(iters[-1])]
    gap = float(np.sqrt(((radial_spectrum(final) - tgt_spec) ** 2).sum()))
    final_sse = traj.losses[traj.iterations.index(iters[-1])]
    aggregate = {
        "low_band_reduction": 1.0 - e1_lo / e0_lo if e0_lo > 0 else None,
        "high_band_reduction": 1.0 - e1_hi / e0_hi if e0_hi > 0 else None,
        "final_spectrum_gap": gap,
        "final_sse": final_sse,
        "spectrum_gap_within_fit_tolerance": gap**2 <= target.size * final_sse + 1e-9,
    }
    per_seed = [{"seed": seed, "iterations": iters}]
    report = ExperimentReport(
        config.to_dict(), per_seed, aggregate, time.time() - t0, out.manifest
    )
    report.save(config.out_dir)
    return report


# ---------------------------------------------------------------------------
# non-fitting reports


def upsample_response_experiment(config):
    """Analytic vs measured upsampler frequency responses as a CSV report."""
    t0 = time.time()
    out = Artifacts(config.out_dir)
    sig = config.signal
    n = int(sig["n"])
    ks = [c / n for c in sig["cycles"]]
    rows = response_decay_report(
        modes=list(sig["modes"]), strides=[int(s) for s in sig["strides"]],
        k_grid=ks, n=n,
    )
    out.csv(
        "responses.csv",
        ["mode", "stride", "k", "analytic", "analytic_unnormalized", "measured", "abs_diff"],
        [
            [r["mode"], r["L"], r["k"], r["analytic"],
             r["analytic_unnormalized"], r["measured"], r["abs_diff"]]
            for r in rows
        ],
    )
    worst = max(r["abs_diff"] for r in rows)
    aggregate = {"worst_abs_diff": worst, "rows": len(rows)}
    report = ExperimentReport(
        config.to_dict(), [], aggregate, time.time() - t0, out.manifest
    )
    report.save(config.out_dir)
    return report


def _random_op_config(rng, i):
    """One randomized op configuration for the gradient sweep."""
    kind = i % 10
    if kind == 0:
        n = int(rng.integers(2, 12))
        x = Tensor(rng.standard_normal(n), requires_grad=True)
        return f"relu_n{n}", x, lambda t: tsum(relu(t))
    if kind == 1:
        n = int(rng.integers(2, 12))
        x = Tensor(rng.standard_normal(n), requires_grad=True)
        return f"leaky_relu_n{n}", x, lambda t: tsum(leaky_relu(t, 0.1))
    if kind == 2:
        n_in = int(rng.integers(2, 8))
        n_out = int(rng.integers(1, 6))
        w = Tensor(rng.standard_normal((n_out, n_in)), requires_grad=True)
        x = rng.standard_normal(n_in)
        b = Tensor(rng.standard_normal(n_out))
        return f"linear_w_{n_out}x{n_in}", w, lambda t: tsum(linear(Tensor(x), t, b))
    if kind == 3:
        n_in = int(rng.integers(2, 8))
        n_out = int(rng.integers(1, 6))
        x = Tensor(rng.standard_normal(n_in), requires_grad=True)
        w = Tensor(rng.standard_normal((n_out, n_in)))
        b = Tensor(rng.standard_normal(n_out))
        return f"linear_x_{n_out}x{n_in}", x, lambda t: tsum(linear(t, w, b))
    if kind == 4:
        c_in = int(rng.integers(1, 3))
        c_out = int(rng.integers(1, 3))
        k = int(rng.choice([1, 3, 5]))
        stride = int(rng.choice([1, 2]))
        n = int(rng.integers(k + stride, 16))
        x = Tensor(rng.standard_normal((c_in, n)), requires_grad=True)
        w = Tensor(rng.standard_normal((c_out, c_in, k)))
        b = Tensor(rng.standard_normal(c_out))
        pad = (k - 1) // 2
        return (
            f"conv1d_x_c{c_in}-{c_out}_k{k}_s{stride}",
            x,
            lambda t: tsum(conv1d(t, w, b, stride=stride, padding=pad)),
        )
    if kind == 5:
        c_in = int(rng.integers(1, 3))
        c_out = int(rng.integers(1, 3))
        k = int(rng.choice([1, 3]))
        stride = int(rng.choice([1, 2]))
        h = int(rng.integers(k + stride, 9))
        wd = int(rng.integers(k + stride, 9))
        x = rng.standard_normal((c_in, h, wd))
        w = Tensor(rng.standard_normal((c_out, c_in, k, k)), requires_grad=True)
        b = Tensor(rng.standard_normal(c_out))
        pad = (k - 1) // 2
        return (
            f"conv2d_w_c{c_in}-{c_out}_k{k}_s{stride}",
            w,
            lambda t: tsum(conv2d(Tensor(x), t, b, stride=stride, padding=pad)),
        )
    if kind == 6:
        c = int(rng.integers(1, 3))
        n = int(rng.integers(2, 10))
        stride = int(rng.choice([2, 3, 4]))
        x = Tensor(rng.standard_normal((c, n)), requires_grad=True)
        return (
            f"upsample1d_nearest_c{c}_n{n}_s{stride}",
            x,
            lambda t: tsum(upsample(t, "nearest", stride, spatial_dims=1)),
        )
    if kind == 7:
        c = int(rng.integers(1, 3))
        n = int(rng.integers(2, 10))
        stride = int(rng.choice([2, 3, 4]))
        x = Tensor(rng.standard_normal((c, n)), requires_grad=True)
        return (
            f"upsample1d_bilinear_c{c}_n{n}_s{stride}",
            x,
            lambda t: tsum(upsample(t, "bilinear", stride, spatial_dims=1)),
        )
    if kind == 8:
        c = int(rng.integers(1, 3))
        h = int(rng.integers(2, 6))
        wd = int(rng.integers(2, 6))
        stride = int(rng.choice([2, 3]))
        mode = str(rng.choice(["nearest", "bilinear"]))
        x = Tensor(rng.standard_normal((c, h, wd)), requires_grad=True)
        return (
            f"upsample2d_{mode}_c{c}_{h}x{wd}_s{stride}",
            x,
            lambda t: tsum(upsample(t, mode, stride, spatial_dims=2)),
        )
    n = int(rng.integers(2, 12))
    x = Tensor(rng.standard_normal(n), requires_grad=True)
    ref = Tensor(rng.standard_normal(n))
    return f"sse_n{n}", x, lambda t: sse_loss(t, ref)


def grad_check_sweep(n_configs=50, seed=0):
    """Central-difference audit of every differentiable op; returns rows."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(int(n_configs)):
        name, x, f = _random_op_config(rng, i)
        err = grad_check(f, x)
        rows.append({"config": name, "rel_err": float(err)})
    return rows


def grad_check_experiment(config):
    t0 = time.time()
    out = Artifacts(config.out_dir)
    sig = config.signal
    rows = grad_check_sweep(int(sig["configs"]), seed=config.seeds[0])
    out.csv(
        "grad_check.csv",
        ["config", "rel_err"],
        [[r["config"], r["rel_err"]] for r in rows],
    )
    worst = max(r["rel_err"] for r in rows)
    tol = float(sig["tolerance"])
    aggregate = {
        "worst_rel_err": worst,
        "tolerance": tol,
        "all_within_tolerance": worst <= tol,
    }
    report = ExperimentReport(
        config.to_dict(), rows, aggregate, time.time() - t0, out.manifest
    )
    report.save(config.out_dir)
    return report


RUNNERS = {
    "1d": exp_1d,
    "divergence": exp_divergence,
    "denoise": exp_denoise,
    "failure": exp_failure,
    "capacity": exp_capacity_sweep,
    "stride": exp_stride,
    "spectrum": exp_spectrum_traj,
    "upsample_response": upsample_response_experiment,
    "grad_check": grad_check_experiment,
}


def run_experiment(config):
    if config.out_dir is None:
        config.out_dir = os.path.join("runs", config.kind)
    return RUNNERS[config.kind](config)
