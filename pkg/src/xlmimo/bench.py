"""Seeded Monte-Carlo experiments: scene -> pilots -> estimate -> NMSE records.

Every random draw of trial ``t`` comes from ``default_rng([seed, t, stream, ...])``
so any single trial can be replayed in isolation.  Scenes depend only on
``(seed, t, L)``, combiners on ``(seed, t, P)`` and noise on the SNR point as
well, so sweeps over one axis reuse the other draws.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baselines import GreedyConfig, atom_budget, somp_estimate, twolayer_params
from .channel import ArrayGeometry, OfdmGrid, SceneConfig, assemble_channel, generate_scene
from .mrf import MrfParams, MrfPrior
from .transform import (MeasurementOperator, build_combiner, build_dictionary, svd_preprocess,
                        to_angular_delay, vec)
from .uamp import DivergenceError, UampConfig, run

log = logging.getLogger(__name__)

EXPERIMENTS = ("convergence", "snr", "pilots", "paths", "trajectory")
ALGORITHMS = ("uamp-sbl-mrf", "uamp-sbl", "somp")

# rng stream labels
_SCENE, _COMBINER, _NOISE = 0, 1, 2


class ConfigError(ValueError):
    pass


def nmse(H_hat, H) -> float:
    """Squared Frobenius error over the squared Frobenius norm of ``H``."""
    H = np.asarray(H)
    den = np.sum(np.abs(H) ** 2)
    if den == 0:
        raise ValueError("NMSE undefined for an all-zero channel")
    return float(np.sum(np.abs(np.asarray(H_hat) - H) ** 2) / den)


def snr_db(W, H, noise) -> float:
    """Receive-side SNR ``10 log10(||W H||^2 / ||N||^2)``; ``inf`` for zero noise."""
    sig = np.sum(np.abs(np.asarray(W) @ np.asarray(H)) ** 2)
    pn = np.sum(np.abs(np.asarray(noise)) ** 2)
    if pn == 0:
        return float("inf")
    return float(10 * np.log10(sig / pn))


def noise_for_snr(WH, target_db: float, rng: np.random.Generator) -> np.ndarray:
    """Complex Gaussian noise scaled so that :func:`snr_db` returns ``target_db``."""
    N = rng.standard_normal(WH.shape) + 1j * rng.standard_normal(WH.shape)
    sig = np.linalg.norm(WH)
    if sig == 0:
        return N * 0.0
    return N * (sig / np.linalg.norm(N) / 10 ** (target_db / 20))


@dataclass(frozen=True)
class ExperimentConfig:
    # array and waveform
    n_antennas: int = 64
    n_rf: int = 4
    n_slots: int = 8
    carrier_hz: float = 30e9
    n_subcarriers: int = 16
    bandwidth_hz: float = 1.6e9
    n_angles: int = 64
    n_delays: int = 16
    # scene
    n_paths: int = 4
    angle_min: float = -np.pi / 2
    angle_max: float = np.pi / 2
    distance_min: float = 10.0
    distance_max: float = 50.0
    vr_fraction_min: float = 0.0
    vr_fraction_max: float = 1.0
    los: bool = True
    diffraction_prob: float = 0.25
    # sweeps
    snr_db: tuple = (0.0, 5.0, 10.0, 15.0, 20.0)
    convergence_snr_db: float = 10.0
    sweep_snr_db: float = 10.0
    trajectory_snr_db: float = 5.0
    pilot_list: tuple = (6, 8, 10, 12, 16)
    path_list: tuple = (2, 4, 6)
    n_trials: int = 50
    seed: int = 0
    algorithms: tuple = ALGORITHMS
    # estimator
    max_iters: int = 20
    tol: float = 1e-6
    damping: float = 1.0
    zhat_rule: str = "posterior"
    alpha: float = MrfParams.alpha
    eta: float = MrfParams.eta
    a: float = MrfParams.a
    b: float = MrfParams.b
    a_bar: float = MrfParams.a_bar
    b_bar: float = MrfParams.b_bar
    sweeps: int = 1
    # greedy budget: explicit atom count, else derived from somp_budget_paths (or L)
    somp_atoms: int = 0
    somp_budget_paths: int = 0
    somp_residual_tol: float = 1e-6
    # harness
    experiment: str = "snr"
    out: str = "results"
    workers: int = 1
    record_timing: bool = True
    max_divergence_frac: float = 0.1

    def __post_init__(self):
        counts = ("n_antennas", "n_rf", "n_slots", "n_subcarriers", "n_angles", "n_delays",
                  "n_trials", "max_iters", "workers", "sweeps")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive count")
        if self.n_paths < 0:
            raise ConfigError("n_paths must be non-negative")
        if not self.snr_db:
            raise ConfigError("snr_db list is empty")
        if not self.pilot_list or min(self.pilot_list) < 1:
            raise ConfigError("pilot_list must hold positive slot counts")
        if not self.path_list or min(self.path_list) < 0:
            raise ConfigError("path_list must hold non-negative path counts")
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad or not self.algorithms:
            raise ConfigError(f"unknown algorithms {bad}")
        if self.n_angles < self.n_antennas or self.n_delays < self.n_subcarriers:
            raise ConfigError("dictionary grids must not undersample the array or band")
        if self.carrier_hz <= 0 or self.bandwidth_hz <= 0:
            raise ConfigError("carrier and bandwidth must be positive")
        try:
            self.mrf_params()
            self.uamp_config()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    @property
    def m_r(self) -> int:
        return self.n_slots * self.n_rf

    def mrf_params(self) -> MrfParams:
        return MrfParams(self.alpha, self.eta, self.a, self.b, self.a_bar, self.b_bar, self.sweeps)

    def uamp_config(self) -> UampConfig:
        return UampConfig(max_iters=self.max_iters, tol=self.tol, damping=self.damping,
                          zhat_rule=self.zhat_rule)

    def scene_config(self, n_paths: int) -> SceneConfig:
        return SceneConfig(n_paths, (self.angle_min, self.angle_max),
                           (self.distance_min, self.distance_max),
                           (self.vr_fraction_min, self.vr_fraction_max),
                           self.los, self.diffraction_prob)

    def greedy_config(self, n_paths: int) -> GreedyConfig:
        if self.somp_atoms > 0:
            budget = self.somp_atoms
        else:
            budget = atom_budget(self.somp_budget_paths or n_paths, self.n_angles * self.n_delays)
        return GreedyConfig(budget, self.somp_residual_tol)

    # plain-text form

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ExperimentConfig":
        values = parse_key_values(text)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kw[key] = _coerce(known[key], raw)
        return cls(**kw)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def parse_key_values(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"line {n}: empty key")
        out[k] = v
    return out


def _coerce(f: dataclasses.Field, raw):
    default = f.default
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(default, tuple) else raw
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if f.name == "algorithms":
                return tuple(items)
            conv = int if f.name in ("pilot_list", "path_list") else float
            return tuple(conv(s) for s in items)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {f.name}") from None


@dataclass(frozen=True)
class ResultRecord:
    experiment: str
    algorithm: str
    trial: int
    seed: int
    snr_db: float
    P: int
    L: int
    iteration: int
    nmse_db: float
    wall_ms: float
    status: str = "ok"


RECORD_FIELDS = [f.name for f in fields(ResultRecord)]


@dataclass
class TrialSetup:
    H: np.ndarray
    op: MeasurementOperator
    y: np.ndarray
    r: np.ndarray
    noise: np.ndarray
    paths: list


def make_trial(cfg: ExperimentConfig, trial: int, snr: float, P: int, L: int) -> TrialSetup:
    """Scene, combiner and noisy pilots for one Monte-Carlo trial."""
    geo = ArrayGeometry(cfg.n_antennas, cfg.carrier_hz)
    grid = OfdmGrid(cfg.n_subcarriers, cfg.bandwidth_hz, cfg.carrier_hz)
    scene_rng = np.random.default_rng([cfg.seed, trial, _SCENE, L])
    paths = generate_scene(cfg.scene_config(L), geo, scene_rng)
    H = np.array(assemble_channel(paths, geo, grid).entries)
    W = build_combiner(P * cfg.n_rf, cfg.n_antennas,
                       np.random.default_rng([cfg.seed, trial, _COMBINER, P]), cfg.n_rf)
    d = build_dictionary(cfg.n_antennas, cfg.n_angles, cfg.n_subcarriers, cfg.n_delays)
    op = svd_preprocess(MeasurementOperator.from_parts(W, d))
    WH = W @ H
    # SNR in millibels keys the noise stream
    noise_rng = np.random.default_rng([cfg.seed, trial, _NOISE, P, L, int(round(snr * 100)) + 2**20])
    N = noise_for_snr(WH, snr, noise_rng)
    Y = WH + N
    return TrialSetup(H, op, Y, op.unitary_transform(vec(Y)), N, paths)


def _to_db(ratio: float) -> float:
    return float(10 * np.log10(max(ratio, 1e-30)))


@dataclass
class Estimate:
    H_hat: np.ndarray
    x_hat: np.ndarray
    iterations: int
    trace: list = field(default_factory=list)  # (iteration, nmse, wall_s)


def estimate(alg: str, setup: TrialSetup, cfg: ExperimentConfig, L: int,
             H_true=None) -> Estimate:
    """Run one algorithm on a prepared trial.

    The per-iteration trace is filled only for the iterative estimators and
    only when ``H_true`` is given.  SOMP reports zero iterations.
    """
    op = setup.op
    if alg == "somp":
        g = somp_estimate(setup.y, op, cfg.greedy_config(L))
        return Estimate(op.to_channel(g.x_hat), g.x_hat, 0)
    params = cfg.mrf_params()
    if alg == "uamp-sbl":
        params = twolayer_params(params)
    res = run(setup.r, op, MrfPrior(params), cfg.uamp_config(), H_true=H_true)
    trace = [(t["iteration"], t["nmse"], t["wall_s"]) for t in res.trace] if H_true is not None else []
    return Estimate(res.H_hat, res.x_hat, res.iterations, trace)


def run_trial(cfg: ExperimentConfig, trial: int, points: list) -> list:
    """All records of one trial over the given ``(snr, P, L)`` points."""
    recs = []
    per_iter = cfg.experiment == "convergence"
    for snr, P, L in points:
        setup = make_trial(cfg, trial, snr, P, L)
        for alg in cfg.algorithms:
            base = dict(experiment=cfg.experiment, algorithm=alg, trial=trial, seed=cfg.seed,
                        snr_db=float(snr), P=int(P), L=int(L))
            t0 = time.perf_counter()
            try:
                est = estimate(alg, setup, cfg, L, setup.H if per_iter else None)
            except (DivergenceError, FloatingPointError, np.linalg.LinAlgError) as e:
                log.warning("trial %d %s diverged: %s", trial, alg, e)
                # a diverged run reports the zero estimate (0 dB) and is flagged
                recs.append(ResultRecord(**base, iteration=getattr(e, "iteration", 0),
                                         nmse_db=0.0, wall_ms=0.0, status="diverged"))
                continue
            wall = (time.perf_counter() - t0) * 1e3 if cfg.record_timing else 0.0
            if est.trace:
                for it, ratio, ws in est.trace:
                    recs.append(ResultRecord(**base, iteration=it, nmse_db=_to_db(ratio),
                                             wall_ms=ws * 1e3 if cfg.record_timing else 0.0))
            else:
                recs.append(ResultRecord(**base, iteration=est.iterations,
                                         nmse_db=_to_db(nmse(est.H_hat, setup.H)), wall_ms=wall))
    return recs


def experiment_points(cfg: ExperimentConfig) -> list:
    """``(snr_db, P, L)`` points swept by the configured experiment."""
    e = cfg.experiment
    if e == "convergence":
        return [(cfg.convergence_snr_db, cfg.n_slots, cfg.n_paths)]
    if e == "snr":
        return [(s, cfg.n_slots, cfg.n_paths) for s in cfg.snr_db]
    if e == "pilots":
        return [(cfg.sweep_snr_db, P, cfg.n_paths) for P in cfg.pilot_list]
    if e == "paths":
        return [(cfg.sweep_snr_db, cfg.n_slots, L) for L in cfg.path_list]
    return [(cfg.trajectory_snr_db, cfg.n_slots, cfg.n_paths)]


def _trial_job(args):
    cfg, trial, points = args
    return run_trial(cfg, trial, points)


def run_experiment(cfg: ExperimentConfig):
    """Yield :class:`ResultRecord` in trial order, then point, then algorithm."""
    points = experiment_points(cfg)
    jobs = [(cfg, t, points) for t in range(cfg.n_trials)]
    if cfg.workers == 1:
        for job in jobs:
            yield from _trial_job(job)
        return
    with ProcessPoolExecutor(max_workers=min(cfg.workers, os.cpu_count() or 1)) as pool:
        # map preserves submission order, so output is order-stable
        for recs in pool.map(_trial_job, jobs):
            yield from recs


def format_record(rec: ResultRecord) -> list:
    return [rec.experiment, rec.algorithm, rec.trial, rec.seed, f"{rec.snr_db:g}", rec.P, rec.L,
            rec.iteration, f"{rec.nmse_db:.6f}", f"{rec.wall_ms:.3f}", rec.status]


def write_records(records, stream) -> int:
    """CSV with a header row; returns the number of diverged records."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    diverged = 0
    for rec in records:
        w.writerow(format_record(rec))
        diverged += rec.status != "ok"
        stream.flush()
    return diverged


def read_records(stream) -> list:
    out = []
    for row in csv.DictReader(stream):
        out.append(ResultRecord(row["experiment"], row["algorithm"], int(row["trial"]),
                                int(row["seed"]), float(row["snr_db"]), int(row["P"]),
                                int(row["L"]), int(row["iteration"]), float(row["nmse_db"]),
                                float(row["wall_ms"]), row["status"]))
    return out


def median_curve(records, algorithm: str, key: str) -> dict:
    """Median ``nmse_db`` per value of ``key`` (final iteration of each trial)."""
    last = {}
    for r in records:
        if r.algorithm != algorithm:
            continue
        k = (getattr(r, key), r.trial)
        if k not in last or r.iteration >= last[k].iteration:
            last[k] = r
    groups = {}
    for (v, _), r in last.items():
        groups.setdefault(v, []).append(r.nmse_db)
    return {v: float(np.median(x)) for v, x in sorted(groups.items())}


# trajectory dumps

def write_grid(path: Path, grid: np.ndarray, meaning: str):
    grid = np.asarray(grid, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"# {grid.shape[0]} {grid.shape[1]}\n# {meaning}\n")
        np.savetxt(fh, grid, delimiter="\t", fmt="%.9e")


def read_grid(path) -> np.ndarray:
    return np.loadtxt(path, delimiter="\t", comments="#", ndmin=2)


def dump_trajectory(cfg: ExperimentConfig, out_dir, trial: int = 0) -> dict:
    """Magnitude grids of the true and estimated angular-delay and spatial-frequency channels."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    snr, P, L = experiment_points(replace(cfg, experiment="trajectory"))[0]
    setup = make_trial(cfg, trial, snr, P, L)
    d = setup.op.dictionary
    written = {}
    if d.is_square:
        X = to_angular_delay(setup.H, d)
    else:
        # least-squares coefficients of the true channel on the oversampled grid
        X = np.linalg.pinv(d.angular) @ setup.H @ np.linalg.pinv(d.delay.conj().T)
    written["x_true"] = out_dir / "x_true.tsv"
    write_grid(written["x_true"], np.abs(X), "|X| true angular-delay magnitude (rows angle, cols delay)")
    written["h_true"] = out_dir / "h_true.tsv"
    write_grid(written["h_true"], np.abs(setup.H), "|H| true spatial-frequency magnitude (rows antenna, cols subcarrier)")
    for alg in cfg.algorithms:
        est = estimate(alg, setup, cfg, L)
        H_hat, x_hat = est.H_hat, est.x_hat
        written[f"x_{alg}"] = out_dir / f"x_hat_{alg}.tsv"
        write_grid(written[f"x_{alg}"], np.abs(x_hat), f"|X| estimated by {alg} (rows angle, cols delay)")
        written[f"h_{alg}"] = out_dir / f"h_hat_{alg}.tsv"
        write_grid(written[f"h_{alg}"], np.abs(H_hat), f"|H| estimated by {alg} (rows antenna, cols subcarrier)")
    return written
