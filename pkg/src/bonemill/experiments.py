"""Batch experiments: calibration accuracy, centre localisation, and milling episodes.

Each runner returns an in-memory result and can write its files to a
directory. Seeds for individual evaluations or episodes are derived from the
config seed and the item index only, so every item is reproducible on its
own and batch results do not depend on how the work is split across
processes.
"""

from __future__ import annotations

import logging
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import records
from .calibration import EvaluationReport, joint_evaluation
from .config import ExperimentConfig
from .milling import FAILURE_KINDS, EpisodeOutcome, EpisodeTrace, run_episode
from .perception import NoiseConfig, PerceptionOracle, detect_landmarks, landmark_pixels
from .skull import center_pixel, generate, sample_point_cloud

logger = logging.getLogger(__name__)

_TAG_EVAL = 0xE1
_TAG_EPISODE = 0xE3
_TAG_CENTER = 0xE2


def derive_seed(seed: int, tag: int, index: int) -> int:
    """Independent 63-bit seed for item ``index`` of a batch."""
    state = np.random.SeedSequence([int(seed), tag, int(index)]).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1] & 0x7FFFFFFF) << 32)


def default_jobs() -> int:
    try:
        return max(len(os.sched_getaffinity(0)), 1)
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


def meta(cfg: ExperimentConfig, seed: int | None = None) -> dict:
    return {"config_hash": cfg.config_hash(), "seed": int(cfg.seed if seed is None else seed)}


# ---------------------------------------------------------------------------
# Experiment 1: joint detection/calibration accuracy
# ---------------------------------------------------------------------------


@dataclass
class Exp1Result:
    reports: list[EvaluationReport]
    detection_threshold_px: float = 10.0
    transform_threshold_mm: float = 1.0

    def _median(self, attr: str) -> float:
        vals = [getattr(r, attr) for r in self.reports]
        return float(np.median(vals)) if vals else 0.0

    @property
    def median_rmse_2d_px(self) -> float:
        return self._median("rmse_2d_px")

    @property
    def median_rmse_3d_mm(self) -> float:
        return self._median("rmse_3d_mm")

    @property
    def median_central_rmse_mm(self) -> float:
        return self._median("central_rmse_mm")

    @property
    def passed(self) -> bool:
        return (
            self.median_rmse_2d_px <= self.detection_threshold_px
            and self.median_rmse_3d_mm <= self.transform_threshold_mm
        )

    def summary(self) -> dict:
        return {
            "evaluations": len(self.reports),
            "median_rmse_2d_px": self.median_rmse_2d_px,
            "median_rmse_3d_mm": self.median_rmse_3d_mm,
            "median_central_rmse_mm": self.median_central_rmse_mm,
            "pass_fraction": float(np.mean([r.passed for r in self.reports])) if self.reports else 1.0,
            "detection_threshold_px": self.detection_threshold_px,
            "transform_threshold_mm": self.transform_threshold_mm,
            "passed": self.passed,
        }


def run_exp1(cfg: ExperimentConfig, noise: NoiseConfig | None = None) -> Exp1Result:
    noise = cfg.noise_config() if noise is None else noise
    scene = cfg.scene_transform()
    reports = []
    for i in range(cfg.exp1.evaluations):
        s = derive_seed(cfg.seed, _TAG_EVAL, i)
        oracle = PerceptionOracle(cfg.intrinsics, noise, scene, s)
        reports.append(
            joint_evaluation(
                cfg.exp1.validation_points, s, cfg.intrinsics, oracle,
                setpoints=np.array(cfg.setpoints), central_radius=cfg.exp1.central_radius,
            )
        )
    return Exp1Result(reports)


def write_exp1(result: Exp1Result, cfg: ExperimentConfig, out: Path) -> None:
    m = meta(cfg)
    header = ["evaluation", "eval_seed", "rmse_2d_px", "rmse_3d_mm", "central_rmse_mm", "n_central",
              "calibration_rmse_mm", "passed"]
    rows = (
        [i, r.seed, r.rmse_2d_px, r.rmse_3d_mm, r.central_rmse_mm, int(r.central.sum()), r.calibration.rmse_mm, r.passed]
        for i, r in enumerate(result.reports)
    )
    records.write_csv(out / "exp1_evaluations.csv", header, rows, m)
    point_header = ["evaluation", "index", "gt_x", "gt_y", "gt_z", "rec_x", "rec_y", "rec_z", "residual_mm",
                    "image_radius", "pixel_error_px", "central", "pass"]
    point_rows = (
        [e, i, *r.points[i], *r.transformed[i], r.residual_mm[i], r.image_radius[i], r.pixel_error_px[i].max(),
         bool(r.central[i]), bool(r.point_pass[i])]
        for e, r in enumerate(result.reports)
        for i in range(len(r.points))
    )
    records.write_csv(out / "exp1_points.csv", point_header, point_rows, m)
    records.write_json(out / "exp1_summary.json", {**result.summary(), **m})


# ---------------------------------------------------------------------------
# Experiment 2: trajectory-centre localisation
# ---------------------------------------------------------------------------


@dataclass
class Exp2Result:
    bregma_error_px: np.ndarray
    lambda_error_px: np.ndarray
    center_error_px: np.ndarray
    l: float
    threshold_px: float = 10.0

    @staticmethod
    def _rms(v) -> float:
        return float(np.sqrt(np.mean(np.asarray(v) ** 2))) if len(v) else 0.0

    @property
    def center_rmse_px(self) -> float:
        return self._rms(self.center_error_px)

    @property
    def bregma_rmse_px(self) -> float:
        return self._rms(self.bregma_error_px)

    @property
    def lambda_rmse_px(self) -> float:
        return self._rms(self.lambda_error_px)

    @property
    def passed(self) -> bool:
        return self.center_rmse_px <= self.threshold_px

    def summary(self) -> dict:
        return {
            "trials": int(len(self.center_error_px)),
            "l": self.l,
            "bregma_rmse_px": self.bregma_rmse_px,
            "lambda_rmse_px": self.lambda_rmse_px,
            "center_rmse_px": self.center_rmse_px,
            "threshold_px": self.threshold_px,
            "passed": self.passed,
        }


def run_exp2(cfg: ExperimentConfig, noise: NoiseConfig | None = None) -> Exp2Result:
    """Monte-Carlo Euclidean pixel error of bregma, lambda, and the weighted centre."""
    noise = cfg.noise_config() if noise is None else noise
    k = cfg.intrinsics
    l = cfg.trajectory.l
    skull = generate(cfg.seed, cfg.skull)
    b_true, l_true = landmark_pixels(skull, k)
    c_true = center_pixel(b_true, l_true, l)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), _TAG_CENTER]))
    n = cfg.exp2.trials
    eb, el, ec = np.empty(n), np.empty(n), np.empty(n)
    for i in range(n):
        b, lam = detect_landmarks(skull, k, noise, rng)
        eb[i] = np.hypot(*(np.asarray(b) - b_true))
        el[i] = np.hypot(*(np.asarray(lam) - l_true))
        ec[i] = np.hypot(*(center_pixel(b, lam, l) - c_true))
    return Exp2Result(eb, el, ec, l)


def write_exp2(result: Exp2Result, cfg: ExperimentConfig, out: Path) -> None:
    m = meta(cfg)
    rows = (
        [i, result.bregma_error_px[i], result.lambda_error_px[i], result.center_error_px[i]]
        for i in range(len(result.center_error_px))
    )
    records.write_csv(out / "exp2_trials.csv", ["trial", "bregma_error_px", "lambda_error_px", "center_error_px"], rows, m)
    records.write_json(out / "exp2_summary.json", {**result.summary(), **m})


# ---------------------------------------------------------------------------
# Milling episodes
# ---------------------------------------------------------------------------


def planner_surface(cfg: ExperimentConfig, skull, seed: int):
    if cfg.surface.kind == "model":
        return skull
    return sample_point_cloud(skull, cfg.surface.density, cfg.surface.noise_sigma, seed)


def episode(
    cfg: ExperimentConfig, seed: int, noise: NoiseConfig | None = None, record_trace: bool = True
) -> tuple[EpisodeOutcome, EpisodeTrace]:
    """One episode on the skull generated from ``seed``."""
    noise = cfg.noise_config() if noise is None else noise
    skull = generate(seed, cfg.skull)
    oracle = PerceptionOracle(cfg.intrinsics, noise, cfg.scene_transform(), seed)
    return run_episode(skull, cfg.episode_settings(), oracle, planner_surface(cfg, skull, seed), record_trace)


def exp3_noise(cfg: ExperimentConfig, mape_pct: float) -> NoiseConfig:
    base = cfg.noise_config()
    if cfg.exp3.completion_only:
        base = replace(base, keypoint_sigma_px=0.0, landmark_sigma_px=(0.0, 0.0))
    return replace(base, completion_mape=mape_pct / 100.0, fault_rate=cfg.exp3.fault_rate)


@dataclass
class EpisodeRecord:
    level: int
    mape_pct: float
    episode: int
    seed: int
    outcome: EpisodeOutcome

    def to_dict(self) -> dict:
        return {"level": self.level, "mape_pct": self.mape_pct, "episode": self.episode,
                "episode_seed": self.seed, **self.outcome.to_dict()}


def _episode_job(args) -> EpisodeOutcome:
    cfg, seed, noise = args
    outcome, _ = episode(cfg, seed, noise, record_trace=False)
    return outcome


@dataclass
class Exp3Result:
    records: list[EpisodeRecord] = field(default_factory=list)

    def levels(self) -> list[float]:
        return sorted({r.mape_pct for r in self.records})

    def aggregate(self) -> list[dict]:
        rows = []
        for mape in self.levels():
            recs = [r for r in self.records if r.mape_pct == mape]
            ok = [r.outcome.milling_time_s for r in recs if r.outcome.success]
            kinds = Counter(r.outcome.failure_kind for r in recs)
            rows.append({
                "mape_pct": mape,
                "episodes": len(recs),
                "success_rate": len(ok) / len(recs),
                "milling_time_mean_s": float(np.mean(ok)) if ok else float("nan"),
                "milling_time_sd_s": float(np.std(ok, ddof=1)) if len(ok) > 1 else float("nan"),
                **{f"n_{k}": kinds.get(k, 0) for k in FAILURE_KINDS},
            })
        return rows


def run_exp3(cfg: ExperimentConfig, jobs: int = 1, levels_pct=None, episodes: int | None = None) -> Exp3Result:
    """``episodes`` seeded episodes at every completion-noise level.

    Episode ``e`` uses the same skull, calibration draws and fault draw at
    every level; only the completion noise scale changes.
    """
    levels = cfg.exp3.mape_levels_pct if levels_pct is None else tuple(levels_pct)
    n = cfg.episodes if episodes is None else episodes
    tasks, keys = [], []
    for li, mape in enumerate(levels):
        noise = exp3_noise(cfg, mape)
        for e in range(n):
            s = derive_seed(cfg.seed, _TAG_EPISODE, e)
            tasks.append((cfg, s, noise))
            keys.append((li, float(mape), e, s))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_episode_job, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        outcomes = [_episode_job(t) for t in tasks]
    return Exp3Result([EpisodeRecord(li, mape, e, s, o) for (li, mape, e, s), o in zip(keys, outcomes)])


def write_exp3(result: Exp3Result, cfg: ExperimentConfig, out: Path) -> None:
    m = meta(cfg)
    with open(out / "exp3_episodes.jsonl", "w", encoding="utf-8") as fh:
        for rec in result.records:
            fh.write(records.dumps({**rec.to_dict(), **m}) + "\n")
    table = result.aggregate()
    header = ["mape_pct", "episodes", "success_rate", "milling_time_mean_s", "milling_time_sd_s",
              *(f"n_{k}" for k in FAILURE_KINDS)]
    records.write_csv(out / "exp3_summary.csv", header, ([row[h] for h in header] for row in table), m)
    records.write_json(out / "exp3_summary.json", {"levels": table, **m})


# ---------------------------------------------------------------------------
# Single episode
# ---------------------------------------------------------------------------


def run_single(cfg: ExperimentConfig) -> tuple[EpisodeOutcome, EpisodeTrace]:
    return episode(cfg, cfg.seed)


def write_run(outcome: EpisodeOutcome, trace: EpisodeTrace, cfg: ExperimentConfig, out: Path,
              dump_trajectory: bool = False) -> None:
    m = meta(cfg)
    trace.write_csv(out / "run_trace.csv", m)
    records.write_json(out / "run_outcome.json", {**outcome.to_dict(), **m})
    if dump_trajectory and trace.initial_trajectory is not None:
        traj = trace.initial_trajectory
        pts = traj.current_points
        header = ["i", "x", "y", "z", "fit_x", "fit_y", "fit_z", "normal_x", "normal_y", "normal_z"]
        rows = ([i, *pts[i], *traj.fit_points[i], *traj.normals[i]] for i in range(traj.n))
        records.write_csv(out / "run_trajectory.csv", header, rows, m)
