"""Batch pipeline: world -> aggregate -> anonymize -> train -> generate ->
evaluate -> attack -> utility, with resumable stages and deterministic output.

Every stage writes its outputs plus a state file recording (config hash,
seed, stage version); a stage whose state matches and whose outputs exist is
skipped on rerun. All report files embed the same triple, so two runs with
equal config and seed are byte-identical (training wall-clock logs live under
logs/ and are excluded from that guarantee). A lock file keeps a pipeline
directory single-writer.
"""

from __future__ import annotations

import json
import math
import os
from contextlib import contextmanager
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from ..anonymize import kama_pipeline
from ..attacks import (
    FeatureSpace,
    TulConfig,
    fm_train,
    fm_predict_batch,
    auc,
    hlc_report,
    recommendation_examples,
    tul_train_eval,
)
from ..core.dataset import matrices_by_user
from ..core.grid import GridSystem
from ..core.io import load_matrix, read_dataset, save_matrix, write_dataset
from ..errors import ConfigInvalidError, RuntimeFailure
from ..generator import build_generator_params
from ..mechanisms import apply_mechanism, generate_tka
from ..metrics import (
    clipped_histogram,
    jsd,
    jump_length,
    location_switches,
    mean_location_entropy,
    mean_ssim,
    od_matrix,
    radius_of_gyration,
    tortuosity,
    user_entropies,
    user_sequences,
    wasserstein2,
)
from ..nn import ModelParams
from ..training import evaluate_checkpoint, split_dataset, train
from .config import PipelineConfig
from .world import generate_world

STAGE_VERSION = "1"
STAGES = ("world", "aggregate", "kama", "train", "generate", "evaluate", "attack", "utility")
PNG_METADATA = {"Software": "trajsynth"}


class PipelineError(RuntimeFailure):
    """A stage failed; the message names the stage."""


@contextmanager
def pipeline_lock(out_dir: Path):
    lock = out_dir / ".lock"
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PipelineError(f"pipeline directory {out_dir} is locked by another writer")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


class PipelineRun:
    """One pipeline invocation over an output directory."""

    def __init__(self, config: PipelineConfig, out_dir, seed: int | None = None):
        self.config = config if seed is None else _with_seed(config, seed)
        self.out = Path(out_dir)
        self.hash = self.config.hash()
        self.seed = self.config.seed
        self.grid = self.config.world_spec().grid() if not self.config.input_csv else None

    # --- bookkeeping -----------------------------------------------------
    def path(self, *parts) -> Path:
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def stamp(self) -> str:
        return f"config_hash={self.hash} seed={self.seed} stage_version={STAGE_VERSION}"

    def _state_path(self, stage: str) -> Path:
        return self.path("stage_state", f"{stage}.json")

    def _fresh(self, stage: str, outputs: list[Path]) -> bool:
        state = self._state_path(stage)
        if not state.exists():
            return False
        try:
            recorded = json.loads(state.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return False
        matches = (
            recorded.get("config_hash") == self.hash
            and recorded.get("seed") == self.seed
            and recorded.get("stage_version") == STAGE_VERSION
        )
        return matches and all(p.exists() for p in outputs)

    def _record(self, stage: str, outputs: list[Path]) -> None:
        payload = {
            "config_hash": self.hash,
            "seed": self.seed,
            "stage_version": STAGE_VERSION,
            "outputs": sorted(str(p.relative_to(self.out)) for p in outputs),
        }
        self._state_path(stage).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    def _write_report(self, rel: str, df: pd.DataFrame) -> Path:
        path = self.path("reports", rel)
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(f"# {self.stamp()}\n")
            df.to_csv(fh, index=False)
        return path

    @staticmethod
    def _read_report(path: Path) -> pd.DataFrame:
        return pd.read_csv(path, comment="#")

    # --- stages ----------------------------------------------------------
    def run(self, stages=STAGES) -> dict:
        with pipeline_lock(self.out):
            results = {}
            for stage in stages:
                runner = getattr(self, f"stage_{stage}")
                try:
                    results[stage] = runner()
                except RuntimeFailure:
                    raise
                except Exception as exc:
                    raise PipelineError(f"stage {stage!r} failed: {exc}") from exc
            return results

    def stage_world(self):
        raw_path = self.path("data", "raw.csv")
        if self._fresh("world", [raw_path]):
            return raw_path
        if self.config.input_csv:
            df = read_dataset(self.config.input_csv)
            if self.grid is None:
                self.grid = GridSystem(
                    lat_min=self.config.lat_min, lat_max=self.config.lat_max,
                    lon_min=self.config.lon_min, lon_max=self.config.lon_max,
                    cells_per_side=self.config.grid_cells, hours_per_day=self.config.grid_hours,
                )
        else:
            df = generate_world(self.config.world_spec(), seed=self.seed)
        write_dataset(df, raw_path, header_comment=self.stamp())
        self._record("world", [raw_path])
        return raw_path

    def _grid(self) -> GridSystem:
        if self.grid is None:
            self.grid = GridSystem(
                lat_min=self.config.lat_min, lat_max=self.config.lat_max,
                lon_min=self.config.lon_min, lon_max=self.config.lon_max,
                cells_per_side=self.config.grid_cells, hours_per_day=self.config.grid_hours,
            )
        return self.grid

    def _raw(self) -> pd.DataFrame:
        return read_dataset(self.path("data", "raw.csv"))

    def stage_aggregate(self):
        raw = self._raw()
        users = sorted(raw["user_id"].unique())
        out_paths = [self.path("matrices", "user", f"{u}.stmm") for u in users]
        if self._fresh("aggregate", out_paths):
            return out_paths
        matrices = matrices_by_user(raw, self._grid())
        for user, path in zip(users, out_paths):
            save_matrix(matrices[user], self._grid(), path, extra_meta={
                "config_hash": self.hash, "seed": self.seed, "stage_version": STAGE_VERSION,
            })
        self._record("aggregate", out_paths)
        return out_paths

    def _user_matrices(self) -> dict:
        out = {}
        for path in sorted(self.path("matrices", "user").glob("*.stmm")):
            matrix, _, _ = load_matrix(path)
            out[matrix.user_id] = matrix
        return out

    def stage_kama(self):
        raw = self._raw()
        users = sorted(raw["user_id"].unique())
        matrix_paths = [self.path("matrices", "anonymized", f"{u}.stmm") for u in users]
        manifest_path = self.path("reports", "cluster_manifest.csv")
        outputs = matrix_paths + [manifest_path]
        if self._fresh("kama", outputs):
            return outputs
        n_clusters = self.config.n_clusters or None
        result = kama_pipeline(
            raw, self._grid(), k=self.config.k, n_clusters=n_clusters, seed=self.seed
        )
        for user, path in zip(users, matrix_paths):
            matrix = result[user]
            save_matrix(matrix, self._grid(), path, extra_meta={
                "config_hash": self.hash, "seed": self.seed,
                "stage_version": STAGE_VERSION, "assigned_user": user,
            })
        manifest = pd.DataFrame(result.manifest_rows(), columns=["user_id", "cluster_id", "cluster_size"])
        self._write_report("cluster_manifest.csv", manifest)
        self._record("kama", outputs)
        return outputs

    def _anonymized_matrices(self) -> dict:
        out = {}
        for path in sorted(self.path("matrices", "anonymized").glob("*.stmm")):
            matrix, _, sidecar = load_matrix(path)
            out[sidecar["assigned_user"]] = matrix
        return out

    def stage_train(self):
        gen_path = self.path("checkpoints", "generator.bin")
        crt_path = self.path("checkpoints", "critic.bin")
        log_path = self.path("logs", "trainlog.csv")
        outputs = [gen_path, crt_path]
        if self._fresh("train", outputs):
            return outputs
        raw = self._raw()
        train_df, _ = split_dataset(raw, test_fraction=self.config.test_fraction, seed=self.seed)
        config = self.config.train_config()
        gen, crt, log = train(train_df, self._user_matrices(), self._grid(), config)
        hyper = {"n_heads": config.n_heads, "encoding_dim": config.encoding_dim,
                 "config_hash": self.hash, "seed": self.seed, "stage_version": STAGE_VERSION}
        gen.save(gen_path, hyperparameters=hyper)
        crt.save(crt_path, hyperparameters=hyper)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log.frame().to_csv(log_path, index=False)
        self._record("train", outputs)
        return outputs

    def stage_generate(self):
        paths = {m: self.path("data", f"{m}.csv") for m in self.config.mechanisms}
        paths["synth"] = self.path("data", "synth.csv")
        outputs = list(paths.values())
        if self._fresh("generate", outputs):
            return outputs
        raw = self._raw()
        grid = self._grid()
        anonymized = self._anonymized_matrices()
        gen_params, _ = ModelParams.load(self.path("checkpoints", "generator.bin"))
        synth = evaluate_checkpoint(
            gen_params, anonymized, grid,
            sample_size=self.config.sample_size, seed=self.seed,
            n_heads=self.config.n_heads,
        )
        write_dataset(synth, paths["synth"], header_comment=self.stamp())
        for mech in self.config.mechanisms:
            if mech == "tka":
                df = generate_tka(anonymized, grid, sample_size=self.config.sample_size, seed=self.seed)
            else:
                df = apply_mechanism(mech, raw, seed=self.seed)
            write_dataset(df, paths[mech], header_comment=self.stamp())
        self._record("generate", outputs)
        return outputs

    def _datasets(self) -> dict:
        names = list(self.config.mechanisms) + ["synth"]
        out = {"raw": self._raw()}
        for name in names:
            out[name] = read_dataset(self.path("data", f"{name}.csv"))
        return out

    def stage_evaluate(self):
        outputs = [
            self.path("reports", "collective_measures.csv"),
            self.path("reports", "individual_measures.csv"),
            self.path("reports", "hourly_w2.csv"),
            self.path("reports", "od_ssim.csv"),
            self.path("reports", "hourly_w2.png"),
        ]
        if self._fresh("evaluate", outputs + self._od_png_paths()):
            return outputs
        grid = self._grid()
        datasets = self._datasets()
        raw = datasets["raw"]
        names = [n for n in datasets if n != "raw"]

        raw_hist = clipped_histogram(raw, grid)
        raw_hourly = [clipped_histogram(raw, grid, hour=h) for h in range(grid.hours_per_day)]
        collective_rows = {m: {"measure": m} for m in (
            "overall_w2", "overall_jsd", "time_w2_mean", "time_jsd_mean", "location_entropy_mean",
        )}
        hourly_rows = []
        collective_rows["location_entropy_mean"]["raw"] = mean_location_entropy(raw, grid)
        collective_rows["overall_w2"]["raw"] = 0.0
        collective_rows["overall_jsd"]["raw"] = 0.0
        collective_rows["time_w2_mean"]["raw"] = 0.0
        collective_rows["time_jsd_mean"]["raw"] = 0.0
        for name in names:
            df = datasets[name]
            hist = clipped_histogram(df, grid)
            collective_rows["overall_w2"][name] = wasserstein2(raw_hist, hist, max_side=self.config.w2_max_side)
            collective_rows["overall_jsd"][name] = jsd(raw_hist, hist)
            w2s, jsds = [], []
            for hour in range(grid.hours_per_day):
                other = clipped_histogram(df, grid, hour=hour)
                w2_h = wasserstein2(raw_hourly[hour], other, max_side=self.config.w2_max_side)
                w2s.append(w2_h)
                jsds.append(jsd(raw_hourly[hour], other))
                hourly_rows.append({"dataset": name, "hour": hour, "w2": w2_h})
            collective_rows["time_w2_mean"][name] = float(math.fsum(w2s) / len(w2s))
            collective_rows["time_jsd_mean"][name] = float(math.fsum(jsds) / len(jsds))
            collective_rows["location_entropy_mean"][name] = mean_location_entropy(df, grid)

        individual = self._individual_measures(datasets, grid)
        self._write_report("collective_measures.csv", pd.DataFrame(list(collective_rows.values())))
        self._write_report("individual_measures.csv", individual)
        hourly = pd.DataFrame(hourly_rows)
        self._write_report("hourly_w2.csv", hourly)
        self._plot_hourly_w2(hourly)
        self._od_reports(datasets, grid)
        self._record("evaluate", outputs + self._od_png_paths())
        return outputs

    def _individual_measures(self, datasets: dict, grid: GridSystem) -> pd.DataFrame:
        measures = ("random_entropy", "uncorrelated_entropy", "actual_entropy",
                    "jump_length_km", "location_switches", "radius_of_gyration_km", "tortuosity_deg")
        rows = {m: {"measure": m} for m in measures}
        for name, df in datasets.items():
            sequences = user_sequences(df, grid)
            ents = [user_entropies(seq) for seq in sequences.values()]
            rows["random_entropy"][name] = float(np.mean([e.random for e in ents]))
            rows["uncorrelated_entropy"][name] = float(np.mean([e.uncorrelated for e in ents]))
            rows["actual_entropy"][name] = float(np.mean([e.actual for e in ents]))
            jumps, switches, tors = [], [], []
            for _, g in df.groupby(["user_id", "day"]):
                g = g.sort_values("hour")
                pts = list(zip(g["lat"], g["lon"]))
                if len(pts) >= 2:
                    jumps.append(jump_length(pts))
                    switches.append(location_switches(pts))
                if len(pts) >= 3:
                    tors.append(tortuosity(pts))
            gyrations = [
                radius_of_gyration(list(zip(g["lat"], g["lon"])))
                for _, g in df.groupby("user_id")
            ]
            rows["jump_length_km"][name] = float(math.fsum(jumps) / len(jumps))
            rows["location_switches"][name] = float(math.fsum(switches) / len(switches))
            rows["radius_of_gyration_km"][name] = float(math.fsum(gyrations) / len(gyrations))
            rows["tortuosity_deg"][name] = float(math.fsum(tors) / len(tors))
        return pd.DataFrame(list(rows.values()))

    def _plot_hourly_w2(self, hourly: pd.DataFrame) -> None:
        fig, ax = plt.subplots(figsize=(8, 4.5), dpi=100)
        for name, group in hourly.groupby("dataset"):
            ax.plot(group["hour"], group["w2"], marker="o", markersize=3, label=name)
        ax.set_xlabel("hour of day")
        ax.set_ylabel("W2 distance to raw (cells)")
        ax.legend(loc="upper right", fontsize=8)
        ax.set_title("Hourly spatial distribution distance")
        fig.tight_layout()
        fig.savefig(self.path("reports", "hourly_w2.png"), metadata=PNG_METADATA)
        plt.close(fig)

    def _od_png_paths(self) -> list[Path]:
        names = ["raw"] + list(self.config.mechanisms) + ["synth"]
        return [self.path("reports", f"od_{name}.png") for name in names]

    def _od_reports(self, datasets: dict, grid: GridSystem) -> None:
        raw_od = od_matrix(datasets["raw"], grid, regions=self.config.od_regions)
        rows = []
        for name, df in datasets.items():
            od = od_matrix(df, grid, regions=self.config.od_regions)
            self._plot_od(od, name)
            if name == "raw":
                continue
            scores = mean_ssim(raw_od, od, sigmas=self.config.ssim_sigmas)
            rows.append({"dataset": name, **scores})
        self._write_report("od_ssim.csv", pd.DataFrame(rows))

    def _plot_od(self, od: np.ndarray, name: str) -> None:
        fig, ax = plt.subplots(figsize=(5, 5), dpi=100)
        ax.imshow(np.log1p(od), cmap="viridis")
        ax.set_title(f"OD flows (log1p): {name}")
        ax.set_xlabel("destination region")
        ax.set_ylabel("origin region")
        fig.tight_layout()
        fig.savefig(self.path("reports", f"od_{name}.png"), metadata=PNG_METADATA)
        plt.close(fig)

    def stage_attack(self):
        outputs = [
            self.path("reports", "tul_measures.csv"),
            self.path("reports", "hlc_measures.csv"),
            self.path("reports", "hlc_eps_sweep.csv"),
        ]
        if self._fresh("attack", outputs):
            return outputs
        grid = self._grid()
        datasets = self._datasets()
        raw = datasets.pop("raw")
        config = TulConfig(epochs=self.config.tul_epochs, lr=self.config.tul_lr,
                           encoding_dim=self.config.encoding_dim, seed=self.seed)
        reports = tul_train_eval(raw, datasets, grid, config)
        tul_rows = [{"dataset": name, **report.as_dict()} for name, report in reports.items()]
        self._write_report("tul_measures.csv", pd.DataFrame(tul_rows))

        hlc_rows = []
        sweep_rows = []
        from ..attacks import hlc_eps_sweep

        for name, df in datasets.items():
            report = hlc_report(raw, df, eps=self.config.hlc_eps, min_pts=self.config.hlc_min_pts)
            hlc_rows.append({"dataset": name, "eps": self.config.hlc_eps, **report.as_dict()})
            sweep = hlc_eps_sweep(raw, df, min_pts=self.config.hlc_min_pts)
            sweep.insert(0, "dataset", name)
            sweep_rows.append(sweep)
        self._write_report("hlc_measures.csv", pd.DataFrame(hlc_rows))
        self._write_report("hlc_eps_sweep.csv", pd.concat(sweep_rows, ignore_index=True))
        self._record("attack", outputs)
        return outputs

    def stage_utility(self):
        outputs = [self.path("reports", "fm_auc.csv")]
        if self._fresh("utility", outputs):
            return outputs
        grid = self._grid()
        datasets = self._datasets()
        raw = datasets.pop("raw")
        raw_train, raw_test = split_dataset(raw, test_fraction=self.config.test_fraction, seed=self.seed)
        space = FeatureSpace(
            users=tuple(sorted(raw["user_id"].unique())),
            n_cells=grid.n * grid.n, hours=grid.hours_per_day,
        )
        test_examples, test_labels = recommendation_examples(raw_test, grid, space, seed=self.seed)
        rows = []
        for name, df in [("raw", raw_train)] + sorted(datasets.items()):
            train_part = df if name != "raw" else raw_train
            if name != "raw":
                train_part, _ = split_dataset(df, test_fraction=self.config.test_fraction, seed=self.seed)
            examples, labels = recommendation_examples(train_part, grid, space, seed=self.seed)
            model = fm_train(
                examples, labels, space.n_features, k=self.config.fm_k,
                epochs=self.config.fm_epochs, lr=self.config.fm_lr, seed=self.seed,
            )
            rows.append({"dataset": name, "auc": auc(fm_predict_batch(model, test_examples), test_labels)})
        self._write_report("fm_auc.csv", pd.DataFrame(rows))
        self._record("utility", outputs)
        return outputs


def _with_seed(config: PipelineConfig, seed: int) -> PipelineConfig:
    from dataclasses import replace

    return replace(config, seed=seed)


def run_pipeline(config: PipelineConfig, out_dir, seed: int | None = None, stages=STAGES) -> dict:
    """Run (or resume) the full pipeline into ``out_dir``."""
    return PipelineRun(config, out_dir, seed=seed).run(stages)
