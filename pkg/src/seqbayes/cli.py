"""End-to-end command-line workflows: simulate, recover, compare.

A run is described by a versioned JSON config (schema below).  The config
file path is the single positional argument of ``simulate`` and
``recover``; any field can be overridden on the command line with dotted
``--key value`` pairs, e.g. ``--solver.tol 1e-4`` or ``--noise.seed 7``.

Config schema (version 1)::

    {
      "version": 1,
      "modality": "fourier" | "blur",
      "output_dir": "out",
      "anti_inverse_crime": true,
      "tv_order": 1 | 2,
      "fourier_band_width": 10,      # fourier only: per-frame excluded bands
      "blur_gamma": 0.005,           # blur only: kernel width
      "phantom": {"n1": ..., "frames": ..., "ellipses": [...], "background": [...]},
      "noise": {"snr": [...], "seed": ...},
      "solver": {"hyper": {"eta_alpha": ..., ..., "theta_gamma": ...},
                  "max_outer_iters": ..., "tol": ..., "inner_gd_steps": ...},
      "uq": {"method": "exact" | "stochastic", "probes": ..., "seed": ...,
              "exact_cap": ...}
    }

Outputs are 16-bit PGM images for display plus raw little-endian float64
files with JSON headers for exactness, and CSV tables with fixed
12-significant-digit formatting.  Exit codes: 0 success, 1 usage error,
2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import read_raw, write_csv, write_pgm16, write_raw
from .model import HyperParams, ImageSequence, MeasurementSet
from .operators import (
    GaussianBlurOp,
    FourierSamplingOp,
    RegularizationOp,
    operator_from_descriptor,
)
from .simulate import (
    NoiseSpec,
    PhantomSpec,
    refine_spec,
    remove_bands,
    render_phantom,
    synthesize_measurements,
)
from .solver import (
    JOINT,
    SEPARATE,
    NotPositiveDefiniteError,
    SolverConfig,
    SolverDivergedError,
    solve,
)
from .uq import change_mask, edge_map, posterior_variance

__all__ = [
    "RunConfig",
    "UQConfig",
    "MetricsTable",
    "default_config_dict",
    "config_from_dict",
    "config_to_dict",
    "relative_log_error",
    "cmd_simulate",
    "cmd_recover",
    "cmd_compare",
    "main",
]

CONFIG_VERSION = 1
E_LOG_FLOOR = -16.0


@dataclass(frozen=True)
class UQConfig:
    method: str = "exact"
    probes: int = 256
    seed: int = 0
    exact_cap: int = 4096


@dataclass(frozen=True)
class RunConfig:
    """Everything a simulate/recover run needs; JSON round-trip is identity."""

    modality: str
    phantom: PhantomSpec
    noise: NoiseSpec
    solver: SolverConfig
    uq: UQConfig
    output_dir: str
    tv_order: int
    anti_inverse_crime: bool = True
    fourier_band_width: int = 10
    blur_gamma: float = 5e-3

    def __post_init__(self):
        if self.modality not in ("fourier", "blur"):
            raise ValueError(f"modality must be 'fourier' or 'blur', got {self.modality!r}")
        if len(self.noise.snr) != self.phantom.frames:
            raise ValueError("need one SNR value per frame")


def default_config_dict(modality: str, n1: int = 64, frames: int = 4) -> dict:
    """Config prefilled with the standard settings of each modality."""
    from .simulate import moving_ellipses_phantom

    if modality == "fourier":
        hyper = {"eta_alpha": 1.0, "theta_alpha": 1e-3, "eta_beta": 1.0,
                 "theta_beta": 1e-3, "eta_gamma": 2.0, "theta_gamma": 1e-3}
        snr = [2.0] * frames
        tv_order = 1
    elif modality == "blur":
        hyper = {"eta_alpha": 1.0, "theta_alpha": 1e-3, "eta_beta": 1.0,
                 "theta_beta": 1e-3, "eta_gamma": 1.0, "theta_gamma": 1e-1}
        snr = [2.0 + j for j in range(1, frames + 1)]
        tv_order = 2
    else:
        raise ValueError(f"modality must be 'fourier' or 'blur', got {modality!r}")
    return {
        "version": CONFIG_VERSION,
        "modality": modality,
        "output_dir": "out",
        "anti_inverse_crime": True,
        "tv_order": tv_order,
        "fourier_band_width": 10,
        "blur_gamma": 5e-3,
        "phantom": moving_ellipses_phantom(n1, frames).to_dict(),
        "noise": {"snr": snr, "seed": 0},
        "solver": {
            "hyper": hyper,
            "max_outer_iters": 1000,
            "tol": 1e-3,
            "inner_gd_steps": 5,
        },
        "uq": {"method": "exact", "probes": 256, "seed": 0, "exact_cap": 4096},
    }


def config_from_dict(d: dict) -> RunConfig:
    if int(d.get("version", CONFIG_VERSION)) != CONFIG_VERSION:
        raise ValueError(f"unsupported config version {d.get('version')}")
    solver = d["solver"]
    hyper = HyperParams(**solver["hyper"])
    uq = d.get("uq", {})
    return RunConfig(
        modality=d["modality"],
        phantom=PhantomSpec.from_dict(d["phantom"]),
        noise=NoiseSpec.from_dict(d["noise"]),
        solver=SolverConfig(
            hyper=hyper,
            max_outer_iters=int(solver.get("max_outer_iters", 1000)),
            tol=float(solver.get("tol", 1e-3)),
            inner_gd_steps=int(solver.get("inner_gd_steps", 5)),
        ),
        uq=UQConfig(
            method=uq.get("method", "exact"),
            probes=int(uq.get("probes", 256)),
            seed=int(uq.get("seed", 0)),
            exact_cap=int(uq.get("exact_cap", 4096)),
        ),
        output_dir=d["output_dir"],
        tv_order=int(d["tv_order"]),
        anti_inverse_crime=bool(d.get("anti_inverse_crime", True)),
        fourier_band_width=int(d.get("fourier_band_width", 10)),
        blur_gamma=float(d.get("blur_gamma", 5e-3)),
    )


def config_to_dict(cfg: RunConfig) -> dict:
    return {
        "version": CONFIG_VERSION,
        "modality": cfg.modality,
        "output_dir": cfg.output_dir,
        "anti_inverse_crime": cfg.anti_inverse_crime,
        "tv_order": cfg.tv_order,
        "fourier_band_width": cfg.fourier_band_width,
        "blur_gamma": cfg.blur_gamma,
        "phantom": cfg.phantom.to_dict(),
        "noise": cfg.noise.to_dict(),
        "solver": {
            "hyper": {
                "eta_alpha": cfg.solver.hyper.eta_alpha,
                "theta_alpha": cfg.solver.hyper.theta_alpha,
                "eta_beta": cfg.solver.hyper.eta_beta,
                "theta_beta": cfg.solver.hyper.theta_beta,
                "eta_gamma": cfg.solver.hyper.eta_gamma,
                "theta_gamma": cfg.solver.hyper.theta_gamma,
            },
            "max_outer_iters": cfg.solver.max_outer_iters,
            "tol": cfg.solver.tol,
            "inner_gd_steps": cfg.solver.inner_gd_steps,
        },
        "uq": {
            "method": cfg.uq.method,
            "probes": cfg.uq.probes,
            "seed": cfg.uq.seed,
            "exact_cap": cfg.uq.exact_cap,
        },
    }


def build_operators(cfg: RunConfig) -> list:
    """Per-frame forward operators implied by the config."""
    n1 = cfg.phantom.n1
    if cfg.modality == "fourier":
        return [
            FourierSamplingOp(n1, remove_bands(j, width=cfg.fourier_band_width, n1=n1))
            for j in range(1, cfg.phantom.frames + 1)
        ]
    return [GaussianBlurOp(n1, cfg.blur_gamma) for _ in range(cfg.phantom.frames)]


@dataclass(frozen=True)
class MetricsTable:
    """Per-frame relative log-errors of one recovery run plus bookkeeping."""

    method: str
    e_log: tuple
    iterations: int | None = None
    wall_time_s: float | None = None

    @property
    def average(self) -> float:
        return float(np.mean(self.e_log))


def relative_log_error(ref: np.ndarray, rec: np.ndarray) -> float:
    """log10 of the relative Euclidean error, floored at -16."""
    ref = np.asarray(ref, dtype=float)
    rec = np.asarray(rec, dtype=float)
    if ref.shape != rec.shape:
        raise ValueError("reference and recovery have different shapes")
    nref = np.linalg.norm(ref)
    if nref == 0.0:
        raise ValueError("reference frame has zero norm")
    rel = np.linalg.norm(rec - ref) / nref
    if rel <= 10.0 ** E_LOG_FLOOR:
        return E_LOG_FLOOR
    return max(float(np.log10(rel)), E_LOG_FLOOR)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig) -> list:
    """Render the phantom, synthesize measurements, and write everything.

    Returns the list of written paths.  Rerunning with the same config is
    byte-identical.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = render_phantom(cfg.phantom)
    ops = build_operators(cfg)
    fine = render_phantom(refine_spec(cfg.phantom)) if cfg.anti_inverse_crime else None
    measurements = synthesize_measurements(
        truth, ops, cfg.noise, anti_inverse_crime=cfg.anti_inverse_crime, fine_x=fine
    )
    written = []
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True))
    written.append(cfg_path)
    for j in range(truth.count):
        base = out / f"truth_frame_{j + 1:02d}"
        write_raw(base.with_suffix(".raw"), truth.frames[j], extra={"n1": truth.n1})
        write_pgm16(base.with_suffix(".pgm"), truth.grid(j))
        written += [base.with_suffix(".raw"), base.with_suffix(".pgm")]
        data_path = out / f"data_frame_{j + 1:02d}.raw"
        write_raw(
            data_path,
            measurements.data[j],
            extra={"operator": measurements.operator_ids[j], "snr": cfg.noise.snr[j]},
        )
        written.append(data_path)
    ops_path = out / "operators.json"
    ops_path.write_text(
        json.dumps(list(measurements.operator_ids), indent=2, sort_keys=True)
    )
    written.append(ops_path)
    return written


def _load_simulated(out: Path):
    descriptors = json.loads((out / "operators.json").read_text())
    data = []
    for j in range(len(descriptors)):
        vec, _ = read_raw(out / f"data_frame_{j + 1:02d}.raw")
        data.append(vec)
    return MeasurementSet(data=tuple(data), operator_ids=tuple(descriptors))


def cmd_recover(cfg: RunConfig, mode: str):
    """Run the solver on previously simulated data and write all maps.

    Writes recovered frames, variance maps, edge maps, change masks (joint
    mode only), precision dumps, and the convergence history.  Returns the
    solve result.
    """
    out = Path(cfg.output_dir)
    if not (out / "operators.json").exists():
        raise FileNotFoundError(f"no simulated data in {out}; run 'simulate' first")
    measurements = _load_simulated(out)
    ops = [operator_from_descriptor(d) for d in measurements.operator_ids]
    n1 = cfg.phantom.n1
    R = RegularizationOp(cfg.tv_order, n1)
    scfg = SolverConfig(
        hyper=cfg.solver.hyper,
        max_outer_iters=cfg.solver.max_outer_iters,
        tol=cfg.solver.tol,
        inner_gd_steps=cfg.solver.inner_gd_steps,
        mode=mode,
    )
    t0 = time.perf_counter()
    result = solve(measurements, ops, R, scfg)
    wall = time.perf_counter() - t0

    J = result.images.count
    for j in range(J):
        base = out / f"recon_{mode}_frame_{j + 1:02d}"
        write_raw(base.with_suffix(".raw"), result.images.frames[j], extra={"n1": n1})
        write_pgm16(base.with_suffix(".pgm"), result.images.grid(j))
        var = posterior_variance(
            result.posteriors[j],
            method=cfg.uq.method,
            probes=cfg.uq.probes,
            seed=cfg.uq.seed,
            exact_cap=cfg.uq.exact_cap,
        )
        vbase = out / f"variance_{mode}_frame_{j + 1:02d}"
        write_raw(vbase.with_suffix(".raw"), var.values, extra={"n1": n1})
        write_pgm16(vbase.with_suffix(".pgm"), var.values.reshape(n1, n1, order="F"))
        edges = edge_map(result.precisions.beta[j], R)
        for name, values in (
            ("vertical", edges.vertical),
            ("horizontal", edges.horizontal),
            ("combined", edges.combined),
        ):
            ebase = out / f"edges_{mode}_frame_{j + 1:02d}_{name}"
            write_raw(ebase.with_suffix(".raw"), values, extra={"n1": n1})
            write_pgm16(ebase.with_suffix(".pgm"), values.reshape(n1, n1, order="F"))
        write_raw(out / f"beta_{mode}_frame_{j + 1:02d}.raw", result.precisions.beta[j])
    for j, gamma in enumerate(result.precisions.gamma):
        mask = change_mask(gamma)
        cbase = out / f"change_{mode}_pair_{j + 1:02d}_{j + 2:02d}"
        write_raw(cbase.with_suffix(".raw"), mask, extra={"n1": n1})
        write_pgm16(cbase.with_suffix(".pgm"), mask.reshape(n1, n1, order="F"))
        write_raw(out / f"gamma_{mode}_pair_{j + 1:02d}_{j + 2:02d}.raw", gamma)
    write_raw(out / f"alpha_{mode}.raw", result.precisions.alpha)
    write_csv(
        out / f"history_{mode}.csv",
        ["iteration", "abs_change", "rel_change", "log_joint"],
        [
            (i + 1, rec.abs_change, rec.rel_change, rec.log_joint)
            for i, rec in enumerate(result.history)
        ],
    )
    (out / f"result_{mode}.json").write_text(
        json.dumps(
            {
                "mode": mode,
                "iterations": result.iterations,
                "converged": result.converged,
                "wall_time_s": wall,
                "frames": J,
                "n1": n1,
            },
            indent=2,
            sort_keys=True,
        )
    )
    return result


def cmd_compare(result_dirs: list, truth_dir: str, out_csv: str = "metrics.csv") -> list:
    """Relative log-errors of every recovery run against the ground truth.

    Scans each result directory for ``result_<mode>.json`` files, computes
    per-frame errors and their average, and writes one CSV row per
    (method, frame) plus an average row per method.
    """
    truth_dir = Path(truth_dir)
    truth_frames = sorted(truth_dir.glob("truth_frame_*.raw"))
    if not truth_frames:
        raise FileNotFoundError(f"no ground-truth frames in {truth_dir}")
    truth = [read_raw(p)[0] for p in truth_frames]
    tables = []
    rows = []
    for d in result_dirs:
        d = Path(d)
        infos = sorted(d.glob("result_*.json"))
        if not infos:
            raise FileNotFoundError(f"no recovery results in {d}")
        for info_path in infos:
            info = json.loads(info_path.read_text())
            mode = info["mode"]
            e_logs = []
            for j in range(len(truth)):
                rec, _ = read_raw(d / f"recon_{mode}_frame_{j + 1:02d}.raw")
                if rec.shape != truth[j].shape:
                    raise ValueError(
                        f"frame {j + 1}: recovery shape {rec.shape} does not match truth"
                    )
                e_logs.append(relative_log_error(truth[j], rec))
            table = MetricsTable(
                method=mode,
                e_log=tuple(e_logs),
                iterations=info.get("iterations"),
                wall_time_s=info.get("wall_time_s"),
            )
            tables.append(table)
            for j, e in enumerate(table.e_log):
                rows.append((table.method, str(d), str(j + 1), e,
                             table.iterations, table.wall_time_s))
            rows.append((table.method, str(d), "average", table.average,
                         table.iterations, table.wall_time_s))
    write_csv(out_csv, ["method", "dir", "frame", "e_log", "iterations", "wall_time_s"], rows)
    return tables


# ---------------------------------------------------------------------------
# Argument parsing and entry point
# ---------------------------------------------------------------------------


def _apply_overrides(d: dict, tokens: list) -> None:
    if len(tokens) % 2 != 0:
        raise ValueError(f"overrides must come in '--key value' pairs, got {tokens}")
    for flag, raw in zip(tokens[0::2], tokens[1::2]):
        if not flag.startswith("--"):
            raise ValueError(f"expected an override flag, got {flag!r}")
        path = flag[2:].split(".")
        node = d
        for part in path[:-1]:
            if part not in node or not isinstance(node[part], dict):
                node[part] = {}
            node = node[part]
        try:
            node[path[-1]] = json.loads(raw)
        except json.JSONDecodeError:
            node[path[-1]] = raw


def _load_config(path: str, overrides: list) -> RunConfig:
    raw = json.loads(Path(path).read_text())
    if "modality" not in raw:
        raise ValueError("config must declare a 'modality'")
    frames = raw.get("phantom", {}).get("frames", 4)
    n1 = raw.get("phantom", {}).get("n1", 64)
    merged = default_config_dict(raw["modality"], n1=n1, frames=frames)
    _deep_update(merged, raw)
    _apply_overrides(merged, overrides)
    return config_from_dict(merged)


def _deep_update(base: dict, new: dict) -> None:
    for key, value in new.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqbayes",
        description="Joint Bayesian recovery of image sequences: simulate, recover, compare.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_sim = sub.add_parser("simulate", help="render a phantom and synthesize noisy data")
    p_sim.add_argument("config", help="JSON config file")
    p_rec = sub.add_parser("recover", help="recover the sequence from simulated data")
    p_rec.add_argument("config", help="JSON config file")
    p_rec.add_argument("--mode", choices=[SEPARATE, JOINT], default=JOINT)
    p_cmp = sub.add_parser("compare", help="tabulate relative log-errors against the truth")
    p_cmp.add_argument("result_dirs", nargs="+", help="directories holding recovery results")
    p_cmp.add_argument("--truth", required=True, help="directory holding truth_frame_*.raw")
    p_cmp.add_argument("--out", default="metrics.csv", help="output CSV path")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        if args.command == "simulate":
            cfg = _load_config(args.config, extra)
            written = cmd_simulate(cfg)
            print(f"wrote {len(written)} files to {cfg.output_dir}")
        elif args.command == "recover":
            cfg = _load_config(args.config, extra)
            result = cmd_recover(cfg, args.mode)
            print(
                f"{args.mode} recovery: {result.iterations} iterations, "
                f"converged={result.converged}, outputs in {cfg.output_dir}"
            )
        elif args.command == "compare":
            if extra:
                raise ValueError(f"unrecognized arguments: {extra}")
            tables = cmd_compare(args.result_dirs, args.truth, args.out)
            for t in tables:
                print(f"{t.method}: average e_log = {t.average:.4f}")
            print(f"wrote {args.out}")
    except (SolverDivergedError, NotPositiveDefiniteError, RuntimeError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
