"""End-to-end phantom pipeline: simulate, preprocess, compress, reconstruct, evaluate.

Each stage reads and writes array containers in its own directory of the
run directory and records a cache key (a hash of its settings and of the
keys of the stages it consumes) together with the sha256 of every file it
wrote. A stage whose key and files are unchanged is skipped on rerun.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .arrayio import read_array, write_array
from .coils import (build_region_masks, coil_removal, orthonormal_span, pooled_covariances,
                    solve_sir, svd_basis, to_sinogram)
from .config import PipelineConfig
from .metrics import evaluate, sar
from .nufft import fft_workers, nufft_adjoint, plan_nufft
from .phantom import sample_noise, sample_radial, simulate_coils, synth_physio
from .preprocess import (bin_cardiac, compute_dcf, estimate_noise_cov, gate_respiratory,
                         make_trajectory, phase_correct_spokes, prewhiten, select_spokes)
from .recon import (ProxSpec, build_sense_operator, estimate_sensitivities,
                    flatten_phase_data, gridding_recon, igrasp_reconstruct, spokes_union,
                    unrolled_reconstruct)
from .types import BinnedKSpace, PhysioTrace, RadialKSpace, SensitivityMaps, Trajectory

log = logging.getLogger(__name__)

STAGES = ("simulate", "preprocess", "compress", "recon", "evaluate")
PROX_NAMES = {"identity": "identity", "tv": "temporal_tv", "resnet": "resnet"}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message


def _fan_out(fn, items, workers=None):
    workers = fft_workers() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def stage_key(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def recon_labels(cfg: PipelineConfig) -> list:
    return [f"unrolled-{cfg.recon.prox}" if m == "unrolled" else m for m in cfg.recon.methods]


def _tag(R) -> str:
    return f"R{float(R):g}"


# ---------------------------------------------------------------- stage records

def _record_path(run_dir, stage) -> Path:
    return Path(run_dir) / stage / "stage.json"


def load_record(run_dir, stage) -> dict:
    p = _record_path(run_dir, stage)
    if not p.is_file():
        raise StageError(stage, f"missing artifacts: {p} (run the {stage} stage first)")
    return json.loads(p.read_text())


def _is_cached(run_dir, stage, key) -> bool:
    p = _record_path(run_dir, stage)
    if not p.is_file():
        return False
    rec = json.loads(p.read_text())
    if rec.get("key") != key:
        return False
    root = Path(run_dir) / stage
    return all((root / f).is_file() and sha256_file(root / f) == h
               for f, h in rec.get("files", {}).items())


def _finish(run_dir, stage, key, meta=None, seconds=None) -> dict:
    root = Path(run_dir) / stage
    files = {str(p.relative_to(root)): sha256_file(p)
             for p in sorted(root.rglob("*")) if p.is_file() and p.name != "stage.json"}
    rec = {"stage": stage, "key": key, "files": files, "meta": meta or {}, "seconds": seconds}
    _record_path(run_dir, stage).write_text(json.dumps(rec, indent=1, default=float))
    return rec


def _run_stage(run_dir, stage, key, body, force=False) -> dict:
    if not force and _is_cached(run_dir, stage, key):
        log.info("%s: cached", stage)
        return load_record(run_dir, stage)
    root = Path(run_dir) / stage
    root.mkdir(parents=True, exist_ok=True)
    for p in root.rglob("stage.json"):
        p.unlink()
    t0 = time.perf_counter()
    try:
        meta = body(root)
    except StageError:
        raise
    except Exception as e:
        raise StageError(stage, f"{type(e).__name__}: {e}") from e
    dt = time.perf_counter() - t0
    log.info("%s: done in %.1f s", stage, dt)
    return _finish(run_dir, stage, key, meta, dt)


# ---------------------------------------------------------------- loaders

def load_simulation(run_dir):
    """(RadialKSpace, Trajectory, PhysioTrace, truth frames, noise samples, meta)."""
    root = Path(run_dir) / "simulate"
    meta = load_record(run_dir, "simulate")["meta"]
    y = RadialKSpace(read_array(root / "kspace.npy"), read_array(root / "timestamps.npy"))
    traj = Trajectory(read_array(root / "coords.npy"), meta["angle_increment_deg"])
    trace = PhysioTrace(read_array(root / "triggers.npy"), read_array(root / "bellows.npy"),
                        meta["bellows_rate"], meta["duration"])
    return y, traj, trace, read_array(root / "truth.npy"), read_array(root / "noise.npy"), meta


def _split(data, spokes, counts, coords) -> BinnedKSpace:
    edges = np.cumsum([0] + list(counts))
    sets = [spokes[a:b] for a, b in zip(edges[:-1], edges[1:])]
    return BinnedKSpace(tuple(sets), tuple(data[:, a:b] for a, b in zip(edges[:-1], edges[1:])),
                        tuple(Trajectory(coords[s]) for s in sets))


def _join(b: BinnedKSpace):
    return (np.concatenate(b.per_phase_data, axis=1), np.concatenate(b.phase_index_sets),
            np.array(b.counts(), dtype=np.int64))


def load_binned(run_dir, R, method=None) -> BinnedKSpace:
    """Preprocessed data at acceleration R, compressed by `method` when given."""
    coords = read_array(Path(run_dir) / "simulate" / "coords.npy")
    pre = Path(run_dir) / "preprocess" / _tag(R)
    spokes, counts = read_array(pre / "spokes.npy"), read_array(pre / "counts.npy")
    src = pre if method is None else Path(run_dir) / "compress" / _tag(R) / method
    return _split(read_array(src / "data.npy"), spokes, counts, coords)


def load_maps(run_dir, R, method) -> SensitivityMaps:
    return SensitivityMaps(read_array(Path(run_dir) / "compress" / _tag(R) / method / "maps.npy"))


# ---------------------------------------------------------------- stages

def stage_simulate(cfg: PipelineConfig, run_dir, force=False) -> dict:
    key = stage_key("simulate", cfg.phantom.to_dict(), cfg.T, cfg.seed, cfg.noise_samples)

    def body(root):
        pc = cfg.phantom
        traj = make_trajectory(pc.n_spokes, pc.readout, pc.angle_increment_deg)
        maps = simulate_coils(pc.n_coils, pc.matrix_size)
        trace = synth_physio(pc, cfg.seed)
        y, truth = sample_radial(pc, maps, traj, trace, seed=cfg.seed, n_phases=cfg.T)
        write_array(root / "kspace.npy", y.data)
        write_array(root / "timestamps.npy", y.spoke_timestamps)
        write_array(root / "coords.npy", traj.coords)
        write_array(root / "triggers.npy", trace.cardiac_triggers)
        write_array(root / "bellows.npy", trace.bellows_samples)
        write_array(root / "truth.npy", truth.frames)
        write_array(root / "coil_maps.npy", maps.maps)
        write_array(root / "noise.npy", sample_noise(pc, cfg.noise_samples, cfg.seed + 1))
        return {"angle_increment_deg": pc.angle_increment_deg,
                "bellows_rate": trace.bellows_rate, "duration": trace.duration,
                "n_spokes": traj.n_spokes, "n_triggers": int(trace.cardiac_triggers.size)}
    return _run_stage(run_dir, "simulate", key, body, force)


def stage_preprocess(cfg: PipelineConfig, run_dir, force=False) -> dict:
    up = load_record(run_dir, "simulate")["key"]
    key = stage_key("preprocess", up, cfg.T, cfg.keep_fraction, [float(r) for r in cfg.R])

    def body(root):
        y, traj, trace, _, noise, _ = load_simulation(run_dir)
        nc = y.n_coils
        if np.any(noise):
            psi = estimate_noise_cov(noise)
            y = prewhiten(y, psi)
            scale = float(np.sqrt(np.real(np.trace(psi)) / nc))
        else:
            psi, scale = np.eye(nc, dtype=np.complex128), 1.0
        write_array(root / "psi.npy", psi)
        bins = bin_cardiac(trace, y.spoke_timestamps, cfg.T)
        mask = gate_respiratory(trace, y.spoke_timestamps, cfg.keep_fraction)
        write_array(root / "keep.npy", mask.keep)
        counts = {}
        for R in cfg.R:
            b = phase_correct_spokes(select_spokes(y, traj, bins, mask, float(R)))
            data, spokes, cnt = _join(b)
            sub = root / _tag(R)
            sub.mkdir(exist_ok=True)
            write_array(sub / "data.npy", data)
            write_array(sub / "spokes.npy", spokes)
            write_array(sub / "counts.npy", cnt)
            counts[_tag(R)] = cnt.tolist()
        return {"scale": scale, "gating_threshold": mask.threshold_value,
                "spokes_per_phase": counts}
    return _run_stage(run_dir, "preprocess", key, body, force)


def per_coil_phase_images(b: BinnedKSpace, N: int, alpha=2.0, width=6) -> np.ndarray:
    """DCF-weighted gridding image of every coil and phase, [N_c, T, N, N]."""
    out = np.empty((b.n_coils, b.n_phases, N, N), dtype=np.complex128)
    for t, (d, tr) in enumerate(zip(b.per_phase_data, b.per_phase_traj)):
        plan = plan_nufft(N, tr.flat(), alpha, width)
        dcf = compute_dcf(tr).weights.reshape(-1)
        out[:, t] = nufft_adjoint(plan, flatten_phase_data(d), dcf)
    return out


def compression_basis(b: BinnedKSpace, method: str, cfg: PipelineConfig, N: int):
    """Coil combination matrix [N_c, N_v] for `method` plus diagnostics."""
    c, nv = cfg.compression, cfg.compression.n_virtual
    if method == "soc":
        sinos = [to_sinogram(d) for d in b.per_phase_data]
        masks = [build_region_masks(s.shape[0], s.shape[1], c.rho_s, c.rho_i) for s in sinos]
        A, B = pooled_covariances(sinos, masks)
        basis = solve_sir(A, B, nv)
        return orthonormal_span(basis.weights), {"sir": list(map(float, basis.sir_values))}
    allc = np.concatenate(b.per_phase_data, axis=1)
    if method == "svd":
        U, retained = svd_basis(allc, nv)
        return U, {"energy_retained": float(retained)}
    imgs = per_coil_phase_images(b, N, cfg.recon.alpha, cfg.recon.width)
    kept, scores = coil_removal(imgs, rel_threshold=c.removal_rel_threshold)
    U, retained = svd_basis(allc[..., kept], min(nv, kept.size))
    W = np.zeros((b.n_coils, U.shape[1]), dtype=np.complex128)
    W[kept] = U
    return W, {"kept": kept.tolist(), "scores": scores.tolist(),
               "energy_retained": float(retained)}


def _compress_one(args):
    cfg, run_dir, R = args
    N = cfg.phantom.matrix_size
    b = load_binned(run_dir, R)
    meta = {}
    for m in dict.fromkeys((cfg.compression.method,) + tuple(cfg.compression.compare)):
        W, info = compression_basis(b, m, cfg, N)
        bc = b.with_data([d @ W.conj() for d in b.per_phase_data])
        yu, tu = spokes_union(bc)
        maps = estimate_sensitivities(yu, tu, N, alpha=cfg.recon.alpha, width=cfg.recon.width)
        grid = gridding_recon(bc, maps, build_sense_operator(bc, maps, cfg.recon.alpha,
                                                             cfg.recon.width)).frames
        info["sar_gridding"] = float(np.mean([sar(f) for f in np.abs(grid)]))
        sub = Path(run_dir) / "compress" / _tag(R) / m
        sub.mkdir(parents=True, exist_ok=True)
        write_array(sub / "basis.npy", W)
        write_array(sub / "data.npy", _join(bc)[0])
        write_array(sub / "maps.npy", maps.maps)
        write_array(sub / "gridding.npy", grid)
        meta[m] = info
    return _tag(R), meta


def stage_compress(cfg: PipelineConfig, run_dir, force=False) -> dict:
    up = load_record(run_dir, "preprocess")["key"]
    key = stage_key("compress", up, cfg.compression, cfg.recon.alpha, cfg.recon.width)

    def body(root):
        return dict(_fan_out(_compress_one, [(cfg, str(run_dir), R) for R in cfg.R]))
    return _run_stage(run_dir, "compress", key, body, force)


def _recon_one(args):
    cfg, run_dir, R, scale = args
    rc = cfg.recon
    m = cfg.compression.method
    b, maps = load_binned(run_dir, R, m), load_maps(run_dir, R, m)
    op = build_sense_operator(b, maps, rc.alpha, rc.width)
    sub = Path(run_dir) / "recon" / _tag(R)
    sub.mkdir(parents=True, exist_ok=True)
    meta = {}
    x0 = gridding_recon(b, maps, op)
    for method, label in zip(rc.methods, recon_labels(cfg)):
        t0 = time.perf_counter()
        if method == "gridding":
            x, info = x0, {}
        elif method == "igrasp":
            x, gi = igrasp_reconstruct(b, maps, rc.lam_t_rel, rc.n_iter, op=op)
            info = {"objective": gi.objective, "lipschitz": gi.lipschitz, "lam": gi.lam,
                    "rejected": gi.rejected}
        else:
            spec = ProxSpec(PROX_NAMES[rc.prox], rc.tau, rc.K, rc.lam, rc.n_cg,
                            rc.weight_file)
            x, diags = unrolled_reconstruct(b, maps, spec, op=op, x0=x0)
            info = {"dc_residual": [d.dc_residual for d in diags],
                    "prox_residual": [d.prox_residual for d in diags],
                    "change_norm": [d.change_norm for d in diags]}
        info["seconds"] = time.perf_counter() - t0
        write_array(sub / f"{label}.npy", x.frames * scale)
        meta[label] = info
    return _tag(R), meta


def stage_recon(cfg: PipelineConfig, run_dir, force=False) -> dict:
    pre = load_record(run_dir, "preprocess")
    up = load_record(run_dir, "compress")["key"]
    wf = cfg.recon.weight_file
    wsum = sha256_file(wf) if wf and cfg.recon.prox == "resnet" else None
    key = stage_key("recon", up, cfg.compression.method, cfg.recon, wsum)
    scale = pre["meta"]["scale"]

    def body(root):
        return dict(_fan_out(_recon_one, [(cfg, str(run_dir), R, scale) for R in cfg.R]))
    return _run_stage(run_dir, "recon", key, body, force)


def stage_evaluate(cfg: PipelineConfig, run_dir, force=False) -> dict:
    up = [load_record(run_dir, s)["key"] for s in ("simulate", "compress", "recon")]
    key = stage_key("evaluate", up)

    def body(root):
        truth = np.abs(read_array(Path(run_dir) / "simulate" / "truth.npy"))
        comp = load_record(run_dir, "compress")["meta"]
        metrics = {"recon": {}, "sar": {}}
        for R in cfg.R:
            tag = _tag(R)
            reports = {}
            for label in recon_labels(cfg):
                rec = read_array(Path(run_dir) / "recon" / tag / f"{label}.npy")
                rep = evaluate(truth, rec)
                reports[label] = rep.to_dict()
                with open(root / f"{tag}_{label}.csv", "w") as f:
                    f.writelines(",".join(map(str, row)) + "\n" for row in rep.csv_rows())
            metrics["recon"][tag] = reports
            metrics["sar"][tag] = {m: comp[tag][m]["sar_gridding"]
                                   for m in cfg.compression.compare}
        (root / "metrics.json").write_text(json.dumps(metrics, indent=1, default=float))
        return {}
    return _run_stage(run_dir, "evaluate", key, body, force)


STAGE_FUNCS = {"simulate": stage_simulate, "preprocess": stage_preprocess,
               "compress": stage_compress, "recon": stage_recon, "evaluate": stage_evaluate}


# ---------------------------------------------------------------- manifest / driver

def versions() -> dict:
    return {"radcine": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def write_manifest(cfg: PipelineConfig, run_dir) -> Path:
    stages = {}
    for s in STAGES:
        p = _record_path(run_dir, s)
        if p.is_file():
            rec = json.loads(p.read_text())
            stages[s] = {"key": rec["key"], "files": rec["files"], "seconds": rec["seconds"]}
    man = {"config": cfg.to_dict(), "versions": versions(), "stages": stages}
    path = Path(run_dir) / "manifest.json"
    path.write_text(json.dumps(man, indent=1))
    return path


def run_stage(name: str, cfg: PipelineConfig, run_dir, force=False) -> dict:
    cfg.validate()
    Path(run_dir).mkdir(parents=True, exist_ok=True)
    try:
        rec = STAGE_FUNCS[name](cfg, run_dir, force)
    except StageError as e:
        # a missing upstream record is reported against the stage that needed it
        raise StageError(name, e.message) from e
    (Path(run_dir) / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    write_manifest(cfg, run_dir)
    return rec


def run_pipeline(cfg: PipelineConfig, run_dir=None, force=False, make_report=True) -> Path:
    """Run every stage (reusing cached ones) and return the run directory."""
    cfg.validate()
    run_dir = Path(run_dir or cfg.out)
    for s in STAGES:
        run_stage(s, cfg, run_dir, force)
    if make_report:
        from .report import report
        report(run_dir)
    return run_dir


def load_run_config(run_dir) -> PipelineConfig:
    p = Path(run_dir) / "config.json"
    if not p.is_file():
        raise StageError("report", f"missing artifacts: {p}")
    return PipelineConfig.from_dict(json.loads(p.read_text()))
