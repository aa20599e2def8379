"""Comparison tables, 8-bit PGM image grids and x-t profile strips from a run directory.

Everything here reads finished stage outputs only, so a report can be
regenerated at any time without recomputing.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .arrayio import read_array, write_array
from .metrics import xt_profile
from .pipeline import StageError, _tag, load_run_config, recon_labels

PGM_PERCENTILE = 99.0


def window_8bit(image, upper=None) -> np.ndarray:
    """Magnitude scaled so the 99th percentile (or `upper`) maps to 255."""
    mag = np.abs(np.asarray(image))
    if upper is None:
        upper = float(np.percentile(mag, PGM_PERCENTILE)) if mag.size else 0.0
    if upper <= 0:
        return np.zeros(mag.shape, dtype=np.uint8)
    return np.clip(np.round(mag / upper * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, image, upper=None) -> Path:
    """Binary (P5) 8-bit greyscale image of |image|."""
    px = window_8bit(image, upper)
    if px.ndim != 2:
        raise ValueError("PGM export needs a 2-D image")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (px.shape[1], px.shape[0]))
        f.write(px.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def tile(images, gap: int = 2) -> np.ndarray:
    """Side-by-side magnitude tiles separated by `gap` zero columns."""
    images = [np.abs(np.asarray(i)) for i in images]
    h = max(i.shape[0] for i in images)
    cols = []
    for i in images:
        pad = np.zeros((h, i.shape[1]))
        pad[: i.shape[0]] = i
        cols += [pad, np.zeros((h, gap))]
    return np.hstack(cols[:-1])


def _metrics(run_dir) -> dict:
    p = Path(run_dir) / "evaluate" / "metrics.json"
    if not p.is_file():
        raise StageError("report", f"missing artifacts: {p} (run evaluate first)")
    return json.loads(p.read_text())


def profile_lines(cfg) -> dict:
    """Row and column through the heart center."""
    N = cfg.phantom.matrix_size
    dy, dx = cfg.phantom.heart_center
    return {"horizontal": int(N // 2 + round(dy)), "vertical": int(N // 2 + round(dx))}


def profile(run_dir) -> list:
    """Write x-t profiles of truth and every reconstruction as arrays and PGM strips."""
    run_dir = Path(run_dir)
    cfg = load_run_config(run_dir)
    out = run_dir / "profile"
    out.mkdir(exist_ok=True)
    truth = np.abs(read_array(run_dir / "simulate" / "truth.npy"))
    lines = profile_lines(cfg)
    written = []
    for R in cfg.R:
        tag = _tag(R)
        cines = {"truth": truth}
        for label in recon_labels(cfg):
            p = run_dir / "recon" / tag / f"{label}.npy"
            if not p.is_file():
                raise StageError("profile", f"missing artifacts: {p}")
            cines[label] = np.abs(read_array(p))
        for axis, idx in lines.items():
            strips = {k: xt_profile(v, axis, idx).T for k, v in cines.items()}
            upper = float(np.percentile(strips["truth"], PGM_PERCENTILE))
            for k, s in strips.items():
                written.append(write_array(out / f"{tag}_{k}_{axis}.npy", s))
            written.append(write_pgm(out / f"{tag}_xt_{axis}.pgm",
                                     tile(list(strips.values())), upper))
    return written


def table_rows(cfg, metrics) -> list:
    rows = []
    for label in recon_labels(cfg):
        for R in cfg.R:
            s = metrics["recon"][_tag(R)][label]["summary"]
            rows.append({"method": label, "R": float(R), "psnr_mean": s["psnr_mean"],
                         "psnr_std": s["psnr_std"], "ssim_mean": s["ssim_mean"],
                         "ssim_std": s["ssim_std"], "sar_mean": s["sar_mean"]})
    return rows


def format_table(cfg, metrics) -> str:
    tags = [_tag(R) for R in cfg.R]
    head = f"{'method':<18}" + "".join(f"{t:>26}" for t in tags)
    lines = ["PSNR (dB) / SSIM, mean +- std over cardiac phases", head, "-" * len(head)]
    for label in recon_labels(cfg):
        cells = []
        for t in tags:
            s = metrics["recon"][t][label]["summary"]
            cells.append(f"{s['psnr_mean']:6.2f}+-{s['psnr_std']:4.2f} / "
                         f"{s['ssim_mean']:.3f}+-{s['ssim_std']:.3f}")
        lines.append(f"{label:<18}" + "".join(f"{c:>26}" for c in cells))
    lines += ["", f"Streak-artifact ratio of gridding recon ({cfg.compression.n_virtual} "
                  f"virtual coils)", f"{'compression':<18}" + "".join(f"{t:>10}" for t in tags)]
    for m in cfg.compression.compare:
        lines.append(f"{m:<18}" + "".join(f"{metrics['sar'][t][m]:>10.3f}" for t in tags))
    return "\n".join(lines) + "\n"


def report(run_dir) -> str:
    """Write report/table.{csv,txt}, report/sar.csv, image grids and x-t strips."""
    run_dir = Path(run_dir)
    cfg = load_run_config(run_dir)
    metrics = _metrics(run_dir)
    out = run_dir / "report"
    out.mkdir(exist_ok=True)
    rows = table_rows(cfg, metrics)
    with open(out / "table.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    with open(out / "sar.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["compression", "R", "sar_gridding"])
        for R in cfg.R:
            for m in cfg.compression.compare:
                w.writerow([m, float(R), metrics["sar"][_tag(R)][m]])
    text = format_table(cfg, metrics)
    (out / "table.txt").write_text(text)

    truth = np.abs(read_array(run_dir / "simulate" / "truth.npy"))
    frame = 0
    upper = float(np.percentile(truth[frame], PGM_PERCENTILE))
    for R in cfg.R:
        tag = _tag(R)
        recs = [read_array(run_dir / "recon" / tag / f"{label}.npy")[frame]
                for label in recon_labels(cfg)]
        write_pgm(out / f"{tag}_recon_grid.pgm", tile([truth[frame]] + recs), upper)
        grids = [np.abs(read_array(run_dir / "compress" / tag / m / "gridding.npy")[frame])
                 for m in cfg.compression.compare]
        # each compression output has its own scale, so window each tile separately
        grids = [g / max(np.percentile(g, PGM_PERCENTILE), 1e-30) for g in grids]
        write_pgm(out / f"{tag}_compression_grid.pgm", tile(grids), 1.0)
    profile(run_dir)
    return text
