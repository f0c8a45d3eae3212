"""Command-line entry point.

Subcommands form a resumable dataflow over on-disk artifacts:

    simulate -> process -> mds -> train -> eval / explain

plus `axes` (print derived axis constants) and `selftest` (deterministic
end-to-end micro-run). Exit codes: 0 success, 2 validation or usage
error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import container, images, mds, nn, report, rva, scene, train, xai
from .config import ConfigError, RunConfig, config_text, load_config


class UsageError(Exception):
    """User-facing input problem (missing artifact, bad flag value)."""


def _write_text(path: str, text: str) -> None:
    container._atomic_write(path, text.encode("utf-8"))


def _map_ordered(fn, items, threads: int):
    """Apply fn over items, optionally on a thread pool, preserving order.

    Results are assembled in input order, so artifacts do not depend on
    the thread count.
    """
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _require_dir(path: str, purpose: str) -> str:
    if not path:
        raise UsageError(f"missing directory for {purpose}")
    if not os.path.isdir(path):
        raise UsageError(f"{purpose} directory not found: {path}")
    return path


def _out_dir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _read_index(path: str) -> list[dict]:
    if not os.path.isfile(path):
        raise UsageError(f"missing index file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _write_index(path: str, fieldnames: list[str], rows: list[dict]) -> None:
    lines = [",".join(fieldnames)]
    for row in rows:
        lines.append(",".join(str(row[k]) for k in fieldnames))
    _write_text(path, "\n".join(lines) + "\n")


def _seed_of(args, rc: RunConfig) -> int:
    return args.seed if args.seed is not None else rc.train.seed


# --- subcommands -----------------------------------------------------------

def cmd_axes(args) -> int:
    rc = load_config(args.config)
    axes = scene.derive_axes(rc.radar)
    print(f"delta_r = {axes.delta_r!r}")
    print(f"r_max = {axes.r_max!r}")
    print(f"delta_v = {axes.delta_v!r}")
    print(f"v_max = {axes.v_max!r}")
    print(f"delta_theta = {axes.delta_theta!r}")
    return 0


def cmd_simulate(args) -> int:
    rc = load_config(args.config)
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    out = _out_dir(args)
    seed = _seed_of(args, rc)
    templates = list(scene.DEFAULT_TEMPLATES.values())[:rc.model.k_tar]
    if len(templates) < rc.model.k_tar:
        raise UsageError(
            f"only {len(scene.DEFAULT_TEMPLATES)} class templates available, "
            f"config asks for {rc.model.k_tar}")
    dataset = scene.sample_dataset(rc.radar, templates, args.count, seed)
    _write_text(os.path.join(out, "config.txt"), config_text(rc))

    def emit(item):
        i, (sc, frames, class_id) = item
        scene_file = f"scene_{i:04d}.txt"
        tensor_file = f"adc_{i:04d}.tensor"
        _write_text(os.path.join(out, scene_file), scene.scene_to_text(sc))
        container.write_tensor(
            os.path.join(out, tensor_file), frames,
            axes=("frame", "fast_time", "slow_time", "tx", "rx"))
        return {"sample": i, "class_id": class_id, "scene": scene_file,
                "tensor": tensor_file}

    rows = _map_ordered(emit, list(enumerate(dataset)), args.threads)
    _write_index(os.path.join(out, "index.csv"),
                 ["sample", "class_id", "scene", "tensor"], rows)
    print(f"simulate: wrote {len(rows)} samples to {out}")
    return 0


def cmd_process(args) -> int:
    rc = load_config(args.config)
    in_dir = _require_dir(args.in_dir, "simulate output")
    out = _out_dir(args)
    index = _read_index(os.path.join(in_dir, "index.csv"))
    _write_text(os.path.join(out, "config.txt"), config_text(rc))

    def detect(row):
        frames, _ = container.read_tensor(os.path.join(in_dir, row["tensor"]))
        return rva.process_sample(frames.astype(np.complex128), rc.radar,
                                  rc.pipeline)

    results = _map_ordered(detect, index, args.threads)
    out_rows = []
    cent_rows = []
    for row, det in zip(index, results):
        i = int(row["sample"])
        for t, (centroid, bbox) in enumerate(zip(det.centroids, det.bboxes)):
            tensor_file = f"bbox_{i:04d}_{t:02d}.tensor"
            container.write_tensor(os.path.join(out, tensor_file), bbox,
                                   axes=("range_cell", "angle_cell", "slow_time"))
            out_rows.append({"sample": i, "target": t,
                             "class_id": row["class_id"],
                             "tensor": tensor_file})
            cent_rows.append({"sample": i, "target": t,
                              "k_r": centroid.k_r, "k_v": centroid.k_v,
                              "k_theta": centroid.k_theta,
                              "n_members": centroid.n_members,
                              "mean_power": f"{centroid.mean_power:.10g}"})
    _write_index(os.path.join(out, "index.csv"),
                 ["sample", "target", "class_id", "tensor"], out_rows)
    _write_index(os.path.join(out, "centroids.csv"),
                 ["sample", "target", "k_r", "k_v", "k_theta", "n_members",
                  "mean_power"], cent_rows)
    if results:
        report.power_map_figure(results[0].power,
                                os.path.join(out, "rd_power_0000.png"),
                                centroids=results[0].centroids)
    print(f"process: {len(out_rows)} targets from {len(index)} samples -> {out}")
    return 0


def cmd_mds(args) -> int:
    rc = load_config(args.config)
    in_dir = _require_dir(args.in_dir, "process output")
    out = _out_dir(args)
    index = _read_index(os.path.join(in_dir, "index.csv"))
    _write_text(os.path.join(out, "config.txt"), config_text(rc))

    def transform(row):
        bbox, _ = container.read_tensor(os.path.join(in_dir, row["tensor"]))
        tensor = mds.build_mds(bbox.astype(np.complex128), rc.stft)
        return mds.reduce_dim(tensor, norm_mode=rc.norm_mode)

    reduced = _map_ordered(transform, index, args.threads)
    rows = []
    for row, red in zip(index, reduced):
        i, t = int(row["sample"]), int(row["target"])
        tensor_file = f"mds_{i:04d}_{t:02d}.tensor"
        container.write_tensor(os.path.join(out, tensor_file), red,
                               axes=("cell_bin", "freq", "frame"))
        best_bin = int(np.argmax(red.sum(axis=(1, 2))))
        images.write_pgm(
            os.path.join(out, f"mds_{i:04d}_{t:02d}_preview.pgm"),
            images.to_uint8(red[best_bin]))
        rows.append({"sample": i, "target": t, "class_id": row["class_id"],
                     "tensor": tensor_file})
    _write_index(os.path.join(out, "index.csv"),
                 ["sample", "target", "class_id", "tensor"], rows)
    if reduced:
        best = int(np.argmax(reduced[0].sum(axis=(1, 2))))
        report.spectrogram_figure(reduced[0][best],
                                  os.path.join(out, "spectrogram_0000.png"))
    print(f"mds: {len(rows)} tensors -> {out}")
    return 0


def _load_mds_dataset(in_dir: str):
    index = _read_index(os.path.join(in_dir, "index.csv"))
    if not index:
        raise UsageError(f"empty index in {in_dir}")
    xs, labels = [], []
    for row in index:
        arr, _ = container.read_tensor(os.path.join(in_dir, row["tensor"]))
        xs.append(arr.astype(np.float64))
        labels.append(int(row["class_id"]))
    return index, xs, labels


def cmd_train(args) -> int:
    rc = load_config(args.config)
    in_dir = _require_dir(args.in_dir, "mds output")
    out = _out_dir(args)
    _, xs, labels = _load_mds_dataset(in_dir)
    cfg = rc.model_config()
    hyper = train.Hyper(eta=rc.train.eta, batch=rc.train.batch,
                        k_epoch=rc.train.k_epoch)
    seed = _seed_of(args, rc)
    rep = train.run_cv(xs, labels, cfg, hyper, rc.train.k_fold, seed)
    nn.save_checkpoint(os.path.join(out, "checkpoint.tensor"),
                       rep.best_params, cfg)
    _write_text(os.path.join(out, "report.txt"), train.report_text(rep))
    _write_text(os.path.join(out, "loss_traces.csv"),
                train.loss_trace_csv(rep))
    report.loss_curves_figure(rep.loss_traces,
                              os.path.join(out, "loss_curves.png"))
    plan = train.kfold_split(len(labels), rc.train.k_fold, seed)
    va = plan.val_indices(rep.best_fold)
    result = train.evaluate(rep.best_params, [xs[i] for i in va],
                            [labels[i] for i in va], cfg)
    _write_text(os.path.join(out, "confusion_val.csv"),
                train.confusion_csv(result))
    report.confusion_figure(result.matrix,
                            os.path.join(out, "confusion_val.png"))
    print(train.report_text(rep), end="")
    print(f"train: checkpoint and report -> {out}")
    return 0


def cmd_eval(args) -> int:
    rc = load_config(args.config)
    in_dir = _require_dir(args.in_dir, "mds output")
    out = _out_dir(args)
    if not os.path.isfile(args.model):
        raise UsageError(f"checkpoint not found: {args.model}")
    params, cfg = nn.load_checkpoint(args.model)
    _, xs, labels = _load_mds_dataset(in_dir)
    result = train.evaluate(params, xs, labels, cfg)
    lines = ["metric,value", f"accuracy,{result.accuracy:.6f}",
             f"n_samples,{result.n_samples}"]
    for k in range(cfg.k_tar):
        counts = result.class_counts(k)
        for name in ("TP", "FP", "FN", "TN"):
            lines.append(f"class{k}_{name},{counts[name]}")
    _write_text(os.path.join(out, "metrics.csv"), "\n".join(lines) + "\n")
    _write_text(os.path.join(out, "confusion.csv"),
                train.confusion_csv(result))
    report.confusion_figure(result.matrix, os.path.join(out, "confusion.png"))
    print(f"eval: accuracy = {result.accuracy:.4f} over "
          f"{result.n_samples} samples -> {out}")
    return 0


def cmd_explain(args) -> int:
    rc = load_config(args.config)
    in_dir = _require_dir(args.in_dir, "mds output")
    out = _out_dir(args)
    if not os.path.isfile(args.model):
        raise UsageError(f"checkpoint not found: {args.model}")
    params, cfg = nn.load_checkpoint(args.model)
    index, xs, labels = _load_mds_dataset(in_dir)
    if not 0 <= args.sample < len(xs):
        raise UsageError(f"--sample {args.sample} outside 0..{len(xs) - 1}")
    x = xs[args.sample]
    grid = (rc.pipeline.n_res_s, rc.pipeline.n_res_theta)
    class_k = args.class_k
    if class_k is None:
        class_k = nn.predict(params, x, cfg)
    block = args.block if args.block is not None else cfg.n_blocks
    rel = xai.grad_cam(params, x, cfg, class_k, grid, block=block)
    base = os.path.join(out, f"explain_{args.sample:04d}")
    paths = xai.render_overlay(x, rel, base)
    _write_text(base + "_relevance.csv", xai.relevance_csv(rel))
    report.relevance_figure(
        xai.token_energy(x).reshape(grid), rel.spatial, base + ".png")
    if args.attention:
        maps = xai.attention_maps(params, x, cfg)
        lines = ["block,head,query,key,weight"]
        for b, m in enumerate(maps):
            for h in range(m.shape[0]):
                for q in range(m.shape[1]):
                    for kk in range(m.shape[2]):
                        lines.append(f"{b},{h},{q},{kk},{m[h, q, kk]:.10g}")
        _write_text(base + "_attention.csv", "\n".join(lines) + "\n")
    print(f"explain: sample {args.sample}, class {class_k}, block "
          f"{rel.block} -> {paths['overlay']}")
    return 0


def _selftest_config() -> RunConfig:
    """A miniature configuration so the whole chain runs in seconds."""
    from dataclasses import replace

    rc = RunConfig()
    radar = replace(rc.radar, F_s=1e6, M_c=32, N_theta=32, K_frame=4)
    pipeline = replace(rc.pipeline, n_res_s=4, n_res_theta=4,
                       cfar_train=4, cfar_guard=1)
    stft = mds.StftParams(window=32, n_overlap=29, n_fft=32)
    model = replace(rc.model, n_emb=16, n_heads=2, n_blocks=1, k_tar=2)
    tr = replace(rc.train, batch=4, k_epoch=2, k_fold=2)
    return RunConfig(radar=radar, pipeline=pipeline, stft=stft,
                     norm_mode=rc.norm_mode, model=model, train=tr)


def cmd_selftest(args) -> int:
    out = _out_dir(args)
    rc = _selftest_config()
    rc.validate()
    seed = args.seed if args.seed is not None else 7
    checks: list[str] = []

    def check(name: str, ok: bool, detail: str = "") -> None:
        checks.append(f"{'ok' if ok else 'FAIL'} {name}{' ' + detail if detail else ''}")
        if not ok:
            raise RuntimeError(f"selftest check failed: {name} {detail}")

    # stage 1: simulate a tiny dataset and round-trip it through the container
    templates = list(scene.DEFAULT_TEMPLATES.values())[:rc.model.k_tar]
    dataset = scene.sample_dataset(rc.radar, templates, 8, seed)
    _write_text(os.path.join(out, "config.txt"), config_text(rc))
    adc_path = os.path.join(out, "adc_0000.tensor")
    container.write_tensor(adc_path, dataset[0][1],
                           axes=("frame", "fast_time", "slow_time", "tx", "rx"))
    back, _ = container.read_tensor(adc_path)
    check("container-roundtrip",
          np.array_equal(back, dataset[0][1].astype(np.complex64)))
    _write_text(os.path.join(out, "scene_0000.txt"),
                scene.scene_to_text(dataset[0][0]))

    # stage 2: detection chain recovers the planted target
    sc0 = dataset[0][0]
    det = rva.process_sample(dataset[0][1], rc.radar, rc.pipeline)
    check("detect-count", len(det.centroids) >= 1,
          f"({len(det.centroids)} centroids)")
    truth_r = scene.range_to_bin(sc0.tracks[0].r0, rc.radar)
    best = min(det.centroids, key=lambda c: abs(c.k_r - truth_r))
    check("detect-range", abs(best.k_r - truth_r) <= 2.0,
          f"(bin {best.k_r} vs {truth_r:.1f})")
    cent_rows = [{"sample": 0, "target": t, "k_r": c.k_r, "k_v": c.k_v,
                  "k_theta": c.k_theta, "n_members": c.n_members,
                  "mean_power": f"{c.mean_power:.10g}"}
                 for t, c in enumerate(det.centroids)]
    _write_index(os.path.join(out, "centroids.csv"),
                 ["sample", "target", "k_r", "k_v", "k_theta", "n_members",
                  "mean_power"], cent_rows)
    report.power_map_figure(det.power, os.path.join(out, "rd_power.png"),
                            centroids=det.centroids)

    # stage 3: spectrograms for the whole dataset
    xs, labels = [], []
    for sc, frames, class_id in dataset:
        sample_det = rva.process_sample(frames, rc.radar, rc.pipeline)
        check("detect-any", len(sample_det.centroids) >= 1)
        strongest = max(sample_det.centroids, key=lambda c: c.mean_power)
        idx = sample_det.centroids.index(strongest)
        tensor = mds.build_mds(sample_det.bboxes[idx], rc.stft)
        xs.append(mds.reduce_dim(tensor, norm_mode=rc.norm_mode))
        labels.append(class_id)
    check("mds-shape", xs[0].shape == (16, 32, 32), f"{xs[0].shape}")
    check("mds-finite", all(np.all(np.isfinite(x)) for x in xs))
    container.write_tensor(os.path.join(out, "mds_0000.tensor"), xs[0],
                           axes=("cell_bin", "freq", "frame"))
    images.write_pgm(os.path.join(out, "mds_0000_preview.pgm"),
                     images.to_uint8(xs[0][int(np.argmax(xs[0].sum(axis=(1, 2))))]))
    report.spectrogram_figure(xs[0][0], os.path.join(out, "spectrogram.png"))

    # stage 4: a short training run and its artifacts
    cfg = rc.model_config()
    hyper = train.Hyper(eta=rc.train.eta, batch=rc.train.batch,
                        k_epoch=rc.train.k_epoch)
    rep = train.run_cv(xs, labels, cfg, hyper, rc.train.k_fold, seed)
    check("train-finite",
          all(np.isfinite(v).all() for v in rep.best_params.values()))
    nn.save_checkpoint(os.path.join(out, "checkpoint.tensor"),
                       rep.best_params, cfg)
    params2, cfg2 = nn.load_checkpoint(os.path.join(out, "checkpoint.tensor"))
    check("checkpoint-roundtrip",
          all(np.array_equal(params2[k], rep.best_params[k]) for k in params2))
    _write_text(os.path.join(out, "report.txt"), train.report_text(rep))
    _write_text(os.path.join(out, "loss_traces.csv"), train.loss_trace_csv(rep))
    report.loss_curves_figure(rep.loss_traces,
                              os.path.join(out, "loss_curves.png"))

    # stage 5: evaluation identities on the full set
    result = train.evaluate(rep.best_params, xs, labels, cfg)
    check("confusion-total", int(result.matrix.sum()) == len(labels))
    counts = result.class_counts(0)
    check("confusion-partition", sum(counts.values()) == len(labels))
    _write_text(os.path.join(out, "confusion.csv"), train.confusion_csv(result))
    report.confusion_figure(result.matrix, os.path.join(out, "confusion.png"))

    # stage 6: relevance maps and image output
    grid = (rc.pipeline.n_res_s, rc.pipeline.n_res_theta)
    rel = xai.grad_cam(rep.best_params, xs[0], cfg, labels[0], grid)
    check("gradcam-nonnegative", bool((rel.tokens >= 0).all()))
    paths = xai.render_overlay(xs[0], rel, os.path.join(out, "explain_0000"))
    _write_text(os.path.join(out, "explain_0000_relevance.csv"),
                xai.relevance_csv(rel))
    check("overlay-files", all(os.path.isfile(p) for p in paths.values()))

    _write_text(os.path.join(out, "selftest.txt"), "\n".join(checks) + "\n")
    for line in checks:
        print(line)
    print(f"selftest: {len(checks)} checks passed -> {out}")
    return 0


# --- argument parsing ------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, needs_in: bool = False,
                needs_model: bool = False) -> None:
    p.add_argument("--config", default="default",
                   help="config file path or the literal 'default'")
    p.add_argument("--seed", type=int, default=None,
                   help="override train.seed from the config")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("MDSLAB_THREADS", "1")),
                   help="worker thread cap (env MDSLAB_THREADS)")
    if needs_in:
        p.add_argument("--in", dest="in_dir", required=True,
                       help="input artifact directory from the previous stage")
    if needs_model:
        p.add_argument("--model", required=True,
                       help="checkpoint file from the train stage")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdslab",
        description="FMCW radar micro-Doppler simulation, processing, "
                    "classification and explanation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize labeled ADC samples")
    _add_common(p)
    p.add_argument("--count", type=int, default=12,
                   help="number of samples to generate")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("process", help="detect targets, crop RVA cubes")
    _add_common(p, needs_in=True)
    p.set_defaults(fn=cmd_process)

    p = sub.add_parser("mds", help="spectrogram tensors from cropped cubes")
    _add_common(p, needs_in=True)
    p.set_defaults(fn=cmd_mds)

    p = sub.add_parser("train", help="k-fold cross-validation training")
    _add_common(p, needs_in=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_common(p, needs_in=True, needs_model=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("explain", help="relevance maps for one sample")
    _add_common(p, needs_in=True, needs_model=True)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--class-k", type=int, default=None,
                   help="target class (default: predicted class)")
    p.add_argument("--block", type=int, default=None,
                   help="1-based transformer block (default: last)")
    p.add_argument("--attention", action="store_true",
                   help="also export raw attention weights as CSV")
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("axes", help="print derived axis constants")
    _add_common(p)
    p.set_defaults(fn=cmd_axes)

    p = sub.add_parser("selftest", help="deterministic end-to-end micro-run")
    _add_common(p)
    p.set_defaults(fn=cmd_selftest)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.fn(args)
    except (ConfigError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError, ValueError, FloatingPointError,
            container.ContainerError) as err:
        print(f"runtime error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
