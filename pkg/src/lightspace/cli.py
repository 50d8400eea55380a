"""Command-line surface orchestrating the pipeline.

Exit codes: 0 success, 1 usage error, 2 data or format error. Every
command takes --seed; all randomness derives from it.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import encoder as enc
from . import envmap, evalkit, io, learn, lights, sh, tonemap, toydata

RADIANCE_SUFFIXES = (".hdr", ".pfm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(parser):
    parser.add_argument("--config", type=Path, default=None, help="pipeline config JSON")
    parser.add_argument("--seed", type=int, default=0, help="seed for all randomness")


def build_parser() -> _Parser:
    parser = _Parser(prog="lightspace", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("dataset", help="panorama dir -> crops, encodings, lights, SH ground truth")
    p.add_argument("panoramas", type=Path, help="directory of .hdr/.pfm panoramas")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--jobs", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("fit-sh", help="fit degree-3 SH coefficients to a panorama")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_fit_sh)

    p = sub.add_parser("render-sh", help="render SH coefficients to a panorama")
    p.add_argument("input", type=Path, help="SH document JSON")
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--out", type=Path, required=True, help=".pfm or .hdr output")
    _add_common(p)
    p.set_defaults(func=cmd_render_sh)

    p = sub.add_parser("detect-lights", help="dominant light sources of a panorama")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_detect_lights)

    p = sub.add_parser("train", help="train fusion encoders on the synthetic planted-light set")
    p.add_argument("--toy", type=int, default=256, help="number of synthetic samples")
    p.add_argument("--steps", type=int, default=None, help="override config steps")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="encode payloads into an embedding store")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--modality", choices=enc.MODALITIES, required=True)
    p.add_argument("--input", type=Path, required=True, help="dir of maps/images, or text file")
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval-retrieval", help="cross-modal retrieval report from stores")
    p.add_argument("--stores", type=Path, nargs="+", required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("rotate-exp", help="rotation-similarity curves for panoramas")
    p.add_argument("inputs", type=Path, nargs="+")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_rotate_exp)

    p = sub.add_parser("eval-render", help="full-reference metrics for rendered maps")
    p.add_argument("--pred", type=Path, required=True, help="directory of predicted PNGs")
    p.add_argument("--gt", type=Path, required=True, help="directory of reference PNGs")
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval_render)

    return parser


def _load_config(args) -> io.PipelineConfig:
    if getattr(args, "config", None):
        return io.PipelineConfig.load(args.config)
    return io.PipelineConfig()


def _radiance_files(directory: Path) -> list[Path]:
    if directory.is_file():
        return [directory]
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in RADIANCE_SUFFIXES)
    if not files:
        raise io.FormatError(f"no .hdr/.pfm panoramas in {directory}")
    return files


def _process_panorama(path: Path, out_dir: Path, config: io.PipelineConfig) -> None:
    stem = path.stem
    radiance = envmap.validate_map(io.load_radiance_map(path))
    tm = config.tonemap
    for spec, crop in envmap.crops_from_panorama(radiance, fov=config.crop.fov, size=config.crop.size):
        ldr = tonemap.reinhard_tonemap(crop, key=tm.key, gamma=tm.gamma)
        io.save_ldr_image(out_dir / f"{stem}_crop_{int(spec.yaw) % 360:03d}.png", ldr)
    io.save_ldr_image(out_dir / f"{stem}_envmap_ldr.png", tonemap.reinhard_tonemap(radiance, tm.key, tm.gamma))
    io.save_ldr_image(out_dir / f"{stem}_envmap_log.png", tonemap.log_encode(radiance, tm.i_max).data)
    io.save_pfm(out_dir / f"{stem}_directions.pfm", envmap.direction_map(radiance.shape[1], radiance.shape[0]))
    detected = lights.detect_lights(radiance, config.lights)
    io.save_lights(out_dir / f"{stem}_lights.json", detected, lights.find_threshold(radiance, config.lights))
    io.save_sh_document(out_dir / f"{stem}_sh.json", sh.fit_sh(radiance))


def cmd_dataset(args) -> int:
    config = _load_config(args)
    files = _radiance_files(args.panoramas)
    args.out.mkdir(parents=True, exist_ok=True)
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_process_panorama, f, args.out, config) for f in files]
            for fut in futures:
                fut.result()
    else:
        for f in files:
            _process_panorama(f, args.out, config)
    print(f"processed {len(files)} panoramas into {args.out}")
    return 0


def cmd_fit_sh(args) -> int:
    radiance = envmap.validate_map(io.load_radiance_map(args.input))
    io.save_sh_document(args.out, sh.fit_sh(radiance))
    print(f"wrote {args.out}")
    return 0


def cmd_render_sh(args) -> int:
    coeffs = io.load_sh_document(args.input)
    rendered = np.maximum(sh.render_sh(coeffs, args.width, args.height), 0.0)  # clamp on export
    io.save_radiance_map(args.out, rendered)
    print(f"wrote {args.out}")
    return 0


def cmd_detect_lights(args) -> int:
    config = _load_config(args)
    radiance = envmap.validate_map(io.load_radiance_map(args.input))
    detected = lights.detect_lights(radiance, config.lights)
    io.save_lights(args.out, detected, lights.find_threshold(radiance, config.lights))
    print(f"found {len(detected)} lights -> {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    learn_cfg = config.learn
    learn_cfg.seed = args.seed
    if args.steps is not None:
        learn_cfg.steps = args.steps
    toy = toydata.make_toy_samples(args.toy, seed=args.seed)
    samples = toydata.to_training_samples(toy, stub_seed=args.seed)
    params = enc.init_params(config.encoder, seed=args.seed)
    result = learn.train(samples, learn_cfg, params)
    args.out.mkdir(parents=True, exist_ok=True)
    io.save_checkpoint(args.out / "checkpoint.bin", result.params, stub_seed=args.seed)
    learn.write_loss_log(args.out / "loss.csv", result.log)
    print(f"final loss {result.log[-1][3]:.4f} after {learn_cfg.steps} steps -> {args.out}")
    return 0


def _embed_payloads(args, config, params, stub_seed):
    tm = config.tonemap
    seed = enc.modality_seed(stub_seed, args.modality)
    if args.modality == "text":
        lines = [ln.strip() for ln in args.input.read_text().splitlines() if ln.strip()]
        if not lines:
            raise io.FormatError(f"no captions in {args.input}")
        ids = [f"line-{i:04d}" for i in range(len(lines))]
        feats = [enc.stub_backbone(text, seed, modality="text") for text in lines]
    elif args.modality == "envmap":
        files = _radiance_files(args.input)
        ids = [f.stem for f in files]
        feats = []
        for f in files:
            payload = enc.envmap_payload(
                envmap.validate_map(io.load_radiance_map(f)), key=tm.key, gamma=tm.gamma, i_max=tm.i_max
            )
            feats.append(enc.stub_backbone(payload, seed, modality="envmap"))
    else:
        files = sorted(args.input.glob("*.png"))
        if not files:
            raise io.FormatError(f"no .png images in {args.input}")
        ids = [f.stem for f in files]
        feats = [
            enc.stub_backbone(io.load_ldr_image(f), seed, modality=args.modality) for f in files
        ]
    embeddings = [
        enc.fusion_forward(params.fusion[args.modality], f, params.config).tokens for f in feats
    ]
    return np.stack(embeddings), ids


def cmd_embed(args) -> int:
    config = _load_config(args)
    params, stub_seed = io.load_checkpoint(args.checkpoint)
    embeddings, ids = _embed_payloads(args, config, params, stub_seed)
    io.save_embedding_store(args.out, embeddings.astype(np.float32), ids, args.modality)
    print(f"embedded {len(ids)} {args.modality} payloads -> {args.out}")
    return 0


def cmd_eval_retrieval(args) -> int:
    if len(args.stores) < 2:
        raise UsageError("eval-retrieval needs at least two stores")
    embeddings, ids = {}, {}
    for store in args.stores:
        data, store_ids, modality = io.load_embedding_store(store)
        if modality in embeddings:
            raise io.FormatError(f"duplicate modality {modality!r} among stores")
        embeddings[modality] = data
        ids[modality] = store_ids
    report = evalkit.cross_modal_report(embeddings, ids=ids, ks=tuple(_load_config(args).eval.recall_ks))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with io.atomic_write(args.out_dir / "retrieval.csv", "w") as fh:
        fh.write(report.to_csv())
    with io.atomic_write(args.out_dir / "retrieval.json", "w") as fh:
        fh.write(report.to_json())
    print(f"average: {report.average.format_row()}")
    return 0


def cmd_rotate_exp(args) -> int:
    config = _load_config(args)
    params, stub_seed = io.load_checkpoint(args.checkpoint)
    tm = config.tonemap
    seed = enc.modality_seed(stub_seed, "envmap")

    def encode(radiance):
        payload = enc.envmap_payload(radiance, key=tm.key, gamma=tm.gamma, i_max=tm.i_max)
        feats = enc.stub_backbone(payload, seed, modality="envmap")
        return enc.fusion_forward(params.fusion["envmap"], feats, params.config)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for path in args.inputs:
        radiance = envmap.validate_map(io.load_radiance_map(path))
        curve = evalkit.rotation_curve(encode, radiance)
        out = args.out_dir / f"{path.stem}_rotation.csv"
        with io.atomic_write(out, "w") as fh:
            fh.write(evalkit.rotation_curve_csv(curve))
        print(f"wrote {out}")
    return 0


def cmd_eval_render(args) -> int:
    pred_files = {p.name: p for p in sorted(args.pred.glob("*.png"))}
    gt_files = {p.name: p for p in sorted(args.gt.glob("*.png"))}
    shared = sorted(set(pred_files) & set(gt_files))
    if not shared:
        raise io.FormatError("no matching .png filenames between --pred and --gt")
    names = ["psnr", "rmse", "si_rmse", "ssim", "mae"]
    rows = []
    for name in shared:
        metrics = evalkit.image_metrics(
            io.load_ldr_image(pred_files[name]), io.load_ldr_image(gt_files[name])
        )
        rows.append([name] + [metrics[k] for k in names])
    with io.atomic_write(args.out, "w") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file"] + names)
        for row in rows:
            writer.writerow([row[0]] + [f"{v:.6f}" if math.isfinite(v) else "inf" for v in row[1:]])
        finite = np.array([[v for v in row[1:]] for row in rows], dtype=np.float64)
        means = finite.mean(axis=0)
        writer.writerow(["AVERAGE"] + [f"{v:.6f}" if math.isfinite(v) else "inf" for v in means])
    print(f"wrote {args.out} ({len(rows)} pairs)")
    return 0


def run_cli(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            raise UsageError("a subcommand is required")
    except UsageError as err:
        print(parser.format_usage(), file=sys.stderr, end="")
        print(f"error: {err}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (io.FormatError, io.ConfigError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))
