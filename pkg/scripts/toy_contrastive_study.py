#!/usr/bin/env python3
"""Desk-scale contrastive study on the synthetic planted-light set.

Trains the fusion encoders on aligned four-modality samples, then reports
held-out cross-modal retrieval (averaged over all bidirectional pairs)
against the untrained baseline.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from lightspace import encoder, evalkit, io, learn, toydata


def toy_encoder_config() -> encoder.EncoderConfig:
    return encoder.EncoderConfig(tokens=8, embed_dim=128, model_dim=64, heads=4, head_hidden=128)


def toy_learn_config(seed: int, steps: int, sh_loss_weight: float = 1.0) -> learn.LearnConfig:
    return learn.LearnConfig(
        temperature=0.07,
        learning_rate=1e-3,
        batch_size=32,
        steps=steps,
        seed=seed,
        sh_loss_weight=sh_loss_weight,
        log_dropout_prob=0.25,
    )


def run_study(samples=256, holdout=64, steps=800, seed=0, sh_loss_weight=1.0, quiet=False):
    """Train on `samples - holdout` items; returns dict of study artifacts."""
    toy = toydata.make_toy_samples(samples, seed=seed)
    train_set, eval_set = toy[:-holdout], toy[-holdout:]
    stub_seed = seed
    training = toydata.to_training_samples(train_set, stub_seed=stub_seed)
    config = toy_encoder_config()
    params = encoder.init_params(config, seed=seed)
    untrained = encoder.init_params(config, seed=seed + 1)

    before = evalkit.cross_modal_report(toydata.embed_samples(untrained, eval_set, stub_seed))
    start = time.time()
    result = learn.train(training, toy_learn_config(seed, steps, sh_loss_weight), params)
    elapsed = time.time() - start
    after = evalkit.cross_modal_report(toydata.embed_samples(result.params, eval_set, stub_seed))
    if not quiet:
        print(f"trained {steps} steps in {elapsed:.1f}s "
              f"(loss {result.log[0][3]:.3f} -> {result.log[-1][3]:.3f})")
        print(f"untrained: {before.average.format_row()}")
        print(f"trained:   {after.average.format_row()}")
    return {
        "params": result.params,
        "log": result.log,
        "eval_set": eval_set,
        "stub_seed": stub_seed,
        "untrained_r1": before.average.recall[1],
        "trained_r1": after.average.recall[1],
        "elapsed": elapsed,
        "report": after,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--samples", type=int, default=256)
    parser.add_argument("--holdout", type=int, default=64)
    parser.add_argument("--steps", type=int, default=800)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--sh-loss-weight", type=float, default=1.0)
    parser.add_argument("--out", type=Path, default=None, help="directory for checkpoint + loss log")
    args = parser.parse_args()
    study = run_study(args.samples, args.holdout, args.steps, args.seed, args.sh_loss_weight)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        io.save_checkpoint(args.out / "checkpoint.bin", study["params"], stub_seed=study["stub_seed"])
        learn.write_loss_log(args.out / "loss.csv", study["log"])
        with io.atomic_write(args.out / "retrieval.csv", "w") as fh:
            fh.write(study["report"].to_csv())
        print(f"artifacts -> {args.out}")


if __name__ == "__main__":
    main()
