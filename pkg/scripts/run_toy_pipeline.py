"""End-to-end workout on the synthetic toy world.

Builds corpora and pools, fine-tunes a small model, runs one round of
cycle training, then decodes and scores the held-out set in both
directions. Finishes in a few minutes on a laptop CPU.
"""

import argparse
import subprocess
import sys
from pathlib import Path

from gtcycle.corpus import save_graph_pool, save_parallel_tsv, save_text_pool
from gtcycle.graph_codec import linearize_graph
from gtcycle.toydata import build_toy_world


def sh(*args: str) -> None:
    print("+ gtcycle", " ".join(args))
    subprocess.run([sys.executable, "-m", "gtcycle.cli", *args], check=True)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="toy_run", help="working directory")
    parser.add_argument("--seed", type=int, default=13)
    parser.add_argument("--epochs", type=int, default=120)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = build_toy_world(n_train=48, n_held_out=12, n_pool=64, seed=args.seed)
    save_parallel_tsv(out / "train.tsv", world.train)
    save_parallel_tsv(out / "held.tsv", world.held_out)
    save_text_pool(out / "pool_texts.txt", list(world.pools.texts))
    save_graph_pool(out / "pool_graphs.txt", list(world.pools.graphs))
    (out / "held_graphs.txt").write_text(
        "".join(linearize_graph(e.graph) + "\n" for e in world.held_out),
        encoding="utf-8",
    )
    (out / "held_texts.txt").write_text(
        "".join(e.text + "\n" for e in world.held_out), encoding="utf-8"
    )

    model_flags = [
        "--d-model", "64", "--n-heads", "4", "--n-layers-enc", "2",
        "--n-layers-dec", "2", "--d-ff", "128", "--max-len", "48",
        "--vocab-size", "64",
    ]
    sh(
        "train", "--data", str(out / "train.tsv"), "--out", str(out / "sft"),
        "--lr-finetune", "1e-3", "--max-epochs-finetune", str(args.epochs),
        "--patience", "20", "--val-fraction", "0", "--batch-size", "8",
        "--accumulation-steps", "1", "--seed", str(args.seed), *model_flags,
    )
    sh(
        "cycle", "--checkpoint", str(out / "sft" / "model.ckpt"),
        "--vocab", str(out / "sft" / "vocab.txt"),
        "--texts", str(out / "pool_texts.txt"),
        "--graphs", str(out / "pool_graphs.txt"),
        "--supervised", str(out / "train.tsv"),
        "--supervised-fraction", "0.25",
        "--out", str(out / "cycle"), "--cycle-steps", "2",
        "--max-epochs-cycle", "3", "--synthetic-per-iteration", "16",
        "--batch-size", "8", "--accumulation-steps", "1", "--max-len", "48",
        "--val-fraction", "0", "--seed", str(args.seed),
    )
    for stage in ("sft", "cycle"):
        vocab = out / "sft" / "vocab.txt"
        ckpt = out / stage / "model.ckpt"
        sh(
            "generate", "--checkpoint", str(ckpt), "--vocab", str(vocab),
            "--input", str(out / "held_graphs.txt"),
            "--out", str(out / f"{stage}_gen.txt"),
        )
        sh(
            "parse", "--checkpoint", str(ckpt), "--vocab", str(vocab),
            "--input", str(out / "held_texts.txt"),
            "--out", str(out / f"{stage}_parsed.txt"),
        )
        print(f"--- {stage}: graph-to-text ---")
        sh(
            "eval", "--task", "g2t", "--data", str(out / "held.tsv"),
            "--hyp", str(out / f"{stage}_gen.txt"),
        )
        print(f"--- {stage}: text-to-graph ---")
        sh(
            "eval", "--task", "t2g", "--data", str(out / "held.tsv"),
            "--hyp", str(out / f"{stage}_parsed.txt"),
        )


if __name__ == "__main__":
    main()
