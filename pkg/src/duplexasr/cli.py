"""Command-line entry points.

Subcommands: synth | train | decode | average | verify | eval. Every
command resolves its configuration (defaults <- --config file <- --set
overrides), echoes the resolved form into the output directory, and
uses exit codes 0 (success), 1 (verification or quality failure),
2 (usage/config error), 3 (I/O error).
"""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from .config import resolve_config
from .decode import DecodeConfig, corpus_cer, decode_utterance
from .errors import IngestError, UsageError
from .frontend import generate_synthetic_corpus, load_manifest, save_manifest
from .model import Model
from .numerics import rng_for
from .train import (
    TrainingDiverged,
    average_checkpoints,
    load_model_from_checkpoint,
    run_training,
    select_top_k,
)
from .verify import SUITES, run_suites


def _echo_config(cfg, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "config.resolved"), "w") as f:
        f.write(cfg.render())


def cmd_synth(args) -> int:
    cfg = resolve_config(args.config, args.set or [])
    _echo_config(cfg, args.out)
    rng = rng_for(cfg.seed, "synth")
    utts = generate_synthetic_corpus(
        n_utts=cfg.synth.n_utts,
        vocab=cfg.synth.vocab,
        t_range=(cfg.synth.t_min, cfg.synth.t_max),
        rng=rng,
        feat_dim=cfg.synth.feat_dim,
        noise=cfg.synth.noise,
        template_seed=cfg.seed,
    )
    manifest = os.path.join(args.out, "manifest.tsv")
    save_manifest(manifest, utts, os.path.join(args.out, "feats"))
    frames = sum(u.features.shape[0] for u in utts)
    tokens = sum(len(u.tokens) for u in utts)
    print(
        f"wrote {len(utts)} utterances ({frames} frames, {tokens} tokens, "
        f"vocab {cfg.synth.vocab}) to {manifest}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args.set or [])
    _echo_config(cfg, args.run_dir)
    corpus = load_manifest(args.manifest, vocab=cfg.model.vocab)
    if not corpus:
        raise UsageError("manifest is empty, nothing to train on")
    feat_dim = corpus[0].features.shape[1]
    if feat_dim != cfg.model.feat_dim:
        raise UsageError(
            f"corpus feature dim {feat_dim} != model.feat_dim {cfg.model.feat_dim}"
        )
    model = Model(cfg.model, seed=cfg.seed)
    result = run_training(
        model,
        corpus,
        cfg.train,
        cfg.chunk,
        args.run_dir,
        specsub_cfg=cfg.specsub,
        specaug_cfg=cfg.specaug,
        resume_from=args.resume,
        log_stream=sys.stderr if args.verbose else None,
    )
    print(f"final checkpoint:    {result['final']}")
    print(f"averaged checkpoint: {result['averaged']}")
    print(f"training log:        {result['log']}")
    return 0


def _hyp_fields(hyp) -> str:
    tokens = " ".join(str(t) for t in hyp.tokens)
    return (
        f"{tokens}\t{hyp.s_ctc:.6f}\t{hyp.s_l2r:.6f}"
        f"\t{hyp.s_r2l:.6f}\t{hyp.s_final:.6f}"
    )


def cmd_decode(args) -> int:
    cfg = resolve_config(args.config, args.set or [])
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    _echo_config(cfg, out_dir)
    model, _, _ = load_model_from_checkpoint(args.checkpoint)
    corpus = load_manifest(args.manifest, vocab=model.cfg.vocab)
    dcfg: DecodeConfig = cfg.decode.validate()

    def one(utt):
        return decode_utterance(model, utt.features, dcfg)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(one, corpus))
    else:
        results = [one(u) for u in corpus]

    nbest_lines = []
    with open(args.out, "w") as f:
        for utt, (best, nbest) in zip(corpus, results):
            f.write(f"{utt.id}\t{_hyp_fields(best)}\n")
            if nbest is not None:
                for rank, h in enumerate(nbest):
                    nbest_lines.append(f"{utt.id}\t{rank}\t{_hyp_fields(h)}\n")
    if args.nbest:
        with open(args.nbest, "w") as f:
            f.writelines(nbest_lines)
    rate, edits, ref_len, flagged = corpus_cer(
        (utt.id, utt.tokens, results[i][0].tokens) for i, utt in enumerate(corpus)
    )
    print(f"decoded {len(corpus)} utterances -> {args.out}")
    print(f"corpus CER {100.0 * rate:.2f}% ({edits} edits / {ref_len} ref tokens)")
    for utt_id in flagged:
        print(f"warning: empty reference for {utt_id}; its edits are insertions")
    return 0


def cmd_average(args) -> int:
    if args.from_run:
        ckpt_dir = os.path.join(args.from_run, "checkpoints")
        entries = []
        from .model.checkpoint import load_checkpoint

        for name in sorted(os.listdir(ckpt_dir)):
            if not name.startswith("step-"):
                continue
            path = os.path.join(ckpt_dir, name)
            _, meta = load_checkpoint(path)
            entries.append((path, float(meta["validation_loss"]), int(meta["step"])))
        paths = select_top_k(entries, args.top_k)
    else:
        paths = args.checkpoints
        if not paths:
            raise UsageError("average needs checkpoint paths or --from-run")
    tensors, meta = average_checkpoints(paths)
    meta = dict(meta)
    meta["averaged_from"] = ",".join(os.path.basename(p) for p in paths)
    from .model.checkpoint import save_checkpoint

    save_checkpoint(args.out, tensors, meta)
    print(f"averaged {len(paths)} checkpoints -> {args.out}")
    return 0


def cmd_verify(args) -> int:
    names = args.suites.split(",") if args.suites else None
    results = run_suites(names, inject=args.inject_fault)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(r.line())
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return 1 if failed else 0


def cmd_eval(args) -> int:
    refs = {u.id: u.tokens for u in load_manifest(args.ref)}
    hyps = {}
    try:
        with open(args.hyp) as f:
            for line in f:
                parts = line.rstrip("\n").split("\t")
                if parts and parts[0]:
                    hyps[parts[0]] = [int(t) for t in parts[1].split()] if parts[1] else []
    except OSError as e:
        raise IngestError(f"cannot read transcript {args.hyp}: {e}") from e
    missing = sorted(set(refs) - set(hyps))
    if missing:
        raise UsageError(f"transcript is missing utterances: {missing[:5]} ...")
    rate, edits, ref_len, flagged = corpus_cer(
        (utt_id, refs[utt_id], hyps[utt_id]) for utt_id in refs
    )
    print(f"corpus CER {100.0 * rate:.2f}% ({edits} edits / {ref_len} ref tokens)")
    for utt_id in flagged:
        print(f"warning: empty reference for {utt_id}; its edits are insertions")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duplexasr",
        description="desk-scale streaming/non-streaming ASR lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument(
            "--set", action="append", metavar="KEY=VALUE",
            help="config override (repeatable, last wins)",
        )

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--out", required=True, help="output corpus directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode a manifest with a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="transcript output path")
    p.add_argument("--nbest", help="also dump all candidates with scores")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("average", help="average checkpoints")
    p.add_argument("checkpoints", nargs="*", help="explicit checkpoint paths")
    p.add_argument("--from-run", help="pick top-k by validation loss from a run dir")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_average)

    p = sub.add_parser("verify", help="run the oracle suites")
    p.add_argument("--suites", help=f"comma-separated subset of: {','.join(SUITES)}")
    p.add_argument(
        "--inject-fault", choices=["right_mask"],
        help="deliberately break a component to prove the suites catch it",
    )
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", help="score a transcript against a manifest")
    p.add_argument("--ref", required=True, help="reference manifest")
    p.add_argument("--hyp", required=True, help="transcript file from decode")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except IngestError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
