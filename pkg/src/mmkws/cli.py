"""``mmkws`` command line: synth, mine, train, eval, spot, export-attn, bench.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Every command
writes its fully resolved configuration to stderr as one ``# config`` JSON
line before doing any work.  Configuration is layered: ``--config`` file
(``key = value`` lines) < ``MMKWS_<KEY>`` environment variables < flags.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import augmentation as aug
from . import evaluation as ev
from . import io as mio
from .config import ModelConfig, TrainConfig, config_hash, load_config_file, resolve
from .corpus import CorpusConfig, build_corpus, build_multiclass_episode, load_corpus, write_corpus
from .model import MMKWS

ARCH_KEYS = ("d", "heads", "enc_layers", "attn_layers", "gru_hidden", "subsample", "ff_mult",
             "conv_kernel", "phone_dim", "text_dim", "speech_dim", "n_mels", "freeze_support_speech")


class CliError(RuntimeError):
    """Runtime failure reported as ``error: ...`` with exit code 1."""


# --------------------------------------------------------------------------
# helpers


def _echo(command, resolved):
    print("# config " + json.dumps({"command": command, **resolved}, sort_keys=True, default=str),
          file=sys.stderr)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _check_out(path: Path, force: bool):
    if path.exists() and not force:
        raise CliError(f"{path} exists (use --force to overwrite)")


def _parse_sets(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise CliError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _layer(args):
    """(file values, explicit flag values) for the dataclass resolvers."""
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    file_values.update(_parse_sets(getattr(args, "set", None)))
    return file_values


def _explicit_arch(file_values, flags):
    """Architecture keys the user set anywhere (file, env or flag)."""
    out = {}
    for k in ARCH_KEYS:
        if k in file_values:
            out[k] = file_values[k]
        env = os.environ.get("MMKWS_" + k.upper())
        if env is not None:
            out[k] = env
        if flags.get(k) is not None:
            out[k] = flags[k]
    return resolve(ModelConfig, out, env={}) if out else None, set(out)


def model_flags(args):
    return {"d": args.d, "heads": args.heads, "enc_layers": args.enc_layers,
            "attn_layers": args.attn_layers, "gru_hidden": args.gru_hidden}


def load_model(path, expected: ModelConfig | None = None, keys=(), force=False):
    """Checkpoint -> (model, manifest); architecture conflicts need ``force``."""
    man, tensors = mio.load_checkpoint(path)
    cfg = ModelConfig(**man["config"])
    if expected is not None:
        diff = [f"{k}: checkpoint {getattr(cfg, k)!r}, requested {getattr(expected, k)!r}"
                for k in sorted(keys) if getattr(cfg, k) != getattr(expected, k)]
        if diff and not force:
            raise CliError("checkpoint architecture conflicts with the configuration "
                           "(use --force to trust the checkpoint):\n  " + "\n  ".join(diff))
    model = MMKWS(cfg, seed=0)
    problems = []
    for name, p in model.params.items():
        if name not in tensors:
            problems.append(f"{name}: expected {p.shape}, missing")
        elif tensors[name].shape != p.shape:
            problems.append(f"{name}: expected {p.shape}, found {tensors[name].shape}")
    problems += [f"{name}: unexpected tensor {t.shape}" for name, t in tensors.items()
                 if name not in model.params]
    if problems:
        raise mio.CheckpointError("checkpoint does not match its config:\n  " + "\n  ".join(problems))
    for name, p in model.params.items():
        p.data = tensors[name].copy()
    return model, man


def save_model(path, model: MMKWS, manifest):
    mio.save_checkpoint(path, {k: p.data for k, p in model.params.items()}, manifest)


def _assets(man):
    a = man.get("assets")
    if not a:
        raise CliError("checkpoint carries no lexicon/vocabulary assets")
    lex = aug.Lexicon({w: tuple(p) for w, p in a["lexicon"].items()}, list(a["phonemes"]))
    index = {w: i for i, w in enumerate(a["vocab"])}
    return lex, index


def _phrase(text):
    words = tuple(aug.normalize_word(w) for w in text.split())
    words = tuple(w for w in words if w)
    if not words:
        raise CliError("empty keyword")
    return words


# --------------------------------------------------------------------------
# commands


def cmd_resources(args):
    out = Path(args.out)
    _echo("resources", {"out": str(out), "n_words": args.n_words, "seed": args.seed, "dim": args.dim})
    out.mkdir(parents=True, exist_ok=True)
    lex = aug.make_toy_lexicon(args.n_words, seed=args.seed)
    lex.save(out / "lexicon.tsv")
    mio.save_vocab(out / "words.txt", lex.words)
    aug.make_toy_semantic_table(lex.words, dim=args.dim, seed=args.seed).save(out / "semantic.txt")
    return 0


def cmd_synth(args):
    file_values = _layer(args)
    flags = {"seed": args.seed, "n_train": args.n_train, "n_test": args.n_test}
    cfg = resolve(CorpusConfig, file_values, flags=flags)
    _echo("synth", dataclasses.asdict(cfg))
    lexicon = aug.Lexicon.load(args.lexicon)
    if args.vocab:
        words = [w for w in (aug.normalize_word(x) for x in mio.load_vocab(args.vocab)) if w]
        lexicon = aug.Lexicon({w: lexicon.symbols(aug.g2p(w, lexicon)) for w in words}, lexicon.inventory)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CliError(f"{out} is not empty (use --force to overwrite)")
    try:
        corpus = build_corpus(cfg, lexicon)
    except ValueError as e:
        raise CliError(str(e)) from None
    h = write_corpus(corpus, out, dataclasses.asdict(cfg))
    print(json.dumps({"out": str(out), "train_pairs": len(corpus.train_pairs),
                      "test_pairs": len(corpus.test_pairs), "test_keywords": len(corpus.test_keywords),
                      "config_hash": h}, sort_keys=True))
    return 0


def cmd_mine(args):
    _echo("mine", {"target": args.target, "corpus": args.corpus, "k": args.k, "lexicon": args.lexicon,
                   "semantic_table": args.semantic_table})
    lexicon = aug.Lexicon.load(args.lexicon)
    phrases = [tuple(line.split()) for line in Path(args.corpus).read_text(encoding="utf-8").splitlines()
               if line.strip()]
    table = aug.SemanticTable.load(args.semantic_table) if args.semantic_table else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cs = aug.mine_confusables(_phrase(args.target), phrases, lexicon, args.k, table)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    text = cs.to_jsonl()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(args):
    file_values = _layer(args)
    corpus = load_corpus(args.data)
    tflags = {"steps": args.steps, "seed": args.seed, "lr": args.lr, "batch_anchors": args.batch_anchors,
              "log_every": args.log_every}
    tcfg = resolve(TrainConfig, file_values, flags=tflags)
    mcfg = resolve(ModelConfig, file_values, flags=model_flags(args))
    mcfg = dataclasses.replace(mcfg, n_phonemes=len(corpus.lexicon.inventory), vocab_size=len(corpus.vocab),
                               n_mels=corpus.config.n_mels)
    _echo("train", {"model": dataclasses.asdict(mcfg), "train": dataclasses.asdict(tcfg)})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt"
    _check_out(ckpt, args.force)

    from .training import checkpoint_manifest, train

    def progress(step, model, row):
        if tcfg.log_every and (step + 1) % tcfg.log_every == 0:
            print(f"step {step + 1} total {row[3]:.4f}", file=sys.stderr)

    result = train(corpus, mcfg, tcfg, callback=progress)
    man = checkpoint_manifest(result.model, corpus, tcfg)
    man["data_hash"] = json.loads((Path(args.data) / "corpus.json").read_text())["config_hash"]
    save_model(ckpt, result.model, man)
    (out / "loss.csv").write_text(result.loss_csv(), encoding="utf-8")
    print(json.dumps({"checkpoint": str(ckpt), "steps": tcfg.steps, "config_hash": man["config_hash"],
                      "final_loss": float(result.losses[-1, 3]) if tcfg.steps else None}, sort_keys=True))
    return 0


def _scores_report(path):
    recs = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    if not recs:
        raise CliError(f"{path} holds no scores")
    report = {"n_pairs": len(recs)}
    splits = sorted({r.get("split", "all") for r in recs})
    for split in splits:
        s = [float(r["score"]) for r in recs if r.get("split", "all") == split]
        y = [int(r["label"]) for r in recs if r.get("split", "all") == split]
        report[f"auc_{split}"] = ev.compute_auc(s, y)
        report[f"eer_{split}"] = ev.compute_eer(s, y)
    return report


def cmd_eval(args):
    file_values = _layer(args)
    if args.scores:
        _echo("eval", {"scores": args.scores, "report": args.report})
        report = _scores_report(args.scores)
        report["config_hash"] = config_hash({"scores": Path(args.scores).name})
    else:
        if not args.ckpt or not args.data:
            raise CliError("eval needs --ckpt and --data (or --scores)")
        expected, keys = _explicit_arch(file_values, model_flags(args))
        model, man = load_model(args.ckpt, expected, keys, args.force)
        corpus = load_corpus(args.data)
        resolved = {"ckpt": args.ckpt, "data": args.data, "seed": args.seed, "templates": args.templates,
                    "model": dataclasses.asdict(model.cfg)}
        _echo("eval", resolved)
        scores = ev.score_pairs(model, corpus, corpus.test_pairs, use_templates=args.templates > 0)
        report = ev.split_metrics(scores, corpus.test_pairs)
        report["n_pairs"] = len(corpus.test_pairs)
        dev = build_multiclass_episode(corpus, seed=args.seed, keywords=corpus.train_keywords)
        test = build_multiclass_episode(corpus, seed=args.seed + 1)
        thr = ev.select_threshold(ev.episode_scores(model, corpus, dev, args.templates), dev)
        M = ev.episode_scores(model, corpus, test, args.templates)
        report["acc_close"] = ev.episode_accuracy(M, test, closed=True)
        report["acc_open"] = ev.episode_accuracy(M, test, thr, closed=False)
        report["open_threshold"] = thr
        report["config_hash"] = man.get("config_hash")
    for k in ("auc_easy", "auc_hard", "eer_easy", "eer_hard", "acc_close", "acc_open"):
        report.setdefault(k, None)
    if args.report:
        _write_json(args.report, report)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_spot(args):
    model, man = load_model(args.ckpt)
    _echo("spot", {"ckpt": args.ckpt, "keyword": args.keyword, "templates": args.templates,
                   "query": args.query, "threshold": args.threshold})
    lex, index = _assets(man)
    words = _phrase(args.keyword)
    query = mio.load_feat_ref(args.query)
    templates = [mio.load_feat_ref(t) for t in args.templates or []]
    r = model.score(lex.phrase_ids(words), [index.get(w, 0) for w in words], query, templates)
    print(f"p_utt {r.p_utt:.6f}")
    print("YES" if r.p_utt >= args.threshold else "NO")
    return 0


def cmd_export_attn(args):
    model, man = load_model(args.ckpt)
    _echo("export-attn", {"ckpt": args.ckpt, "data": args.data, "pair": args.pair, "module": args.module})
    corpus = load_corpus(args.data)
    pair = next((p for p in corpus.train_pairs + corpus.test_pairs if p.pair_id == args.pair), None)
    if pair is None:
        raise CliError(f"pair {args.pair!r} not found in {args.data}")
    tmpl = corpus.templates.get(pair.enroll_text, [])[:1] if args.module == "qaam" else []
    if args.module == "qaam" and not tmpl:
        raise CliError(f"pair {args.pair!r} has no speech template for QAAM")
    r = model.score(corpus.phoneme_ids(pair.enroll_text), corpus.subword_ids(pair.enroll_text), pair.query,
                    tmpl, with_attention=True)
    maps = r.attn[args.module]
    mio.save_attention(args.out, maps)
    score = ev.monotonicity_score(maps[-1], r.boundaries[args.module])
    print(json.dumps({"out": args.out, "layers": len(maps), "boundaries": r.boundaries[args.module],
                      "monotonicity": score, "p_utt": r.p_utt}, sort_keys=True))
    return 0


def cmd_bench(args):
    if args.ckpt:
        model, _ = load_model(args.ckpt)
    else:
        model = MMKWS(ModelConfig(vocab_size=16), seed=args.seed)
    sizes = [int(s) for s in args.sizes.split(",")]
    _echo("bench", {"ckpt": args.ckpt, "reps": args.reps, "warmup": args.warmup, "sizes": sizes})
    reports = ev.bench_latency(model, sizes, args.reps, args.warmup, seed=args.seed)
    for r in reports:
        print(json.dumps({"frames": r.frames, "median_ms": r.median_ms, "p95_ms": r.p95_ms,
                          "samples": len(r.samples_ms)}, sort_keys=True))
    return 0


# --------------------------------------------------------------------------
# parser


def _add_common(p, config=True):
    if config:
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--threads", type=int, default=None, help="cap numba worker threads")


def _add_model_flags(p):
    for flag in ("d", "heads", "enc-layers", "attn-layers", "gru-hidden"):
        p.add_argument(f"--{flag}", type=int, default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="mmkws", description="Multi-modal user-defined keyword spotting")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("resources", help="write a toy lexicon, word list and semantic table")
    p.add_argument("--out", required=True)
    p.add_argument("--n-words", type=int, default=800)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=7)
    _add_common(p, config=False)
    p.set_defaults(func=cmd_resources)

    p = sub.add_parser("synth", help="build a synthetic corpus")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--vocab", help="word list restricting keyword words")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--force", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mine", help="mine confusable phrases for a target")
    p.add_argument("--target", required=True)
    p.add_argument("--corpus", required=True, help="phrase list, one per line")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--semantic-table")
    p.add_argument("--out")
    _add_common(p, config=False)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("train", help="train on a synthetic corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-anchors", type=int)
    p.add_argument("--log-every", type=int)
    p.add_argument("--force", action="store_true")
    _add_model_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (or a scores file)")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--scores", help="JSONL of {score, label, split}")
    p.add_argument("--report")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--templates", type=int, default=1, help="speech templates per enrollment (0 or 1)")
    p.add_argument("--force", action="store_true")
    _add_model_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("spot", help="score one query against one keyword")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--keyword", required=True)
    p.add_argument("--templates", nargs="*", metavar="FEAT[:i]")
    p.add_argument("--query", required=True, metavar="FEAT[:i]")
    p.add_argument("--threshold", type=float, default=0.5)
    _add_common(p, config=False)
    p.set_defaults(func=cmd_spot)

    p = sub.add_parser("export-attn", help="write attention maps of one corpus pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pair", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--module", choices=("qtam", "qaam"), default="qtam")
    _add_common(p, config=False)
    p.set_defaults(func=cmd_export_attn)

    p = sub.add_parser("bench", help="single-pair scoring latency")
    p.add_argument("--ckpt")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--sizes", default="100,200", help="query frame counts")
    p.add_argument("--seed", type=int, default=0)
    _add_common(p, config=False)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit with 2
    if args.threads:
        try:
            import numba

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # threading-layer probing is noisy
                numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        except ImportError:
            pass
    try:
        return args.func(args)
    except (CliError, mio.FormatError, ValueError, KeyError, FileNotFoundError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
