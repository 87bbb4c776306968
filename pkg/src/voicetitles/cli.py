"""Command-line pipeline: synth-data, build-vocab, stats, pretrain, train, decode, evaluate.

Every output file is written to a temporary sibling and renamed into place
only after the whole subcommand succeeds.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field

from . import config as C
from . import corpus, metrics
from . import tensor as T
from . import vocab as V
from .beam import beam_search
from .features import make_example
from .pretrain import PretrainConfig, pretrain
from .recurrent import RecurrentSummarizer
from .trainer import TrainingDiverged, restore, train
from .transformer import TransformerSummarizer

LOG_ENV = "VOICETITLES_LOG_LEVEL"
SUBCOMMANDS = ("synth-data", "build-vocab", "stats", "pretrain", "train", "decode", "evaluate")

log = logging.getLogger("voicetitles")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    paths: dict = field(default_factory=dict)
    family: str = "ebertsum"
    seed: int = 0
    profile: str = "paper"
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise UsageError(f"unknown subcommand {self.subcommand!r}")

    def settings(self):
        return C.settings_for(self.family, self.profile, {"seed": self.seed, **self.overrides})

    def require(self, *keys):
        for key in keys:
            path = self.paths.get(key)
            if path is None:
                raise UsageError(f"--{key.replace('_', '-')} is required for {self.subcommand}")
            if not os.path.exists(path):
                raise FileNotFoundError(f"{key.replace('_', '-')} path does not exist: {path}")
        return [self.paths[k] for k in keys]


class Staged:
    """Collects outputs as temporary files; renames them into place on clean exit."""

    def __init__(self):
        self.pending = []

    def path(self, final):
        folder = os.path.dirname(os.path.abspath(final))
        os.makedirs(folder, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=folder, prefix=f".{os.path.basename(final)}.", suffix=".tmp")
        os.close(fd)
        self.pending.append((tmp, final))
        return tmp

    def text(self, final, content):
        with open(self.path(final), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            for tmp, final in self.pending:
                os.replace(tmp, final)
        else:
            for tmp, _ in self.pending:
                if os.path.exists(tmp):
                    os.unlink(tmp)
        return False


# --------------------------------------------------------------------------
# subcommands

def _data_file(path, name):
    return os.path.join(path, name) if os.path.isdir(path) else path


def cmd_synth_data(rc: RunConfig, args):
    out = rc.paths.get("out") or "data"
    n_desc = args.descriptions if args.descriptions is not None else args.n
    pairs, descriptions = corpus.generate_synthetic(args.n, seed=rc.seed, n_descriptions=n_desc)
    parts = corpus.split(pairs, seed=rc.seed)
    with Staged() as st:
        for name, chunk in zip(("pairs", "train", "valid", "test"), (pairs, *parts)):
            st.text(os.path.join(out, f"{name}.tsv"), "".join(corpus.format_pair(p) + "\n" for p in chunk))
        st.text(os.path.join(out, "descriptions.txt"), "".join(d + "\n" for d in descriptions))
    sizes = "/".join(str(len(p)) for p in parts)
    return f"wrote {len(pairs)} pairs ({sizes} train/valid/test) and {len(descriptions)} descriptions to {out}"


def cmd_build_vocab(rc: RunConfig, args):
    (data,) = rc.require("data")
    train_path = _data_file(data, "train.tsv")
    if not os.path.exists(train_path):
        raise FileNotFoundError(f"no training pairs at {train_path}")
    pairs = corpus.load_pairs(train_path)
    texts = [corpus.augment_with_metadata(p) for p in pairs] + [p.voice_title for p in pairs]
    desc_path = os.path.join(data, "descriptions.txt") if os.path.isdir(data) else None
    if desc_path and os.path.exists(desc_path):
        texts += corpus.load_lines(desc_path)
    voc = V.build_vocab(texts, max_size=args.max_size, min_freq=args.min_freq)
    out = rc.paths.get("out") or "vocab.txt"
    with Staged() as st:
        voc.save(st.path(out))
    return f"wrote vocabulary of {len(voc)} tokens to {out}"


def cmd_stats(rc: RunConfig, args):
    (data,) = rc.require("data")
    pairs = corpus.load_pairs(_data_file(data, "pairs.tsv"))
    counts = None
    if os.path.isdir(data) and all(os.path.exists(os.path.join(data, f"{s}.tsv")) for s in ("train", "valid", "test")):
        counts = {s: len(corpus.load_pairs(os.path.join(data, f"{s}.tsv"))) for s in ("train", "valid", "test")}
    lines = corpus.compute_stats(pairs, counts).lines()
    if rc.paths.get("out"):
        with Staged() as st:
            st.text(rc.paths["out"], "".join(line + "\n" for line in lines))
    return " ".join(lines)


def cmd_pretrain(rc: RunConfig, args):
    data, vocab_path = rc.require("data", "vocab")
    voc = V.Vocab.load(vocab_path)
    descriptions = corpus.load_lines(_data_file(data, "descriptions.txt"))
    s = rc.settings()
    if "pretrain_steps" not in s:
        raise C.ConfigError(f"family {rc.family} has no pretraining settings; use --model ebertsum")
    instances = corpus.make_pretrain_instances(descriptions, voc, seed=rc.seed, max_len=min(128, s["max_positions"]))
    cfg = PretrainConfig(steps=s["pretrain_steps"], lr=s["pretrain_lr"], batch_size=s["pretrain_batch"],
                         eval_every=s["pretrain_eval_every"], seed=rc.seed, layers=C.layer_config(s))
    model, report = pretrain(instances, len(voc), cfg)
    out = rc.paths.get("out") or "pretrain.ckpt"
    with Staged() as st:
        T.save_checkpoint(st.path(out), model.params)
        st.text(out + ".report.csv", "".join(line + "\n" for line in report.lines()))
    first, last = report.rows[0], report.rows[-1]
    return (f"pretrained {last[0]} steps: mlm_acc {first[1]:.4f}->{last[1]:.4f} "
            f"nsp_acc {first[2]:.4f}->{last[2]:.4f}; wrote {out}")


def build_model(settings, vocab_size):
    family = settings["family"]
    if family in C.RECURRENT:
        return RecurrentSummarizer(vocab_size, pointer=family != "seq2seq", config=C.recurrent_config(settings),
                                   seed=settings["seed"])
    return TransformerSummarizer(vocab_size, C.layer_config(settings), family=family, seed=settings["seed"])


def _examples(pairs, voc, s):
    return [make_example(corpus.augment_with_metadata(p), p.voice_title, voc, s["max_src"], s["max_tgt"])
            for p in pairs]


def train_dispatch(rc: RunConfig):
    """Train the selected family and write its checkpoint; returns the checkpoint path."""
    data, vocab_path = rc.require("data", "vocab")
    pretrained = rc.paths.get("pretrained")
    if rc.family == "ebertsum":
        if pretrained is None:
            raise UsageError("ebertsum needs --pretrained CHECKPOINT; run the pretrain subcommand first")
        rc.require("pretrained")
    elif pretrained is not None:
        raise UsageError(f"--pretrained applies only to ebertsum, not {rc.family}")
    s = rc.settings()
    voc = V.Vocab.load(vocab_path)
    train_ex = _examples(corpus.load_pairs(_data_file(data, "train.tsv")), voc, s)
    valid_ex = _examples(corpus.load_pairs(os.path.join(data, "valid.tsv")), voc, s)
    model = build_model(s, len(voc))
    if pretrained is not None:
        n = model.load_encoder(T.load_checkpoint(pretrained))
        log.info("loaded %d pretrained encoder arrays from %s", n, pretrained)
    cfg = C.train_config(s)
    result = train(model, train_ex, valid_ex, cfg)
    rows = result.log_lines()
    if rc.family == "ptrnet_cov" and s["coverage_steps"] > 0:
        # second phase: coverage on, starting from the best coverage-free checkpoint
        model.coverage = True
        cfg2 = C.train_config({**s, "total_steps": s["coverage_steps"]})
        result = train(model, train_ex, valid_ex, cfg2)
        rows += ["# coverage phase"] + result.log_lines()
    restore(model, result.best_params)
    out = rc.paths.get("out") or f"{rc.family}.ckpt"
    with Staged() as st:
        T.save_checkpoint(st.path(out), model.params)
        st.text(out + ".cfg", C.format_settings({**s, "vocab_size": len(voc)}))
        st.text(out + ".log.csv", "".join(r + "\n" for r in rows))
    return out, result


def cmd_train(rc: RunConfig, args):
    out, result = train_dispatch(rc)
    return f"trained {rc.family}: best val loss {result.best_val_loss:.4f} at step {result.best_step}; wrote {out}"


def load_trained(checkpoint):
    cfg_path = checkpoint + ".cfg"
    if not os.path.exists(cfg_path):
        raise FileNotFoundError(f"missing model settings {cfg_path}")
    with open(cfg_path, encoding="utf-8") as fh:
        s = C.parse_settings(fh.read())
    model = build_model(s, s["vocab_size"])
    arrays = T.load_checkpoint(checkpoint)
    missing = set(model.params) - set(arrays)
    if missing:
        raise ValueError(f"checkpoint {checkpoint} lacks {len(missing)} parameters, e.g. {sorted(missing)[0]}")
    restore(model, arrays)
    if s["family"] == "ptrnet_cov":
        model.coverage = True
    return model, s


def decode_pairs(model, pairs, voc, s):
    preds = []
    for ex in _examples(pairs, voc, s):
        ids = beam_search(model, ex, beam=s["beam"], alpha=s["alpha"], min_len=s["min_len"], max_len=s["max_len"])
        preds.append(V.decode(ids, voc, ex.oovs))
    return preds


def cmd_decode(rc: RunConfig, args):
    checkpoint, vocab_path, src = rc.require("checkpoint", "vocab", "input")
    model, s = load_trained(checkpoint)
    for key in C.DECODE_KEYS:
        if key in rc.overrides:
            s[key] = C.coerce(key, rc.overrides[key])
    voc = V.Vocab.load(vocab_path)
    if len(voc) != s["vocab_size"]:
        raise ValueError(f"vocabulary has {len(voc)} tokens but the model was trained with {s['vocab_size']}")
    preds = decode_pairs(model, corpus.load_pairs(src), voc, s)
    out = rc.paths.get("out") or "predictions.txt"
    with Staged() as st:
        st.text(out, "".join(p + "\n" for p in preds))
    return f"decoded {len(preds)} titles with beam {s['beam']}; wrote {out}"


def _reference_lines(path):
    if path.endswith(".tsv"):
        return [p.voice_title for p in corpus.load_pairs(path)]
    return metrics.read_lines(path)


def cmd_evaluate(rc: RunConfig, args):
    pred, ref = rc.require("pred", "ref")
    report = metrics.evaluate(metrics.read_lines(pred), _reference_lines(ref))
    if rc.paths.get("out"):
        with Staged() as st:
            st.text(rc.paths["out"], "".join(line + "\n" for line in report.lines()))
    return " ".join(report.lines())


COMMANDS = {
    "synth-data": cmd_synth_data, "build-vocab": cmd_build_vocab, "stats": cmd_stats,
    "pretrain": cmd_pretrain, "train": cmd_train, "decode": cmd_decode, "evaluate": cmd_evaluate,
}


# --------------------------------------------------------------------------
# argument handling

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser():
    p = _Parser(prog="voicetitles", description="Web-title to voice-title summarization pipeline.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--model", default="ebertsum", help="model family: " + ", ".join(C.FAMILIES))
    p.add_argument("--profile", default="paper", choices=C.PROFILES,
                   help="paper: published settings; desk: small synthetic-scale settings")
    p.add_argument("--config", help="file of key=value setting overrides")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="one setting override")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--beam", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--min-len", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--out")
    p.add_argument("--data", help="data directory written by synth-data, or a pairs file")
    p.add_argument("--vocab")
    p.add_argument("--pretrained", help="pretrain checkpoint (ebertsum)")
    p.add_argument("--checkpoint", help="trained model checkpoint (decode)")
    p.add_argument("--input", help="pairs file to decode")
    p.add_argument("--pred")
    p.add_argument("--ref")
    p.add_argument("--n", type=int, default=500, help="synth-data: number of pairs")
    p.add_argument("--descriptions", type=int, help="synth-data: number of descriptions (default --n)")
    p.add_argument("--max-size", type=int, default=30000)
    p.add_argument("--min-freq", type=int, default=1)
    return p


def run_config_from_args(args):
    overrides = {}
    if args.config:
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"config file does not exist: {args.config}")
        with open(args.config, encoding="utf-8") as fh:
            overrides.update(C.parse_settings(fh.read()))
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = C.coerce(key.strip(), value.strip())
    pre = args.subcommand == "pretrain"
    flags = {"pretrain_steps" if pre else "total_steps": args.steps,
             "pretrain_batch" if pre else "batch_size": args.batch,
             "beam": args.beam, "alpha": args.alpha, "min_len": args.min_len, "max_len": args.max_len}
    overrides.update({k: v for k, v in flags.items() if v is not None})
    paths = {k: getattr(args, k) for k in ("out", "data", "vocab", "pretrained", "checkpoint", "input", "pred", "ref")
             if getattr(args, k) is not None}
    return RunConfig(args.subcommand, paths, args.model, args.seed, args.profile, overrides)


def run(argv=None):
    """Execute one subcommand; returns the process exit status."""
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _parser().parse_args(argv)
        rc = run_config_from_args(args)
        summary = COMMANDS[rc.subcommand](rc, args)
    except UsageError as err:
        print(f"voicetitles: usage error: {err}", file=sys.stderr)
        return 2
    except (OSError, ValueError, TrainingDiverged, KeyError) as err:
        print(f"voicetitles: error: {err}".replace("\n", " "), file=sys.stderr)
        return 1
    print(summary)
    return 0


def main():
    sys.exit(run())
