"""Command-line entry point: featurize, train, eval, predict.

Exit codes: 0 ok, 2 input error, 3 numeric failure, 4 compatibility error.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import chargrains as cg
from . import report
from .model import CheckpointError, CompatibilityError, ModelParams, config_for, forward_batch, load_model, save_model
from .neural import load_pretrained
from .tensorcore import NonFiniteError
from .trainkit import LOG_HEADER, NumericError, TrainConfig, evaluate, train

log = logging.getLogger("motoclf")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_COMPAT = 0, 2, 3, 4
MODEL_FILE = "model.moto"
EPOCH_FILE = "epoch.moto"
LOG_FILE = "train_log.tsv"

STREAM_NAMES = {"c": cg.CHAR, "r": cg.RADICAL, "w": cg.WUBI, "py": cg.PINYIN}
# effective-config keys that name outputs or resources and stay out of checkpoints
_NOT_ECHOED = {"ckpt", "out", "threads", "figures", "dump_attention", "config"}


class InputError(Exception):
    pass


@dataclass
class Config:
    train: str | None = None
    test: str | None = None
    dev: str | None = None
    dict_radical: str | None = None
    dict_wubi: str | None = None
    dict_pinyin: str | None = None
    embeddings: list[str] = field(default_factory=list)
    ckpt: str | None = None
    out: str | None = None
    seed: int = 0
    dim: int = 256
    dropout: float = 0.5
    lr: float = 0.001
    batch: int = 32
    max_epochs: int = 30
    downsample_target: int = 18
    downsample_threshold: int = 64
    streams: str = "c,r,w,py"
    sigmoid_head: bool = True
    threads: int | None = None
    max_non_chinese: float | None = None
    dump_attention: str | None = None
    figures: bool = False

    def validate(self) -> None:
        if self.dim < 2 or self.dim % 2:
            raise InputError(f"dim must be even and >= 2, got {self.dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise InputError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.batch < 1:
            raise InputError(f"batch must be >= 1, got {self.batch}")
        self.aux_streams()

    def aux_streams(self) -> tuple[str, ...]:
        names = [s.strip().lower() for s in self.streams.split(",") if s.strip()]
        full = {v: v for v in STREAM_NAMES.values()}
        out = []
        for name in names:
            g = STREAM_NAMES.get(name) or full.get(name)
            if g is None:
                raise InputError(f"unknown stream {name!r}; use c, r, w, py")
            out.append(g)
        if cg.CHAR not in out:
            raise InputError("the character stream 'c' is always required")
        return tuple(g for g in cg.DICT_KINDS if g in out)

    def dict_paths(self, kinds) -> dict[str, str]:
        paths = {}
        for kind in kinds:
            p = getattr(self, f"dict_{kind}")
            if p is None:
                raise InputError(f"stream {kind} is enabled but --dict-{kind} is not set")
            paths[kind] = p
        return paths

    def echo(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            if f.name in _NOT_ECHOED:
                continue
            v = getattr(self, f.name)
            if v is None or v == []:
                continue
            out[f"cfg.{f.name}"] = ",".join(v) if isinstance(v, list) else str(v)
        return out


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}
_PATH_KEYS = {"train", "test", "dev", "dict_radical", "dict_wubi", "dict_pinyin", "ckpt", "out", "embeddings"}


def _coerce(name: str, raw: str):
    kind = {f.name: f.type for f in dataclasses.fields(Config)}[name]
    if "bool" in kind:
        try:
            return _BOOL[raw.lower()]
        except KeyError:
            raise InputError(f"{name}: expected a boolean, got {raw!r}") from None
    if "list" in kind:
        return [p.strip() for p in raw.split(",") if p.strip()]
    try:
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise InputError(f"{name}: cannot parse {raw!r}") from None
    return raw


def read_config_file(path) -> dict:
    """``key = value`` lines, ``#`` comments.  Relative paths resolve against
    the file's directory."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    known = {f.name for f in dataclasses.fields(Config)}
    values = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in known:
            raise InputError(f"{path}:{lineno}: expected 'key = value' with a known key")
        value = _coerce(key, raw.strip())
        if key in _PATH_KEYS:
            value = [_resolve(path.parent, v) for v in value] if isinstance(value, list) else _resolve(path.parent, value)
        values[key] = value
    return values


def _resolve(base: Path, value: str) -> str:
    gran, sep, rest = value.partition("=")
    if sep and gran in cg.GRANULARITIES:
        return f"{gran}={_resolve(base, rest)}"
    p = Path(value)
    return str(p if p.is_absolute() else base / p)


def build_config(args: argparse.Namespace) -> Config:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for f in dataclasses.fields(Config):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    cfg = Config(**values)
    cfg.validate()
    return cfg


# -- helpers ------------------------------------------------------------------


def _require_file(path: str | None, what: str) -> Path:
    if not path:
        raise InputError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file not found: {p}")
    return p


def _load_dicts(cfg: Config, kinds) -> dict[str, cg.Dictionary]:
    paths = cfg.dict_paths(kinds)
    for kind, p in paths.items():
        _require_file(p, f"dict-{kind}")
    try:
        return cg.load_dictionaries(paths)
    except cg.DictionaryError as e:
        raise InputError(str(e)) from None


def _load_corpus(path, what: str, labels=None, strict: bool = False) -> cg.Corpus:
    p = _require_file(path, what)
    try:
        return cg.load_corpus(p, labels, strict=strict)
    except cg.CorpusError as e:
        if strict and "unknown label" in str(e):
            raise CompatibilityError(str(e)) from None
        raise InputError(str(e)) from None


def _filter(corpus: cg.Corpus, limit: float | None) -> cg.Corpus:
    if limit is None:
        return corpus
    kept = [s for s in corpus.samples if cg.non_chinese_ratio(s.text) <= limit]
    log.info("non-Chinese filter kept %d of %d samples", len(kept), len(corpus.samples))
    return cg.Corpus(kept, corpus.labels, corpus.skipped)


def _encoded_rows(fz: cg.Featurizer, samples) -> str:
    rows = []
    for s in samples:
        e = fz.encode(s)
        cols = [str(e.class_id)] + [" ".join(map(str, e.ids(g))) for g in cg.GRANULARITIES if g in fz.vocabs]
        rows.append("\t".join(cols) + "\n")
    return "".join(rows)


def _out_dir(path: str | None, what: str) -> Path:
    if not path:
        raise InputError(f"--{what} is required")
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_checkpoint_dir(path: str | None) -> tuple[cg.Featurizer, ModelParams, dict]:
    if not path:
        raise InputError("--ckpt is required")
    d = Path(path)
    if not (d / MODEL_FILE).is_file():
        raise InputError(f"no {MODEL_FILE} in checkpoint directory {d}")
    try:
        params, meta = load_model(d / MODEL_FILE)
        fz = cg.Featurizer.load(d)
    except (CheckpointError, OSError, ValueError) as e:
        raise CompatibilityError(f"cannot load checkpoint {d}: {e}") from None
    cfg = params.config
    for g in cfg.granularities:
        if g not in fz.vocabs or len(fz.vocabs[g]) != cfg.vocab_sizes[g]:
            raise CompatibilityError(f"{g} vocabulary in {d} does not match the model")
        if fz.targets[g] != cfg.lengths[g]:
            raise CompatibilityError(f"{g} target length in {d} does not match the model")
    if len(fz.labels) != cfg.num_classes:
        raise CompatibilityError(f"{d}: {len(fz.labels)} labels for a {cfg.num_classes}-class model")
    return fz, params, meta


# -- commands -----------------------------------------------------------------


def cmd_featurize(cfg: Config) -> int:
    streams = cfg.aux_streams()
    dicts = _load_dicts(cfg, streams)
    corpus = _filter(_load_corpus(cfg.train, "train"), cfg.max_non_chinese)
    fz = cg.Featurizer.fit(corpus, dicts)
    test = None
    if cfg.test:
        test = _filter(_load_corpus(cfg.test, "test", fz.labels), cfg.max_non_chinese)
        fz.labels = test.labels
    out = _out_dir(cfg.out or cfg.ckpt, "out")
    fz.save(out)
    (out / "encoded_train.tsv").write_text(_encoded_rows(fz, corpus.samples), encoding="utf-8")
    if test is not None:
        (out / "encoded_test.tsv").write_text(_encoded_rows(fz, test.samples), encoding="utf-8")
    for g in fz.granularities:
        print(f"{g}\tvocab={len(fz.vocabs[g])}\tlength={fz.targets[g]}")
    return EXIT_OK


def _apply_embeddings(cfg: Config, fz: cg.Featurizer, params: ModelParams) -> None:
    for spec in cfg.embeddings:
        gran, sep, path = spec.partition("=")
        if not sep or gran not in cg.GRANULARITIES:
            gran, path = cg.CHAR, spec
        if gran not in params.config.granularities:
            raise InputError(f"embeddings given for disabled stream {gran}")
        _require_file(path, "embeddings")
        name = f"emb.{gran}"
        try:
            params.arrays[name], rep = load_pretrained(path, fz.vocabs[gran].itos, params.arrays[name])
        except ValueError as e:
            raise InputError(str(e)) from None
        log.warning("%s embeddings: %d hits, %d misses (random init), %d unused vectors", gran, rep.hits, rep.misses, rep.unused)


def cmd_train(cfg: Config) -> int:
    streams = cfg.aux_streams()
    dicts = _load_dicts(cfg, streams)
    corpus = _filter(_load_corpus(cfg.train, "train"), cfg.max_non_chinese)
    fz = cg.Featurizer.fit(corpus, dicts)
    dev = None
    if cfg.dev:
        dev_corpus = _load_corpus(cfg.dev, "dev", fz.labels, strict=True)
        dev = [fz.encode(s) for s in dev_corpus.samples]
    if len(fz.labels) < 2:
        raise InputError("training corpus needs at least two labels")
    samples = [fz.encode(s) for s in corpus.samples]
    mcfg = config_for(
        fz,
        dim=cfg.dim,
        streams=streams,
        sigmoid_head=cfg.sigmoid_head,
        dropout=cfg.dropout,
        downsample_target=cfg.downsample_target,
        downsample_threshold=cfg.downsample_threshold,
        seed=cfg.seed,
    )
    params = ModelParams.initialize(mcfg)
    _apply_embeddings(cfg, fz, params)
    out = _out_dir(cfg.ckpt, "ckpt")
    fz.save(out)
    meta = cfg.echo()
    log_path = out / LOG_FILE
    with open(log_path, "w", encoding="utf-8", newline="\n") as log_file:
        log_file.write(LOG_HEADER + "\n")

        def on_epoch(rec, current):
            log_file.write(rec.tsv() + "\n")
            log_file.flush()
            if rec.split == "train":
                save_model(out / EPOCH_FILE, current, {**meta, "epoch": str(rec.epoch)})

        result = train(
            params, samples, TrainConfig(cfg.lr, cfg.batch, cfg.max_epochs, cfg.seed), dev=dev, on_epoch=on_epoch
        )
    save_model(out / MODEL_FILE, result.params, {**meta, "epoch": str(cfg.max_epochs)})
    if cfg.figures and result.history:
        report.plot_learning_curve(result.history, out / "learning_curve.png")
    last = [r for r in result.history if r.split == "train"]
    if last:
        print(last[-1].tsv())
    print(f"checkpoint written to {out / MODEL_FILE}")
    return EXIT_OK


def cmd_eval(cfg: Config) -> int:
    fz, params, _ = _load_checkpoint_dir(cfg.ckpt)
    corpus = _load_corpus(cfg.test, "test", fz.labels, strict=True)
    if not corpus.samples:
        raise InputError(f"test corpus {cfg.test} is empty")
    metrics = evaluate(params, [fz.encode(s) for s in corpus.samples])
    report.write_metrics(Path(cfg.out or cfg.ckpt), metrics, fz.labels, figures=cfg.figures)
    sys.stdout.write(report.metrics_text(metrics, fz.labels))
    return EXIT_OK


def cmd_predict(cfg: Config, texts: list[str]) -> int:
    fz, params, _ = _load_checkpoint_dir(cfg.ckpt)
    if not texts:
        raise InputError("no text to classify")
    dump_rows: list[str] = []
    bound = params.bind()
    for n, text in enumerate(texts):
        text = text.strip()
        if not text:
            raise InputError("cannot classify empty text")
        sample = cg.RawSample(fz.labels[0], text)
        res = forward_batch([fz.encode(sample)], bound, params.config)
        probs = res.probabilities.data[0]
        k = int(np.argmax(probs))
        print(f"{fz.labels[k]}\t" + " ".join(f"{p:.12f}" for p in probs))
        alphas = {g: a.data[0] for g, a in res.alphas.items()}
        if len(texts) > 1:
            dump_rows.append(f"# sample {n}")
        for g, a in alphas.items():
            dump_rows.extend(report.attention_rows(g, a))
        if cfg.dump_attention and cfg.figures and alphas:
            stem = Path(cfg.dump_attention)
            report.plot_attention(alphas, stem.with_name(f"{stem.stem}.{n}.png"))
    if cfg.dump_attention:
        Path(cfg.dump_attention).write_text("\n".join(dump_rows) + "\n", encoding="utf-8")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", default=None, help="key = value configuration file")
    p.add_argument("--threads", type=int, default=S, help="cap on BLAS worker threads")
    p.add_argument("--seed", type=int, default=S)


def _add_data(p: argparse.ArgumentParser, test: bool = False) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--train", default=S, help="training corpus, label<TAB>text per line")
    if test:
        p.add_argument("--test", default=S, help="test corpus")
    for kind in cg.DICT_KINDS:
        p.add_argument(f"--dict-{kind}", dest=f"dict_{kind}", default=S, help=f"{kind} dictionary TSV")
    p.add_argument("--streams", default=S, help="comma list of c,r,w,py (default all)")
    p.add_argument("--max-non-chinese", dest="max_non_chinese", type=float, default=S,
                   help="drop samples whose non-Chinese character ratio exceeds this")


def make_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="motoclf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="build vocabularies and encoded id files")
    _add_common(p)
    _add_data(p, test=True)
    p.add_argument("--out", default=S, help="output directory (defaults to --ckpt)")
    p.add_argument("--ckpt", default=S)

    p = sub.add_parser("train", help="train a model and write a checkpoint directory")
    _add_common(p)
    _add_data(p)
    p.add_argument("--dev", default=S, help="optional dev corpus evaluated every epoch")
    p.add_argument("--embeddings", action="append", default=S, help="[GRAN=]PATH word2vec text vectors")
    p.add_argument("--ckpt", default=S, help="checkpoint directory")
    p.add_argument("--dim", type=int, default=S)
    p.add_argument("--max-epochs", dest="max_epochs", type=int, default=S)
    p.add_argument("--batch", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--dropout", type=float, default=S)
    p.add_argument("--downsample-target", dest="downsample_target", type=int, default=S)
    p.add_argument("--downsample-threshold", dest="downsample_threshold", type=int, default=S)
    p.add_argument("--no-sigmoid", dest="sigmoid_head", action="store_false", default=S,
                   help="use Con W directly as logits")
    p.add_argument("--figures", action="store_true", default=S, help="also render learning_curve.png")

    p = sub.add_parser("eval", help="score a checkpoint on a labelled corpus")
    _add_common(p)
    p.add_argument("--ckpt", default=S)
    p.add_argument("--test", default=S)
    p.add_argument("--out", default=S, help="report directory (defaults to --ckpt)")
    p.add_argument("--figures", action="store_true", default=S, help="also render confusion.png")

    p = sub.add_parser("predict", help="classify texts with a checkpoint")
    _add_common(p)
    p.add_argument("--ckpt", default=S)
    p.add_argument("--dump-attention", dest="dump_attention", default=S, help="write attention weights TSV")
    p.add_argument("--figures", action="store_true", default=S, help="also render attention heatmaps")
    p.add_argument("text", nargs="+")
    return parser


def _threads(n: int | None):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, n))


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=getattr(logging, os.environ.get("MOTO_LOG", "WARNING").upper(), logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        with _threads(cfg.threads):
            if args.command == "featurize":
                return cmd_featurize(cfg)
            if args.command == "train":
                return cmd_train(cfg)
            if args.command == "eval":
                return cmd_eval(cfg)
            return cmd_predict(cfg, args.text)
    except (InputError, cg.CorpusError, cg.DictionaryError) as e:
        print(f"motoclf: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericError, NonFiniteError) as e:
        print(f"motoclf: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except CompatibilityError as e:
        print(f"motoclf: incompatible input: {e}", file=sys.stderr)
        return EXIT_COMPAT


if __name__ == "__main__":
    sys.exit(main())
