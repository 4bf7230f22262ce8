"""Experiment driver: train, parse, eval, sweep, impact and ablate
commands over both parsers.

Configuration is a flat key=value text file with command-line overrides.
One global seed is split into independent per-component streams
(initialization, data, shuffling, dropout, ablation choice) so changing
one consumer never perturbs the others; every command is a pure function
of (config, data, seed) and its outputs are byte-reproducible. Models
are stored in a small binary format with a length-prefixed textual
header and a float32 payload.
"""

from __future__ import annotations

import argparse
import struct
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO, Tuple
from urllib.parse import quote, unquote

import numpy as np

from . import ablation, graph, transition
from .autodiff import ParameterStore
from .encoder import ConfigurationError, Vocab, build_encoder_params, build_vocab
from .evaluation import (las, recall_by_length, seed_stats, write_length_curve,
                         write_score_table)
from .graph import build_graph_model
from .impact import (CONFIG_POSITION, DISTANCE_RELATION, TREE_POSITION,
                     aggregate, collect_graph_impacts,
                     collect_transition_impacts, collect_vector_impacts,
                     write_impact_tsv)
from .transition import (EXTENDED, SIMPLE, TransitionModel,
                         build_transition_model)
from .treebank import DepTree, Sentence, parse_conllu, read_conllu

MAGIC = b"DPRS"
FORMAT_VERSION = 1

# counter-based split of the global seed into per-component streams
STREAMS = {"init": 0, "data": 1, "shuffle": 2, "dropout": 3, "ablation": 4}

_FEATURE_SETS = {"simple": SIMPLE, "extended": EXTENDED}
_BOOL_WORDS = {"true": True, "1": True, "yes": True, "on": True,
               "false": False, "0": False, "no": False, "off": False}


class ModelFormatError(ValueError):
    """Corrupt or incompatible model file."""


def component_rng(seed: int, component: str) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), STREAMS[component]]))


# ---- configuration ---------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a run besides the data files' content."""

    parser: str = "transition"
    mode: str = "bilstm"
    features: Tuple[str, ...] = SIMPLE
    order: int = 1
    decoder: str = "eisner"
    use_dist: bool = False
    neighbor_radius: int = 0
    word_dim: int = 100
    pos_dim: int = 20
    lstm_dim: int = 125
    lstm_layers: int = 2
    hidden_dim: int = 100
    word_dropout_alpha: float = 0.25
    learning_rate: float = 0.001
    epochs: int = 30
    seeds: Tuple[int, ...] = (1,)
    train_path: str = ""
    dev_path: str = ""
    out_dir: str = "."

    def name(self) -> str:
        """Compact human-readable model identity for report tables."""
        if self.parser == "transition":
            if self.features == SIMPLE:
                feat = "simple"
            elif self.features == EXTENDED:
                feat = "extended"
            else:
                feat = ",".join(self.features)
            return f"transition-{self.mode}-{feat}"
        parts = [f"graph-{self.mode}-o{self.order}-{self.decoder}"]
        if self.use_dist:
            parts.append("+dist")
        if self.neighbor_radius:
            parts.append(f"+near{self.neighbor_radius}")
        return "".join(parts)


def _parse_features(text: str) -> Tuple[str, ...]:
    named = _FEATURE_SETS.get(text.strip().lower())
    if named is not None:
        return named
    feats = tuple(tok.strip() for tok in text.split(",") if tok.strip())
    if not feats:
        raise ConfigurationError("features: empty feature set")
    for tok in feats:
        if not (len(tok) in (2, 3) and tok[0] in "sb" and tok[1].isdigit()
                and (len(tok) == 2 or tok[2] in "LR")):
            raise ConfigurationError(f"unknown feature descriptor {tok!r}")
    return feats


def _parse_bool(key: str, text: str) -> bool:
    got = _BOOL_WORDS.get(text.strip().lower())
    if got is None:
        raise ConfigurationError(f"{key}: expected a boolean, got {text!r}")
    return got


def _parse_int(key: str, text: str, minimum: int = 1) -> int:
    try:
        value = int(text)
    except ValueError:
        raise ConfigurationError(f"{key}: expected an integer, got {text!r}") from None
    if value < minimum:
        raise ConfigurationError(f"{key}: must be at least {minimum}, got {value}")
    return value


def _parse_float(key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigurationError(f"{key}: expected a number, got {text!r}") from None


def _parse_seeds(text: str) -> Tuple[int, ...]:
    try:
        seeds = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise ConfigurationError(f"seeds: expected integers, got {text!r}") from None
    if not seeds:
        raise ConfigurationError("seeds: empty list")
    return seeds


def config_from_items(items: Dict[str, str]) -> ExperimentConfig:
    """Build and validate a config from raw key=value strings."""
    known = {f.name for f in fields(ExperimentConfig)}
    for key in items:
        if key not in known:
            raise ConfigurationError(f"unknown config key {key!r}")
    kw: Dict[str, object] = {}
    for key, raw in items.items():
        if key in ("parser", "mode", "decoder", "train_path", "dev_path", "out_dir"):
            kw[key] = raw.strip()
        elif key == "features":
            kw[key] = _parse_features(raw)
        elif key == "use_dist":
            kw[key] = _parse_bool(key, raw)
        elif key == "seeds":
            kw[key] = _parse_seeds(raw)
        elif key in ("word_dropout_alpha", "learning_rate"):
            kw[key] = _parse_float(key, raw)
        elif key == "neighbor_radius":
            kw[key] = _parse_int(key, raw, minimum=0)
        else:
            kw[key] = _parse_int(key, raw)
    config = ExperimentConfig(**kw)

    if config.parser not in ("transition", "graph"):
        raise ConfigurationError(f"parser: unknown kind {config.parser!r}")
    if config.mode not in ("bilstm", "direct"):
        raise ConfigurationError(f"mode: unknown mode {config.mode!r}")
    if config.decoder not in ("eisner", "cle", "eisner2"):
        raise ConfigurationError(f"decoder: unknown decoder {config.decoder!r}")
    if config.order not in (1, 2):
        raise ConfigurationError(f"order: must be 1 or 2, got {config.order}")
    if config.parser == "graph" and (config.order == 2) != (config.decoder == "eisner2"):
        raise ConfigurationError(
            f"order {config.order} does not fit decoder {config.decoder!r}")
    if config.neighbor_radius not in (0, 1, 2):
        raise ConfigurationError(
            f"neighbor_radius: must be 0, 1 or 2, got {config.neighbor_radius}")
    if config.word_dropout_alpha < 0.0:
        raise ConfigurationError("word_dropout_alpha: must be non-negative")
    if config.learning_rate <= 0.0:
        raise ConfigurationError("learning_rate: must be positive")
    return config


def config_to_items(config: ExperimentConfig) -> List[Tuple[str, str]]:
    """Key=value echo in field order; parses back to an equal config."""
    out: List[Tuple[str, str]] = []
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        if f.name == "features":
            text = ",".join(value)
        elif f.name == "seeds":
            text = ",".join(str(s) for s in value)
        elif isinstance(value, bool):
            text = "true" if value else "false"
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        out.append((f.name, text))
    return out


def parse_config_text(text: str) -> Dict[str, str]:
    """key = value lines; '#' starts a comment; later keys win."""
    items: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"config line {lineno}: expected key=value, got {raw!r}")
        items[key.strip()] = value.strip()
    return items


def load_config(path: Optional[str], overrides: Sequence[str],
                treebank: Optional[str] = None, dev: Optional[str] = None,
                out_dir: Optional[str] = None,
                seed: Optional[int] = None) -> ExperimentConfig:
    items: Dict[str, str] = {}
    if path:
        items.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    for entry in overrides:
        key, sep, value = entry.partition("=")
        if not sep:
            raise ConfigurationError(f"--set {entry!r}: expected KEY=VALUE")
        items[key.strip()] = value.strip()
    if treebank:
        items["train_path"] = treebank
    if dev:
        items["dev_path"] = dev
    if out_dir:
        items["out_dir"] = out_dir
    if seed is not None:
        items["seeds"] = str(seed)
    return config_from_items(items)


# ---- model construction and serialization ----------------------------


def build_model(config: ExperimentConfig, vocab: Vocab, labels: List[str],
                rng: Optional[np.random.Generator] = None):
    """Fresh model per config; the graph parser gets a contextual root vector."""
    store = ParameterStore()
    if rng is None:
        rng = np.random.default_rng(0)
    encoder = build_encoder_params(
        store, vocab, config.mode, word_dim=config.word_dim,
        pos_dim=config.pos_dim, lstm_dim=config.lstm_dim,
        layers=config.lstm_layers, feed_root=(config.parser == "graph"), rng=rng)
    if config.parser == "transition":
        return build_transition_model(store, encoder, vocab, labels,
                                      feature_set=config.features,
                                      hidden_dim=config.hidden_dim, rng=rng)
    return build_graph_model(store, encoder, vocab, labels, order=config.order,
                             decoder=config.decoder, use_dist=config.use_dist,
                             neighbor_radius=config.neighbor_radius,
                             hidden_dim=config.hidden_dim, rng=rng)


_PATH_KEYS = ("train_path", "dev_path", "out_dir")


def save_model(path: str, model, config: ExperimentConfig, seed: int) -> None:
    """MAGIC, version, length-prefixed text header, float32 payload.

    Path fields stay out of the header so the same run is byte-identical
    no matter where its files live.
    """
    lines = [f"seed\t{int(seed)}"]
    lines.extend(f"config\t{key}\t{quote(value, safe='')}"
                 for key, value in config_to_items(config)
                 if key not in _PATH_KEYS)
    lines.extend(f"label\t{quote(lab, safe='')}" for lab in model.labels)
    vocab = model.vocab
    lines.extend(f"word\t{quote(w, safe='')}\t{vocab.counts[w]}" for w in vocab.words)
    lines.extend(f"pos\t{quote(p, safe='')}" for p in vocab.pos_tags)
    store = model.store
    for name in store.names():
        rows, cols = store.params[name].data.shape
        lines.append(f"param\t{name}\t{rows}\t{cols}")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as sink:
        sink.write(MAGIC)
        sink.write(struct.pack("<I", FORMAT_VERSION))
        sink.write(struct.pack("<I", len(header)))
        sink.write(header)
        for name in store.names():
            sink.write(store.params[name].data.astype("<f4").tobytes(order="C"))


@dataclass
class LoadedModel:
    model: object
    config: ExperimentConfig
    seed: int


def load_model(path: str) -> LoadedModel:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    if len(blob) < 12:
        raise ModelFormatError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version}")
    (header_len,) = struct.unpack_from("<I", blob, 8)
    header_end = 12 + header_len
    if len(blob) < header_end:
        raise ModelFormatError(f"{path}: truncated header")
    header = blob[12:header_end].decode("utf-8")

    config_items: Dict[str, str] = {}
    labels: List[str] = []
    words: List[str] = []
    counts: Dict[str, int] = {}
    pos_tags: List[str] = []
    manifest: List[Tuple[str, int, int]] = []
    seed = 0
    for line in header.splitlines():
        kind, _, rest = line.partition("\t")
        if kind == "seed":
            seed = int(rest)
        elif kind == "config":
            key, _, value = rest.partition("\t")
            config_items[key] = unquote(value)
        elif kind == "label":
            labels.append(unquote(rest))
        elif kind == "word":
            form, _, count = rest.rpartition("\t")
            words.append(unquote(form))
            counts[unquote(form)] = int(count)
        elif kind == "pos":
            pos_tags.append(unquote(rest))
        elif kind == "param":
            name, _, shape = rest.partition("\t")
            rows, _, cols = shape.partition("\t")
            manifest.append((name, int(rows), int(cols)))
        else:
            raise ModelFormatError(f"{path}: unknown header entry {kind!r}")

    config = config_from_items(config_items)
    vocab = Vocab(words, pos_tags, counts)
    expected = sum(4 * rows * cols for _, rows, cols in manifest)
    payload = blob[header_end:]
    if len(payload) != expected:
        raise ModelFormatError(
            f"{path}: payload is {len(payload)} bytes, manifest needs {expected}")

    model = build_model(config, vocab, labels)
    store = model.store
    if [name for name, _, _ in manifest] != store.names():
        raise ModelFormatError(f"{path}: parameter manifest does not match config")
    offset = 0
    for name, rows, cols in manifest:
        if store.params[name].data.shape != (rows, cols):
            raise ModelFormatError(f"{path}: shape mismatch for parameter {name}")
        count = rows * cols
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        store.params[name].data[...] = arr.reshape(rows, cols).astype(np.float64)
        offset += 4 * count
    return LoadedModel(model=model, config=config, seed=seed)


# ---- training loop ---------------------------------------------------


def parse_corpus(model, sentences: Sequence[Sentence]) -> List[DepTree]:
    if isinstance(model, TransitionModel):
        return [transition.parse(model, s) for s in sentences]
    return [graph.parse(model, s) for s in sentences]


def _dev_report(model, spec, dev: Sequence[Sentence], seed: int):
    if spec is None:
        return las(dev, parse_corpus(model, dev))
    return ablation.evaluate_ablated(model, spec, dev, seed=seed)


def run_training(config: ExperimentConfig, train: Sequence[Sentence],
                 dev: Sequence[Sentence], seed: int,
                 spec: Optional[ablation.AblationSpec] = None,
                 log: Optional[TextIO] = None):
    """Train one model for one seed with best-dev-LAS epoch selection.

    Returns (model, best dev LAS, best epoch). The ablation spec, when
    given, routes every epoch through the ablated trainer and evaluates
    under the same exclusion policy.
    """
    vocab = build_vocab(list(train))
    labels = sorted({lab for s in train for lab in s.gold_labels})
    model = build_model(config, vocab, labels, rng=component_rng(seed, "init"))
    shuffle_rng = component_rng(seed, "shuffle")
    dropout_rng = component_rng(seed, "dropout")
    ablation_rng = component_rng(seed, "ablation")

    best_las = -1.0
    best_epoch = 0
    best_params = model.store.snapshot()
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train))
        epoch_sents = [train[int(i)] for i in order]
        stats = ablation.train_epoch_ablated(
            model, spec, epoch_sents, ablation_rng,
            learning_rate=config.learning_rate,
            word_dropout_alpha=config.word_dropout_alpha,
            dropout_rng=dropout_rng)
        report = _dev_report(model, spec, dev, seed)
        if log is not None:
            log.write(f"epoch {epoch}\tdev_las {report.las:.2f}\t"
                      f"dev_uas {report.uas:.2f}\tloss {stats['loss']:.4f}\n")
        if report.las > best_las:
            best_las = report.las
            best_epoch = epoch
            best_params = model.store.snapshot()
    model.store.restore(best_params)
    if log is not None:
        log.write(f"best epoch {best_epoch}\tdev_las {best_las:.2f}\n")
    return model, best_las, best_epoch


# ---- commands --------------------------------------------------------


def _read_corpora(config: ExperimentConfig):
    if not config.train_path:
        raise ConfigurationError("no training treebank given (--treebank or train_path)")
    if not config.dev_path:
        raise ConfigurationError("no development treebank given (--dev or dev_path)")
    return read_conllu(config.train_path), read_conllu(config.dev_path)


def _out_path(config: ExperimentConfig, name: str) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set, args.treebank, args.dev,
                         args.out_dir, args.seed)
    train, dev = _read_corpora(config)
    for seed in config.seeds:
        log_path = _out_path(config, f"train_seed{seed}.log")
        with open(log_path, "w", encoding="utf-8") as log:
            model, best_las, best_epoch = run_training(config, train, dev,
                                                       seed, log=log)
        model_path = _out_path(config, f"model_seed{seed}.dprs")
        save_model(str(model_path), model, config, seed)
        print(f"seed {seed}\tbest_epoch {best_epoch}\tdev_las {best_las:.2f}\t"
              f"model {model_path}")
    return 0


def _is_plain_token_line(line: str) -> bool:
    if not line or line.startswith("#"):
        return False
    first = line.split("\t", 1)[0].split(" ", 1)[0]
    return first.isdigit()


def _substitute_predictions(lines: List[str], trees: List[DepTree]) -> List[str]:
    """Rewrite HEAD/DEPREL of plain token lines; everything else verbatim."""
    out: List[str] = []
    sent_idx = -1
    tok_idx = 0
    in_sentence = False
    for raw in lines:
        line = raw.rstrip("\n").rstrip("\r")
        if _is_plain_token_line(line):
            if not in_sentence:
                in_sentence = True
                sent_idx += 1
                tok_idx = 0
            cols = line.split("\t")
            if len(cols) == 1:
                cols = line.split()
            tree = trees[sent_idx]
            cols[6] = str(tree.heads[tok_idx])
            cols[7] = tree.labels[tok_idx] if tree.labels else "_"
            tok_idx += 1
            out.append("\t".join(cols))
        else:
            if not line.strip():
                in_sentence = False
            out.append(line)
    return out


def cmd_parse(args: argparse.Namespace) -> int:
    loaded = load_model(args.model)
    source = Path(args.input).read_text(encoding="utf-8")
    sentences = parse_conllu(source, validate=False)
    trees = parse_corpus(loaded.model, sentences)
    lines = _substitute_predictions(source.splitlines(), trees)
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    if not args.dev:
        raise ConfigurationError("eval needs --dev")
    dev = read_conllu(args.dev)
    reports = []
    for model_path in args.model:
        loaded = load_model(model_path)
        report = recall_by_length(dev, parse_corpus(loaded.model, dev))
        stem = Path(model_path).stem
        reports.append((stem, loaded.config.name(), report))
        print(f"model {stem}\tlas {report.las:.2f}\tuas {report.uas:.2f}")

    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for kind, fname in (("recall", "fig2.tsv"), ("precision", "fig8.tsv")):
            with open(out / fname, "w", encoding="utf-8") as sink:
                for i, (stem, _, report) in enumerate(reports):
                    write_length_curve(sink, stem, report, kind=kind,
                                       header=(i == 0))
        grouped: Dict[str, List[float]] = {}
        for _, name, report in reports:
            grouped.setdefault(name, []).append(report.las)
        rows = [(name, Path(args.dev).stem, scores)
                for name, scores in grouped.items()]
        with open(out / "table1.tsv", "w", encoding="utf-8") as sink:
            write_score_table(sink, rows)
    return 0


TRANSITION_LADDER: Tuple[Tuple[str, Tuple[str, ...]], ...] = (
    ("s0", ("s0",)),
    ("+s1", ("s0", "s1")),
    ("+b0", ("s0", "s1", "b0")),
    ("+s0L", ("s0", "s1", "b0", "s0L")),
    ("+s1R", ("s0", "s1", "b0", "s0L", "s1R")),
)

GRAPH_LADDER: Tuple[Tuple[str, bool, int], ...] = (
    ("base", False, 0),
    ("+dist", True, 0),
    ("+h±1,d±1", True, 1),
    ("+h±2,d±2", True, 2),
)


def _sweep_cells(config: ExperimentConfig):
    """(label, cell config) pairs: feature ladder crossed with both modes
    (and with both orders for the graph parser)."""
    cells = []
    if config.parser == "transition":
        for label, feats in TRANSITION_LADDER:
            for mode in ("bilstm", "direct"):
                cells.append((label, mode,
                              replace(config, mode=mode, features=feats)))
    else:
        for order in (1, 2):
            decoder = "eisner2" if order == 2 else \
                (config.decoder if config.decoder != "eisner2" else "eisner")
            for label, use_dist, radius in GRAPH_LADDER:
                for mode in ("bilstm", "direct"):
                    cells.append((f"o{order}:{label}", mode,
                                  replace(config, mode=mode, order=order,
                                          decoder=decoder, use_dist=use_dist,
                                          neighbor_radius=radius)))
    return cells


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set, args.treebank, args.dev,
                         args.out_dir, args.seed)
    train, dev = _read_corpora(config)
    rows = []
    for label, mode, cell_config in _sweep_cells(config):
        scores = [run_training(cell_config, train, dev, seed)[1]
                  for seed in config.seeds]
        mean, std = seed_stats(scores)
        rows.append((label, mode, mean, std))
        print(f"cell {label}\tmode {mode}\tmean_las {mean:.2f}\tstddev {std:.2f}")
    fname = "fig3a.tsv" if config.parser == "transition" else "fig3b.tsv"
    with open(_out_path(config, fname), "w", encoding="utf-8") as sink:
        sink.write("cell\tmode\tmean_las\tstddev\n")
        for label, mode, mean, std in rows:
            sink.write(f"{label}\t{mode}\t{mean:.2f}\t{std:.2f}\n")
    return 0


def cmd_impact(args: argparse.Namespace) -> int:
    loaded = load_model(args.model)
    model = loaded.model
    if not args.dev:
        raise ConfigurationError("impact needs --dev")
    dev = read_conllu(args.dev)
    out = Path(args.out_dir or loaded.config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    is_transition = isinstance(model, TransitionModel)
    wanted = args.taxonomy
    jobs = []
    if wanted in (DISTANCE_RELATION, "all"):
        if model.encoder.mode == "bilstm":
            jobs.append((DISTANCE_RELATION, "fig4.tsv"))
        elif wanted == DISTANCE_RELATION:
            raise ConfigurationError(
                "distance_relation impacts need a bilstm-mode model")
    if wanted in (CONFIG_POSITION, "all") and (is_transition or wanted != "all"):
        if not is_transition:
            raise ConfigurationError(
                "config_position impacts need a transition model")
        jobs.append((CONFIG_POSITION, "fig5a.tsv"))
    if wanted in (TREE_POSITION, "all") and (not is_transition or wanted != "all"):
        if is_transition:
            raise ConfigurationError("tree_position impacts need a graph model")
        jobs.append((TREE_POSITION, "fig5b.tsv"))
    if not jobs:
        raise ConfigurationError(f"no applicable taxonomy for {wanted!r}")

    for taxonomy, fname in jobs:
        if taxonomy == DISTANCE_RELATION:
            records = collect_vector_impacts(dev, model.encoder, model.vocab)
        elif taxonomy == CONFIG_POSITION:
            records = collect_transition_impacts(model, dev)
        else:
            records = collect_graph_impacts(model, dev)
        rows = aggregate(records)
        with open(out / fname, "w", encoding="utf-8") as sink:
            write_impact_tsv(sink, taxonomy, rows)
        print(f"{taxonomy}\trecords {len(records)}\tbuckets {len(rows)}\t"
              f"-> {out / fname}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set, args.treebank, args.dev,
                         args.out_dir, args.seed)
    if not args.spec:
        raise ConfigurationError("ablate needs at least one --spec")
    specs = [ablation.AblationSpec(config.parser, text) for text in args.spec]
    train, dev = _read_corpora(config)

    baseline = [run_training(config, train, dev, seed)[1]
                for seed in config.seeds]
    ablated: Dict[str, List[float]] = {}
    for spec in specs:
        ablated[spec.position] = [
            run_training(config, train, dev, seed, spec=spec)[1]
            for seed in config.seeds]
    rows = ablation.compare(baseline, ablated)
    fname = "fig6a.tsv" if config.parser == "transition" else "fig6b.tsv"
    with open(_out_path(config, fname), "w", encoding="utf-8") as sink:
        ablation.write_ablation_tsv(sink, rows)
    for name, mean, base, drop, std, count in rows:
        print(f"spec {name}\tmean_las {mean:.2f}\tbaseline {base:.2f}\t"
              f"drop {drop:.2f}\tstddev {std:.2f}\tseeds {count}")
    return 0


# ---- argument parsing ------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override one config entry")
    sub.add_argument("--seed", type=int, help="replace the seed list with one seed")
    sub.add_argument("--out-dir", help="directory for models, logs and TSVs")
    sub.add_argument("--treebank", help="training treebank (CoNLL-U)")
    sub.add_argument("--dev", help="development treebank (CoNLL-U)")


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deplab", description="dependency parsing laboratory")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="train one model per seed")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("parse", help="annotate a CoNLL-U file with a model")
    _add_common(p)
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--input", required=True, help="CoNLL-U file to parse")
    p.add_argument("--output", help="output path (default: stdout)")
    p.set_defaults(func=cmd_parse)

    p = subs.add_parser("eval", help="score models on a treebank")
    _add_common(p)
    p.add_argument("--model", action="append", required=True,
                   help="model file (repeatable)")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("sweep", help="feature-ladder sweep over both modes")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("impact", help="derivative-based attribution tables")
    _add_common(p)
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--taxonomy", default="all",
                   choices=[DISTANCE_RELATION, CONFIG_POSITION, TREE_POSITION, "all"])
    p.set_defaults(func=cmd_impact)

    p = subs.add_parser("ablate", help="train and score ablated models")
    _add_common(p)
    p.add_argument("--spec", action="append", default=[],
                   help="position to ablate (repeatable)")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
