"""Batch construction, the training schedule, and checkpointing.

Sentences are sorted by length (descending, stable) and cut into
consecutive fixed-size batches, each padded to its own longest sentence.
The learning rate starts at lr0 and is divided by sqrt(2) every epoch;
training stops once the post-processed dev harmonic F1 has failed to
improve for ``patience`` consecutive epochs.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .corpus_io import TAG_INDEX, TAGS, Dataset, TaggedSentence
from .embeddings import (
    SPECIAL_TOKENS,
    CharVocabulary,
    EmbeddingTable,
    Vocabulary,
)
from .evaluate import score
from .model import (
    BatchArrays,
    ModelParams,
    Tables,
    batch_loss,
    build_arrays,
    init_params,
    predict_batch,
)
from .postprocess import postprocess_sentence

CHECKPOINT_MAGIC = "CSNER1"


class TrainingError(Exception):
    pass


class CheckpointError(Exception):
    pass


@dataclass
class TrainingConfig:
    hidden: int = 200  # word LSTM hidden size per direction
    char_hidden: int = 150
    word_dim: int = 300
    char_dim: int = 150
    batch_size: int = 64
    dropout: float = 0.4
    lr0: float = 0.01
    decay: float = math.sqrt(2.0)
    patience: int = 2
    seed: int = 1
    max_epochs: int = 50
    float64: bool = False

    def validate(self) -> None:
        for name in ("hidden", "char_hidden", "word_dim", "char_dim",
                     "batch_size", "max_epochs", "seed"):
            if getattr(self, name) < (0 if name == "seed" else 1):
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.lr0 <= 0 or self.decay <= 0:
            raise ValueError("lr0 and decay must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")

    @property
    def dtype(self):
        return np.float64 if self.float64 else np.float32


@dataclass
class TaggerModel:
    params: ModelParams
    tables: Tables


def new_model(cfg: TrainingConfig, table: EmbeddingTable, chars: CharVocabulary,
              rng: np.random.Generator) -> TaggerModel:
    if table.dim != cfg.word_dim:
        raise ValueError(
            f"vector file dimension {table.dim} != configured word_dim {cfg.word_dim}"
        )
    table.vectors = table.vectors.astype(cfg.dtype)
    params = init_params(
        n_chars=len(chars),
        word_dim=cfg.word_dim,
        rng=rng,
        char_dim=cfg.char_dim,
        char_hidden=cfg.char_hidden,
        word_hidden=cfg.hidden,
        dtype=cfg.dtype,
        special_rows=table.vectors[:4],
    )
    return TaggerModel(params, Tables(table, chars))


@dataclass
class Batch:
    arrays: BatchArrays
    order: list[int]  # original corpus position of each sentence
    gold_flat: np.ndarray | None = None

    @property
    def n_tokens(self) -> int:
        return sum(self.arrays.lengths)


def make_batches(
    dataset: Dataset,
    batch_size: int,
    tables: Tables,
    dtype=np.float32,
    surfaces: Dataset | None = None,
) -> list[Batch]:
    """Sort by length descending (stable), chunk, index and pad.

    ``surfaces`` supplies the raw spellings for the character encoder
    when ``dataset`` holds normalized tokens.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    if len(dataset) == 0:
        raise ValueError("cannot batch an empty dataset")
    if surfaces is not None and len(surfaces) != len(dataset):
        raise ValueError("surface dataset is not aligned with the input")
    order = sorted(range(len(dataset)), key=lambda i: -len(dataset.sentences[i]))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        sents = [dataset.sentences[i] for i in chunk]
        surface_seqs = (
            [surfaces.sentences[i].tokens for i in chunk] if surfaces is not None else None
        )
        arrays = build_arrays([s.tokens for s in sents], tables, dtype, surface_seqs)
        gold_flat = None
        if all(s.tags is not None for s in sents):
            gold = np.zeros((arrays.max_len, len(sents)), dtype=np.int64)
            for j, sent in enumerate(sents):
                gold[: len(sent), j] = [TAG_INDEX[t] for t in sent.tags]
            gold_flat = gold.reshape(-1)
        batches.append(Batch(arrays, chunk, gold_flat))
    return batches


def lr_schedule(lr0: float, epoch: int, decay: float = math.sqrt(2.0)) -> float:
    """Time-based decay: lr0 / decay**epoch, epoch counted from 0."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return lr0 / decay**epoch


def train_epoch(
    model: TaggerModel,
    batches: list[Batch],
    lr: float,
    rng: np.random.Generator,
    adam: ad.AdamState,
    dropout_rate: float = 0.4,
) -> float:
    """One optimization pass; returns the token-weighted mean loss."""
    params = model.params.tensors()
    total_loss = 0.0
    total_tokens = 0
    for batch in batches:
        if batch.gold_flat is None:
            raise TrainingError("cannot train on unlabeled sentences")
        ad.zero_grads(params)
        loss = batch_loss(
            batch.arrays, batch.gold_flat, model.tables, model.params,
            training=True, rng=rng, dropout_rate=dropout_rate,
        )
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} (lr {lr})")
        ad.backward(loss)
        try:
            ad.adam_step(params, adam, lr)
        except ad.NonFiniteGradient as exc:
            raise TrainingError(str(exc)) from exc
        total_loss += value * batch.n_tokens
        total_tokens += batch.n_tokens
    return total_loss / total_tokens


def predict_dataset(
    model: TaggerModel,
    dataset: Dataset,
    batch_size: int = 64,
    surfaces: Dataset | None = None,
    post: bool = True,
) -> list[list]:
    """Predicted tag sequences in corpus order."""
    dtype = model.params.dtype
    batches = make_batches(dataset, batch_size, model.tables, dtype, surfaces)
    results: list[list | None] = [None] * len(dataset)
    for batch in batches:
        for position, ids in zip(batch.order, predict_batch(batch.arrays, model.tables, model.params)):
            tags = [TAGS[i] for i in ids]
            results[position] = postprocess_sentence(tags) if post else tags
    return results


def dev_f1(model: TaggerModel, dev: Dataset, batch_size: int,
           surfaces: Dataset | None = None, post: bool = True) -> float:
    predicted = predict_dataset(model, dev, batch_size, surfaces, post=post)
    pred_ds = Dataset(
        [TaggedSentence(s.tokens, tags) for s, tags in zip(dev, predicted)], "pred"
    )
    return score(dev, pred_ds).harmonic_f1


@dataclass
class Checkpoint:
    """A frozen model: every tensor (trainables plus the fixed word
    matrix), both vocabularies, the config, and the dev score it earned."""

    tensors: dict[str, np.ndarray]
    word_tokens: list[str]
    char_list: list[str]
    config: TrainingConfig
    dev_score: float
    epoch: int


def snapshot(model: TaggerModel, cfg: TrainingConfig, dev_score: float, epoch: int) -> Checkpoint:
    tensors = {name: t.data.copy() for name, t in model.params.tensors().items()}
    tensors["word_fixed"] = model.tables.words.vectors.copy()
    return Checkpoint(
        tensors=tensors,
        word_tokens=list(model.tables.words.vocabulary.tokens),
        char_list=list(model.tables.chars.chars),
        config=cfg,
        dev_score=dev_score,
        epoch=epoch,
    )


def restore_model(ckpt: Checkpoint) -> TaggerModel:
    """Rebuild a runnable model from a checkpoint."""
    cfg = ckpt.config
    if ckpt.word_tokens[:4] != list(SPECIAL_TOKENS):
        raise CheckpointError("vocabulary does not start with PAD/UNK/USR/URL")
    vocab = Vocabulary(ckpt.word_tokens[4:], specials=True)
    chars = CharVocabulary(ckpt.char_list)
    dtype = cfg.dtype
    for name in ("char_embed", "proj_w", "proj_b", "word_specials", "word_fixed"):
        if name not in ckpt.tensors:
            raise CheckpointError(f"missing tensor {name!r}")
    t = {name: ad.param(data.astype(dtype)) for name, data in ckpt.tensors.items()}

    def lstm(prefix, input_size, hidden):
        try:
            return ad.LstmParams(
                t[f"{prefix}.wx"], t[f"{prefix}.wh"], t[f"{prefix}.b"], input_size, hidden
            )
        except KeyError as exc:
            raise CheckpointError(f"missing tensor {exc}") from None

    word_in = cfg.word_dim + 2 * cfg.char_hidden
    params = ModelParams(
        char_embed=t["char_embed"],
        char_fwd=lstm("char_fwd", cfg.char_dim, cfg.char_hidden),
        char_bwd=lstm("char_bwd", cfg.char_dim, cfg.char_hidden),
        word_fwd=lstm("word_fwd", word_in, cfg.hidden),
        word_bwd=lstm("word_bwd", word_in, cfg.hidden),
        proj_w=t["proj_w"],
        proj_b=t["proj_b"],
        word_specials=t["word_specials"],
        char_dim=cfg.char_dim,
        char_hidden=cfg.char_hidden,
        word_dim=cfg.word_dim,
        word_hidden=cfg.hidden,
        n_tags=len(TAGS),
    )
    for name, tensor in params.tensors().items():
        if tensor.data.shape != ckpt.tensors[name].shape:
            raise CheckpointError(f"unexpected shape for {name}")
    table = EmbeddingTable(vocab, ckpt.tensors["word_fixed"].astype(dtype))
    return TaggerModel(params, Tables(table, chars))


def fit(
    model: TaggerModel,
    train: Dataset,
    dev: Dataset,
    cfg: TrainingConfig,
    train_surfaces: Dataset | None = None,
    dev_surfaces: Dataset | None = None,
    rng: np.random.Generator | None = None,
    log_fn=None,
) -> Checkpoint:
    """Train with per-epoch dev selection and early stopping.

    The dev metric is the harmonic-mean F1 of post-processed predictions,
    matching the tuned pipeline.  Returns the best checkpoint seen.
    """
    cfg.validate()
    if not dev.labeled:
        raise TrainingError("dev split must carry gold tags")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    batches = make_batches(train, cfg.batch_size, model.tables, cfg.dtype, train_surfaces)
    adam = ad.AdamState()
    best: Checkpoint | None = None
    bad_epochs = 0
    for epoch in range(1, cfg.max_epochs + 1):
        lr = lr_schedule(cfg.lr0, epoch - 1, cfg.decay)
        loss = train_epoch(model, batches, lr, rng, adam, cfg.dropout)
        f1 = dev_f1(model, dev, cfg.batch_size, dev_surfaces, post=True)
        if log_fn is not None:
            log_fn(epoch, loss, lr, f1)
        if best is None or f1 > best.dev_score:
            best = snapshot(model, cfg, f1, epoch)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    return best


# ---------------------------------------------------------------------------
# checkpoint file format: a plain-text header (magic, meta, one line per
# tensor with name/shape/offset, vocab entries, payload size, "end"),
# then little-endian float32 tensor data and length-prefixed UTF-8 token
# lists at the stated offsets.


def _pack_tokens(tokens: list[str]) -> bytes:
    out = bytearray()
    for token in tokens:
        raw = token.encode("utf-8")
        out += struct.pack("<I", len(raw))
        out += raw
    return bytes(out)


def _unpack_tokens(blob: bytes, count: int) -> list[str]:
    tokens = []
    pos = 0
    for _ in range(count):
        if pos + 4 > len(blob):
            raise CheckpointError("truncated vocabulary block")
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + n > len(blob):
            raise CheckpointError("truncated vocabulary entry")
        tokens.append(blob[pos : pos + n].decode("utf-8"))
        pos += n
    if pos != len(blob):
        raise CheckpointError("trailing bytes after vocabulary block")
    return tokens


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header = [CHECKPOINT_MAGIC]
    meta = {
        "config": asdict(ckpt.config),
        "dev_score": ckpt.dev_score,
        "epoch": ckpt.epoch,
    }
    header.append("meta " + json.dumps(meta, sort_keys=True))
    payload = bytearray()
    for name, data in ckpt.tensors.items():
        raw = np.ascontiguousarray(data, dtype="<f4").tobytes()
        shape = ",".join(str(n) for n in data.shape)
        header.append(f"tensor {name} {shape} {len(payload)}")
        payload += raw
    for kind, tokens in (("word", ckpt.word_tokens), ("char", ckpt.char_list)):
        raw = _pack_tokens(tokens)
        header.append(f"vocab {kind} {len(tokens)} {len(payload)}")
        payload += raw
    header.append(f"payload {len(payload)}")
    header.append("end")
    with open(path, "wb") as fp:
        fp.write("\n".join(header).encode("utf-8") + b"\n")
        fp.write(bytes(payload))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fp:
        blob = fp.read()
    try:
        header_end = blob.index(b"\nend\n")
    except ValueError:
        raise CheckpointError("missing header terminator") from None
    header_lines = blob[:header_end].decode("utf-8", errors="replace").split("\n")
    payload = blob[header_end + len(b"\nend\n") :]
    if header_lines[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {header_lines[0]!r}")

    meta = None
    tensor_specs = []
    vocab_specs = {}
    declared = None
    for line in header_lines[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            meta = json.loads(rest)
        elif kind == "tensor":
            name, shape_s, offset_s = rest.rsplit(" ", 2)
            shape = tuple(int(n) for n in shape_s.split(","))
            tensor_specs.append((name, shape, int(offset_s)))
        elif kind == "vocab":
            name, count_s, offset_s = rest.split(" ")
            vocab_specs[name] = (int(count_s), int(offset_s))
        elif kind == "payload":
            declared = int(rest)
        else:
            raise CheckpointError(f"unrecognized header line {line!r}")
    if meta is None or declared is None or "word" not in vocab_specs or "char" not in vocab_specs:
        raise CheckpointError("incomplete header")
    if len(payload) != declared:
        raise CheckpointError(
            f"payload is {len(payload)} bytes, header declares {declared}"
        )

    tensors = {}
    for name, shape, offset in tensor_specs:
        size = 4 * int(np.prod(shape))
        if offset + size > len(payload):
            raise CheckpointError(f"tensor {name} overruns the payload")
        tensors[name] = (
            np.frombuffer(payload, dtype="<f4", count=int(np.prod(shape)), offset=offset)
            .reshape(shape)
            .copy()
        )

    def read_tokens(kind):
        count, offset = vocab_specs[kind]
        starts = sorted(off for _, off in vocab_specs.values() if off > offset)
        end = starts[0] if starts else declared
        return _unpack_tokens(payload[offset:end], count)

    try:
        cfg = TrainingConfig(**meta["config"])
    except TypeError as exc:
        raise CheckpointError(f"bad config block: {exc}") from None
    return Checkpoint(
        tensors=tensors,
        word_tokens=read_tokens("word"),
        char_list=read_tokens("char"),
        config=cfg,
        dev_score=float(meta["dev_score"]),
        epoch=int(meta["epoch"]),
    )
