"""Training loop, raw-image evaluation, metrics and the generalization report."""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import data, model as model_mod, nncore, preprocess
from .errors import ConfigError, DataError, ForensicsError, NumericError
from .optim import AdamHyper, AdamState, adam_step

MODEL_IDS = {"none": "M", "blur": "M_GB", "noise": "M_GN", "mixed": "M_MIX"}
TABLE_MODELS = ("M", "M_GB", "M_GN")


@dataclass
class TrainConfig:
    mode: str = "none"
    batch_size: int = 64
    epochs: int = 20
    init_seed: int = 0
    shuffle_seed: int = 0
    preprocess_seed: int = 0
    adam: AdamHyper = field(default_factory=AdamHyper)
    model: model_mod.DiscriminatorConfig = field(default_factory=model_mod.DiscriminatorConfig)
    checkpoint_every: int = 0  # epochs between checkpoints; 0 = final only
    allow_experimental: bool = False  # unlocks mode="mixed"

    def __post_init__(self):
        if self.mode in preprocess.EXPERIMENTAL_KINDS and not self.allow_experimental:
            raise ConfigError(f"mode {self.mode!r} is experimental; set allow_experimental to use it")
        self.preprocess_mode = preprocess.PreprocessMode(self.mode)
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError(f"batch size must be even and >= 2, got {self.batch_size}", "config.batch_size")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")

    @property
    def model_id(self):
        return MODEL_IDS[self.mode]

    def to_dict(self):
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    train_acc: float

    def line(self):
        return f"{self.epoch}\t{self.mean_loss!r}\t{self.train_acc!r}"


@dataclass
class TrainResult:
    model: model_mod.Discriminator
    optimizer: AdamState
    log: list
    checkpoint_path: Path = None


def _rng_digest(rng):
    state = json.dumps(rng.bit_generator.state, sort_keys=True, default=str)
    return hashlib.sha256(state.encode()).hexdigest()


def _metadata(config, epoch, pre_rng):
    return {
        "epoch": epoch,
        "model_id": config.model_id,
        "preprocess": config.mode,
        "seeds": {"init": config.init_seed, "shuffle": config.shuffle_seed, "preprocess": config.preprocess_seed},
        "batch_size": config.batch_size,
        "rng_state_sha256": _rng_digest(pre_rng),
    }


def train(config, real, fake, out_dir=None):
    """Train one discriminator on pixel arrays ``real`` / ``fake`` (N, S, S, 3).

    Each batch: draw preprocessing -> apply to all images -> normalize ->
    train-mode forward -> BCE -> backward -> Adam. With ``out_dir`` the epoch
    log is appended to ``train_log.tsv`` as it goes and checkpoints are
    written there (``model.ckpt`` at the end).
    """
    real, fake = np.asarray(real), np.asarray(fake)
    net = model_mod.build(config.model, config.init_seed)
    opt = AdamState.zeros_like(net.trainable(), config.adam)
    pre_rng = np.random.default_rng(config.preprocess_seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = (out_dir / "train_log.tsv").open("w", encoding="utf-8")
    logs = []
    try:
        for epoch in range(1, config.epochs + 1):
            losses, correct, seen = [], 0, 0
            batches = data.make_batches(range(len(real)), range(len(fake)), config.batch_size, [config.shuffle_seed, epoch])
            for b, (items, labels) in enumerate(batches):
                half = len(items) // 2
                try:
                    images = np.concatenate([real[items[:half]], fake[items[half:]]]).astype(np.float32)
                    draw = preprocess.draw_batch_preprocessing(config.preprocess_mode, pre_rng, f"{epoch}:{b}")
                    images = preprocess.apply(draw, images, pre_rng)
                    logits = net.forward(data.to_tensor(images), "train")
                    loss, grad = nncore.bce_with_logits(logits, labels)
                    if not np.isfinite(loss):
                        raise NumericError(f"non-finite loss {loss}", "numeric.nonfinite")
                    grads = net.backward(grad)
                    new_params, opt = adam_step(net.trainable(), grads, opt)
                    net.params.update(new_params)
                except ForensicsError as exc:
                    raise ForensicsError(f"epoch {epoch}, batch {b}: {exc}", exc.category) from exc
                losses.append(loss)
                correct += int(((logits > 0).astype(np.int64) == labels).sum())
                seen += len(labels)
            if not losses:
                raise DataError(
                    f"no complete batch: {len(real)} real / {len(fake)} fake images with batch size {config.batch_size}",
                    "config.batch_size",
                )
            entry = EpochLog(epoch, float(np.mean(losses)), correct / seen)
            logs.append(entry)
            if log_file is not None:
                log_file.write(entry.line() + "\n")
                log_file.flush()
                if config.checkpoint_every and epoch % config.checkpoint_every == 0 and epoch < config.epochs:
                    model_mod.save_checkpoint(
                        out_dir / f"checkpoint_epoch{epoch:04d}.ckpt", net, _metadata(config, epoch, pre_rng), opt
                    )
    finally:
        if log_file is not None:
            log_file.close()
    net.cache = None
    ckpt_path = None
    if out_dir is not None:
        ckpt_path = model_mod.save_checkpoint(out_dir / "model.ckpt", net, _metadata(config, config.epochs, pre_rng), opt)
    return TrainResult(net, opt, logs, ckpt_path)


def read_train_log(path):
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        e, loss, acc = line.split("\t")
        out.append(EpochLog(int(e), float(loss), float(acc)))
    return out


# -- metrics -----------------------------------------------------------------


def _pct(num, den):
    return Fraction(100 * num, den) if den else None


def format_pct(value):
    """Two decimals, half-up, computed exactly from a :class:`Fraction`."""
    if value is None:
        return "n/a"
    scaled = Fraction(value) * 100
    n = int(scaled + Fraction(1, 2)) if scaled >= 0 else -int(-scaled + Fraction(1, 2))
    sign = "-" if n < 0 else ""
    n = abs(n)
    return f"{sign}{n // 100}.{n % 100:02d}"


@dataclass(frozen=True)
class Metrics:
    """Confusion counts with positive = real. Rates are exact percentages."""

    tp: int
    fn: int
    tn: int
    fp: int

    @property
    def total(self):
        return self.tp + self.fn + self.tn + self.fp

    @property
    def acc(self):
        return _pct(self.tp + self.tn, self.total)

    @property
    def tpr(self):
        return _pct(self.tp, self.tp + self.fn)

    @property
    def tnr(self):
        return _pct(self.tn, self.tn + self.fp)

    def as_floats(self):
        return {k: (float(v) if v is not None else None) for k, v in (("acc", self.acc), ("tpr", self.tpr), ("tnr", self.tnr))}


def metrics_from_predictions(predicted_real, labels):
    pred = np.asarray(predicted_real, dtype=bool)
    labels = np.asarray(labels)
    if pred.shape != labels.shape:
        raise DataError(f"{pred.size} predictions for {labels.size} labels", "numeric.shape")
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError("labels must be 0 (fake) or 1 (real)", "numeric.value")
    real = labels == 1
    return Metrics(
        tp=int(np.sum(pred & real)), fn=int(np.sum(~pred & real)), tn=int(np.sum(~pred & ~real)), fp=int(np.sum(pred & ~real))
    )


def compute_metrics(scores, labels, threshold=0.5):
    """Confusion counts for ``score > threshold`` meaning "real"."""
    scores = np.asarray(scores)
    if scores.shape != np.shape(labels):
        raise DataError(f"{scores.size} scores for {np.size(labels)} labels", "numeric.shape")
    return metrics_from_predictions(scores > threshold, labels)


def predict_logits(net, pixels, chunk=128):
    """Infer-mode logits for raw (N, S, S, 3) pixels. No preprocessing is applied."""
    pixels = np.asarray(pixels)
    out = np.empty(len(pixels), dtype=np.float64)
    for i in range(0, len(pixels), chunk):
        out[i : i + chunk] = net.forward(data.to_tensor(pixels[i : i + chunk]), "infer")
    return out


def evaluate(net, pixels, labels, chunk=128):
    """Metrics at threshold 0.5 on raw images (real iff logit > 0)."""
    if len(pixels) == 0:
        raise DataError("cannot evaluate on an empty test set", "io.empty_test_set")
    return metrics_from_predictions(predict_logits(net, pixels, chunk) > 0, labels)


def evaluate_manifest(net, manifest, cache=None, chunk=128):
    """Evaluate on a manifest; ``cache`` maps record keys to logits so repeated images are scored once."""
    if len(manifest) == 0:
        raise DataError("cannot evaluate on an empty test manifest", "io.empty_test_set")
    cache = {} if cache is None else cache
    todo = [r for r in dict.fromkeys(manifest.records) if r.key not in cache]
    for i in range(0, len(todo), chunk):
        part = todo[i : i + chunk]
        pixels = np.stack([r.load(net.config.input_size) for r in part])
        for r, z in zip(part, predict_logits(net, pixels, chunk)):
            cache[r.key] = z
    logits = np.array([cache[r.key] for r in manifest])
    return metrics_from_predictions(logits > 0, manifest.labels())


# -- reports -----------------------------------------------------------------


@dataclass
class ReportRow:
    no: int
    detector: str
    testing_set: str
    metrics: Metrics = None


REPORT_COLUMNS = ("no", "detector", "testing_set", "acc", "tpr", "tnr", "tp", "fn", "tn", "fp")


@dataclass
class EvalReport:
    rows: list

    def to_tsv(self):
        """Machine-readable table, rates as full-precision floats."""
        lines = ["\t".join(REPORT_COLUMNS)]
        for r in self.rows:
            if r.metrics is None:
                vals = ["nan"] * 3 + [""] * 4
            else:
                m = r.metrics
                vals = [repr(float(v)) if v is not None else "nan" for v in (m.acc, m.tpr, m.tnr)]
                vals += [str(m.tp), str(m.fn), str(m.tn), str(m.fp)]
            lines.append("\t".join([str(r.no), r.detector, r.testing_set] + vals))
        return "\n".join(lines) + "\n"

    def to_table(self):
        """Human-readable table, rates as percentages rounded half-up to 2 decimals."""
        header = ("No.", "Detector model", "Testing set", "ACC(%)", "TPR(%)", "TNR(%)")
        body = []
        for r in self.rows:
            m = r.metrics
            rates = ("missing",) * 3 if m is None else tuple(format_pct(v) for v in (m.acc, m.tpr, m.tnr))
            body.append((str(r.no), r.detector, r.testing_set) + rates)
        widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
        fmt = lambda row: "  ".join(c.ljust(w) if i < 3 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
        sep = "-" * len(fmt(header))
        return "\n".join([fmt(header), sep] + [fmt(row) for row in body]) + "\n"

    def write(self, out_dir, stem="report"):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{stem}.tsv").write_text(self.to_tsv(), encoding="utf-8")
        (out_dir / f"{stem}.txt").write_text(self.to_table(), encoding="utf-8")

    def by_model(self, detector):
        return [r for r in self.rows if r.detector == detector]


def compose_test_set(real_manifest, fake_manifest):
    return real_manifest + fake_manifest


def generalization_report(models, test_sets):
    """Table-1-shaped report: for each test set, one row per model.

    ``models`` maps detector ids (ordered, e.g. M, M_GB, M_GN) to a
    :class:`~ganforensics.model.Discriminator` or None for a missing
    checkpoint, which yields a row without metrics. ``test_sets`` is a list
    of ``(name, manifest)``. Each model scores every distinct image once, so
    a real half shared across test sets gives the same TPR in every row.
    """
    caches = {name: {} for name in models}
    rows, no = [], 1
    for set_name, manifest in test_sets:
        for name, net in models.items():
            metrics = None if net is None else evaluate_manifest(net, manifest, caches[name])
            rows.append(ReportRow(no, name, set_name, metrics))
            no += 1
    return EvalReport(rows)
