"""Student assembly, the composite training objective, the training loop, and
checkpoints.

The student is encoder -> extractor -> fusion head. Its objective is the
classification cross-entropy plus a weighted mean-squared alignment between
the extracted latent vector and the frozen rationale embedding. Ablation
variants are pure configuration: dropping the guidance term sets its weight
to zero, dropping the extractor routes the head onto the pooled encoder
vector alone.

Checkpoints are a manifest JSON (config snapshot, step, metric history,
tensor catalog) next to one flat little-endian tensor blob; save, load, and
forward round-trip bit-identically.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .config import RunConfig
from .encoder import CrossEncoder, batch_pairs, make_batch, tokenize
from .errors import (
    ConfigurationError,
    DataCompletenessError,
    InputError,
    ValidationError,
)
from .extractors import build_extractor
from .hashing import child_rng, derive_seed
from .schemas import LabeledPair

_TORCH_DTYPES = {"float32": torch.float32, "float64": torch.float64}
_NUMPY_DTYPES = {"float32": "<f4", "float64": "<f8"}


class Variant(str, Enum):
    """Student variants used in the ablation studies."""

    FULL = "full"
    NO_GUIDANCE = "no_guidance"
    CLS_ONLY = "cls_only"

    @property
    def uses_extractor(self) -> bool:
        return self is not Variant.CLS_ONLY


@dataclass
class DistillExample:
    """One training row: a labeled pair plus its teacher rationale embedding."""

    pair: LabeledPair
    rationale: str | None = None
    embedding: np.ndarray | None = None


@dataclass
class EpochRecord:
    step: int
    epoch: int
    l_cls: float
    l_guide: float
    l_total: float
    acc: float
    macro_f1: float


@dataclass
class LossBreakdown:
    """The reported loss components; total is exactly cls + weight * guide."""

    l_cls: float
    l_guide: float
    weight: float
    l_total: float


def total_loss(l_cls: float, l_guide: float, weight: float) -> LossBreakdown:
    if weight < 0:
        raise ConfigurationError("guidance weight must be non-negative")
    return LossBreakdown(l_cls, l_guide, weight, l_cls + weight * l_guide)


def classification_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy, stabilized by max subtraction."""
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise InputError("labels out of range for the logit width")
    shifted = logits - logits.max(dim=1, keepdim=True).values
    log_probs = shifted - torch.logsumexp(shifted, dim=1, keepdim=True)
    return -log_probs.gather(1, labels[:, None]).mean()


def guidance_loss(latent: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Per-example sum of squared differences, averaged over the batch."""
    if latent.shape != targets.shape:
        raise ConfigurationError(
            f"latent shape {tuple(latent.shape)} != target shape {tuple(targets.shape)}"
        )
    return ((latent - targets) ** 2).sum(dim=1).mean()


class FusionHead(nn.Module):
    """Linear classifier over the pooled vector, optionally fused with the latent."""

    def __init__(self, cls_dim: int, latent_dim: int, num_classes: int):
        super().__init__()
        self.cls_dim = cls_dim
        self.latent_dim = latent_dim
        self.linear = nn.Linear(cls_dim + latent_dim, num_classes)

    def forward(self, cls_vector: torch.Tensor, latent: torch.Tensor | None = None) -> torch.Tensor:
        if cls_vector.shape[-1] != self.cls_dim:
            raise ConfigurationError(
                f"pooled vector width {cls_vector.shape[-1]} != head width {self.cls_dim}"
            )
        if self.latent_dim == 0:
            if latent is not None:
                raise ConfigurationError("this head takes no latent vector")
            fused = cls_vector
        else:
            if latent is None or latent.shape[-1] != self.latent_dim:
                raise ConfigurationError(
                    f"head expects a latent vector of width {self.latent_dim}"
                )
            fused = torch.cat([cls_vector, latent], dim=-1)
        return self.linear(fused)


@dataclass
class StudentOutput:
    logits: torch.Tensor
    cls_vector: torch.Tensor
    latent: torch.Tensor | None


class RelevanceStudent(nn.Module):
    """Cross-encoder backbone with an optional latent extractor and fusion head."""

    def __init__(
        self,
        config: RunConfig,
        use_extractor: bool = True,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.config = config
        self.use_extractor = use_extractor
        self.encoder = CrossEncoder(config.encoder, seed=derive_seed(seed, "enc"), dtype=dtype)
        if use_extractor:
            self.extractor = build_extractor(
                config.extractor, config.encoder.width, seed=derive_seed(seed, "ext"), dtype=dtype
            )
            latent_dim = config.extractor.output_dim
        else:
            self.extractor = None
            latent_dim = 0
        self.head = FusionHead(config.encoder.width, latent_dim, config.schema.num_classes)
        _init_head(self.head, derive_seed(seed, "head"))
        self.head.to(dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.head.linear.weight.dtype

    def forward(self, token_ids: torch.Tensor, attention_mask: torch.Tensor) -> StudentOutput:
        encoding = self.encoder(token_ids, attention_mask)
        latent = None
        if self.extractor is not None:
            latent = self.extractor(encoding.hidden, attention_mask)
        logits = self.head(encoding.cls_vector, latent)
        return StudentOutput(logits=logits, cls_vector=encoding.cls_vector, latent=latent)


def _init_head(head: FusionHead, seed: int) -> None:
    generator = torch.Generator().manual_seed(seed % 2**63)
    with torch.no_grad():
        values = torch.empty(head.linear.weight.shape, dtype=torch.float64)
        values.normal_(0.0, 0.02, generator=generator)
        head.linear.weight.copy_(values.to(head.linear.weight.dtype))
        head.linear.bias.zero_()


def parameter_groups(model: RelevanceStudent) -> dict[str, int]:
    groups = {"encoder": 0, "extractor": 0, "head": 0}
    for name, param in model.named_parameters():
        groups[name.split(".", 1)[0]] += param.numel()
    return groups


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: RelevanceStudent
    history: list[EpochRecord]
    best_epoch: int | None
    best_step: int
    checkpoint_dir: Path | None


def _encode_all(examples: Sequence[DistillExample], config: RunConfig):
    rows = [
        tokenize(ex.pair.query, ex.pair.title, config.max_input_tokens,
                 config.encoder.vocab_buckets)
        for ex in examples
    ]
    batch = make_batch(rows)
    labels = torch.tensor([ex.pair.label for ex in examples], dtype=torch.long)
    return batch, labels


def train_student(
    examples: Sequence[DistillExample],
    config: RunConfig,
    variant: Variant = Variant.FULL,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Train a student and checkpoint it at the best validation macro-F1.

    Deterministic under ``config.seed``: the split, the shuffles, the
    initialization, and the optimizer trajectory are all derived from it.
    Zero epochs yields the untrained initialization and an empty history.
    """
    from .evaluation import metrics  # local import; evaluation audits checkpoints

    if len(examples) < 2:
        raise InputError("need at least two examples to split off validation data")
    weight = config.guidance_weight if variant is Variant.FULL else 0.0
    needs_embeddings = variant.uses_extractor and weight > 0
    if needs_embeddings:
        for ex in examples:
            if ex.embedding is None:
                raise DataCompletenessError(
                    f"pair {ex.pair.id!r} has no rationale embedding but the "
                    "guidance weight is positive"
                )
            if ex.embedding.shape[0] != config.extractor.output_dim:
                raise ConfigurationError(
                    f"embedding dim {ex.embedding.shape[0]} != extractor output "
                    f"dim {config.extractor.output_dim}"
                )

    old_threads = torch.get_num_threads()
    if config.torch_threads:
        torch.set_num_threads(config.torch_threads)
    try:
        batch, labels = _encode_all(examples, config)
        targets = None
        if variant.uses_extractor and all(ex.embedding is not None for ex in examples):
            targets = torch.tensor(
                np.stack([ex.embedding for ex in examples]), dtype=torch.float32
            )

        # one stream per seed, shared by every variant: the ablation flags must
        # not perturb the split or the shuffles
        rng = child_rng(config.seed, "train")
        order = rng.permutation(len(examples))
        n_val = max(1, int(round(len(examples) * config.val_fraction)))
        val_idx = torch.tensor(order[:n_val], dtype=torch.long)
        train_idx = order[n_val:]
        if len(train_idx) == 0:
            raise InputError("validation split consumed every example")

        model = RelevanceStudent(
            config, use_extractor=variant.uses_extractor, seed=config.seed
        )
        optimizer = torch.optim.AdamW(
            model.parameters(),
            lr=config.optimizer.lr,
            weight_decay=config.optimizer.weight_decay,
        )

        history: list[EpochRecord] = []
        best_state = copy.deepcopy(model.state_dict())
        best_f1 = None
        best_epoch = None
        best_step = 0
        step = 0
        B = config.optimizer.batch_size
        warmup = config.optimizer.warmup_steps
        for epoch in range(config.optimizer.epochs):
            model.train()
            epoch_order = rng.permutation(train_idx)
            for start in range(0, len(epoch_order), B):
                if warmup and step < warmup:
                    scale = (step + 1) / warmup
                    for group in optimizer.param_groups:
                        group["lr"] = config.optimizer.lr * scale
                elif warmup and step == warmup:
                    for group in optimizer.param_groups:
                        group["lr"] = config.optimizer.lr
                idx = torch.tensor(epoch_order[start : start + B], dtype=torch.long)
                out = model(batch.token_ids[idx], batch.attention_mask[idx])
                loss = classification_loss(out.logits, labels[idx])
                if weight > 0 and targets is not None:
                    loss = loss + weight * guidance_loss(out.latent, targets[idx])
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                step += 1
            record = _evaluate_epoch(
                model, batch, labels, targets, val_idx, weight, config, step, epoch, metrics
            )
            history.append(record)
            # ties keep the latest epoch: more optimization at equal validation
            if best_f1 is None or record.macro_f1 >= best_f1:
                best_f1 = record.macro_f1
                best_state = copy.deepcopy(model.state_dict())
                best_epoch = epoch
                best_step = step
        model.load_state_dict(best_state)

        checkpoint_dir = None
        if out_dir is not None:
            checkpoint_dir = Path(out_dir)
            save_checkpoint(model, config, variant, best_step, history, checkpoint_dir)
            write_history(checkpoint_dir / "history.jsonl", history)
        return TrainResult(model, history, best_epoch, best_step, checkpoint_dir)
    finally:
        torch.set_num_threads(old_threads)


def _evaluate_epoch(
    model, batch, labels, targets, val_idx, weight, config, step, epoch, metrics_fn
) -> EpochRecord:
    model.eval()
    with torch.no_grad():
        out = model(batch.token_ids[val_idx], batch.attention_mask[val_idx])
        l_cls = float(classification_loss(out.logits, labels[val_idx]))
        if out.latent is not None and targets is not None:
            l_guide = float(guidance_loss(out.latent, targets[val_idx]))
        else:
            l_guide = 0.0
        preds = np.argmax(out.logits.numpy(), axis=1)
    report = metrics_fn(preds.tolist(), labels[val_idx].tolist(), config.schema)
    breakdown = total_loss(l_cls, l_guide, weight)
    return EpochRecord(
        step=step,
        epoch=epoch,
        l_cls=l_cls,
        l_guide=l_guide,
        l_total=breakdown.l_total,
        acc=report.accuracy,
        macro_f1=report.macro_f1,
    )


def write_history(path: str | Path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in history:
            fh.write(json.dumps(asdict(record)))
            fh.write("\n")


# --------------------------------------------------------------------------
# Inference helpers
# --------------------------------------------------------------------------


def predict_proba(
    model: RelevanceStudent,
    pairs: Sequence[LabeledPair],
    batch_size: int = 256,
) -> np.ndarray:
    """Softmax class probabilities for a list of pairs, as float64 (N, C)."""
    config = model.config
    model.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            batch = batch_pairs(
                pairs[start : start + batch_size],
                config.max_input_tokens,
                config.encoder.vocab_buckets,
            )
            logits = model(batch.token_ids, batch.attention_mask).logits
            logits = logits.double().numpy()
            shifted = logits - logits.max(axis=1, keepdims=True)
            exp = np.exp(shifted)
            chunks.append(exp / exp.sum(axis=1, keepdims=True))
    return np.concatenate(chunks, axis=0)


def predict_labels(
    model: RelevanceStudent, pairs: Sequence[LabeledPair], batch_size: int = 256
) -> np.ndarray:
    """Argmax predictions; ties break toward the lowest class index."""
    return np.argmax(predict_proba(model, pairs, batch_size), axis=1)


def representations(
    model: RelevanceStudent,
    pairs: Sequence[LabeledPair],
    batch_size: int = 256,
) -> tuple[np.ndarray | None, np.ndarray]:
    """Frozen (latent, pooled) vectors for probing studies."""
    config = model.config
    model.eval()
    latents, pooled = [], []
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            batch = batch_pairs(
                pairs[start : start + batch_size],
                config.max_input_tokens,
                config.encoder.vocab_buckets,
            )
            out = model(batch.token_ids, batch.attention_mask)
            pooled.append(out.cls_vector.double().numpy())
            if out.latent is not None:
                latents.append(out.latent.double().numpy())
    latent = np.concatenate(latents, axis=0) if latents else None
    return latent, np.concatenate(pooled, axis=0)


def avg_ensemble_predict(
    models: Sequence[RelevanceStudent],
    pairs: Sequence[LabeledPair],
    batch_size: int = 256,
) -> np.ndarray:
    """Argmax of the mean softmax across models; ties go to the lowest index."""
    schemas = {m.config.schema.name for m in models}
    widths = {m.config.schema.num_classes for m in models}
    if len(schemas) != 1 or len(widths) != 1:
        raise ConfigurationError(f"ensemble members disagree on the schema: {schemas}")
    mean = None
    for model in models:
        probs = predict_proba(model, pairs, batch_size)
        mean = probs if mean is None else mean + probs
    return np.argmax(mean / len(models), axis=1)


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"
TENSORS_NAME = "tensors.bin"


@dataclass
class LoadedCheckpoint:
    model: RelevanceStudent
    config: RunConfig
    variant: Variant
    manifest: dict


def save_checkpoint(
    model: RelevanceStudent,
    config: RunConfig,
    variant: Variant,
    step: int,
    history: Sequence[EpochRecord],
    path: str | Path,
) -> None:
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    catalog = []
    blobs = []
    offset = 0
    for name, param in model.named_parameters():
        dtype = str(param.dtype).removeprefix("torch.")
        raw = param.detach().cpu().numpy().astype(_NUMPY_DTYPES[dtype]).tobytes()
        catalog.append(
            {
                "name": name,
                "shape": list(param.shape),
                "dtype": dtype,
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": 1,
        "variant": variant.value,
        "step": step,
        "config": config.to_dict(),
        "history": [asdict(r) for r in history],
        "tensors": catalog,
    }
    (directory / TENSORS_NAME).write_bytes(b"".join(blobs))
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> LoadedCheckpoint:
    directory = Path(path)
    manifest = json.loads((directory / MANIFEST_NAME).read_text(encoding="utf-8"))
    config = RunConfig.from_dict(manifest["config"])
    variant = Variant(manifest["variant"])
    catalog = manifest["tensors"]
    dtypes = {entry["dtype"] for entry in catalog}
    dtype = _TORCH_DTYPES[catalog[0]["dtype"]] if len(dtypes) == 1 else torch.float32
    model = RelevanceStudent(config, use_extractor=variant.uses_extractor, seed=0, dtype=dtype)
    params = dict(model.named_parameters())
    seen = set()
    blob = (directory / TENSORS_NAME).read_bytes()
    with torch.no_grad():
        for entry in catalog:
            name = entry["name"]
            if name in seen:
                raise ValidationError(f"tensor {name!r} cataloged twice")
            seen.add(name)
            param = params.get(name)
            if param is None:
                raise ValidationError(f"checkpoint tensor {name!r} not present in the model")
            if list(param.shape) != entry["shape"]:
                raise ValidationError(
                    f"tensor {name!r}: checkpoint shape {entry['shape']} != model "
                    f"shape {list(param.shape)}"
                )
            raw = blob[entry["offset"] : entry["offset"] + entry["nbytes"]]
            array = np.frombuffer(raw, dtype=_NUMPY_DTYPES[entry["dtype"]]).reshape(entry["shape"])
            param.copy_(torch.from_numpy(array.copy()).to(param.dtype))
    missing = set(params) - seen
    if missing:
        raise ValidationError(f"checkpoint misses tensors: {sorted(missing)}")
    return LoadedCheckpoint(model=model, config=config, variant=variant, manifest=manifest)
