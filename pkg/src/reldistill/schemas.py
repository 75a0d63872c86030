"""Label schemas, core records, and the canonical dataset file format.

A relevance schema is an ordered list of class names plus a default
relevance tier (0..4) per class. Datasets are line-delimited JSON with a
fixed key order so that files diff cleanly and round-trip byte-identically;
labels are stored as class-name strings on disk and as integer indices in
memory.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DatasetParseError, SchemaViolationError, ValidationError

MISMATCH_KINDS = ("none", "brand", "category", "model", "attribute", "accessory")

DATASET_KEYS = ("id", "query", "title", "label", "language", "mismatch_kind")


@dataclass(frozen=True)
class RelevanceSchema:
    """An ordered label space with a default tier per class.

    Tiers are deployment-side relevance levels (0 irrelevant .. 4 exact);
    the shipped defaults are placeholders meant to be overridden by
    calibration, not measured values.
    """

    name: str
    classes: tuple[str, ...]
    default_tiers: tuple[int, ...]

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ValidationError("a schema needs at least two classes")
        if len(set(self.classes)) != len(self.classes):
            raise ValidationError("class names must be unique")
        if any(not c for c in self.classes):
            raise ValidationError("class names must be non-empty")
        if len(self.default_tiers) != len(self.classes):
            raise ValidationError("one default tier per class is required")
        if any(not (0 <= t <= 4) for t in self.default_tiers):
            raise ValidationError("default tiers must lie in 0..4")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def index_of(self, class_name: str) -> int:
        try:
            return self.classes.index(class_name)
        except ValueError:
            raise SchemaViolationError(
                f"label {class_name!r} is not part of schema {self.name!r} "
                f"(classes: {', '.join(self.classes)})"
            ) from None

    def class_name(self, index: int) -> str:
        if not 0 <= index < self.num_classes:
            raise SchemaViolationError(
                f"class index {index} out of range for schema {self.name!r}"
            )
        return self.classes[index]

    def tier_of(self, index: int) -> int:
        self.class_name(index)
        return self.default_tiers[index]

    def with_tiers(self, tiers: Sequence[int]) -> "RelevanceSchema":
        return replace(self, default_tiers=tuple(tiers))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "classes": list(self.classes),
            "default_tiers": list(self.default_tiers),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RelevanceSchema":
        return cls(
            name=data["name"],
            classes=tuple(data["classes"]),
            default_tiers=tuple(data["default_tiers"]),
        )


ESCI4 = RelevanceSchema(
    name="esci4",
    classes=("Exact", "Substitute", "Complement", "Irrelevant"),
    default_tiers=(4, 2, 1, 0),
)

ALIEXPRESS6 = RelevanceSchema(
    name="aliexpress6",
    classes=(
        "Strongly Relevant",
        "Brand Mismatch",
        "Category Mismatch",
        "Model Mismatch",
        "Attribute Mismatch",
        "Accessory Mismatch",
    ),
    default_tiers=(4, 1, 0, 1, 2, 1),
)

BUILTIN_SCHEMAS = {s.name: s for s in (ESCI4, ALIEXPRESS6)}


def get_schema(name_or_path: str) -> RelevanceSchema:
    """Resolve a builtin schema name or load a schema definition file."""
    if name_or_path in BUILTIN_SCHEMAS:
        return BUILTIN_SCHEMAS[name_or_path]
    path = Path(name_or_path)
    if path.exists():
        return load_schema(path)
    raise SchemaViolationError(
        f"unknown schema {name_or_path!r}; builtins: {sorted(BUILTIN_SCHEMAS)}"
    )


def load_schema(path: str | Path) -> RelevanceSchema:
    with open(path, encoding="utf-8") as fh:
        return RelevanceSchema.from_dict(json.load(fh))


def write_schema(path: str | Path, schema: RelevanceSchema) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


class Perspective(Enum):
    """The three reasoning viewpoints a teacher is prompted under."""

    USER_INTENT = "user_intent"
    STRUCTURED_ANALYSIS = "structured_analysis"
    BUSINESS_RULES = "business_rules"

    @property
    def prompt_template(self) -> str:
        return PROMPT_TEMPLATES[self]

    @classmethod
    def from_value(cls, value: str) -> "Perspective":
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(f"unknown perspective {value!r}") from None


PERSPECTIVES = tuple(Perspective)

# Original prompt wording; each template must mention both placeholders and
# asks for a final line of the form "Final: <class name>".
PROMPT_TEMPLATES = {
    Perspective.USER_INTENT: (
        "You are judging whether a product listing satisfies a shopper.\n"
        "Think about the shopper's goal and whether this item would serve it.\n"
        "Query: {query}\nItem title: {title}\n"
        "Reason step by step about intent and use case, then answer on the "
        "last line as 'Final: <relevance class>'."
    ),
    Perspective.STRUCTURED_ANALYSIS: (
        "You are an annotation expert checking a query against an item field "
        "by field (brand, category, model, attributes).\n"
        "Query: {query}\nItem title: {title}\n"
        "Compare each specification systematically, then answer on the last "
        "line as 'Final: <relevance class>'."
    ),
    Perspective.BUSINESS_RULES: (
        "You apply marketplace policy to ambiguous query-item matches, for "
        "example separating main products from accessories.\n"
        "Query: {query}\nItem title: {title}\n"
        "Apply the platform rules that fit this case, then answer on the "
        "last line as 'Final: <relevance class>'."
    ),
}


@dataclass(frozen=True)
class LabeledPair:
    """One labeled query-item example."""

    id: str
    query: str
    title: str
    label: int
    language: str = "en"
    mismatch_kind: str | None = None

    def __post_init__(self):
        if not self.query or not self.title:
            raise ValidationError(f"pair {self.id!r}: query and title must be non-empty")
        if self.mismatch_kind is not None and self.mismatch_kind not in MISMATCH_KINDS:
            raise ValidationError(
                f"pair {self.id!r}: unknown mismatch kind {self.mismatch_kind!r}"
            )


def validate_pair(pair: LabeledPair, schema: RelevanceSchema) -> None:
    if not 0 <= pair.label < schema.num_classes:
        raise SchemaViolationError(
            f"pair {pair.id!r}: label index {pair.label} out of range for "
            f"schema {schema.name!r}"
        )


def dataset_line(pair: LabeledPair, schema: RelevanceSchema) -> str:
    """Canonical one-line JSON for a pair (fixed key order, UTF-8)."""
    validate_pair(pair, schema)
    record = {
        "id": pair.id,
        "query": pair.query,
        "title": pair.title,
        "label": schema.class_name(pair.label),
        "language": pair.language,
        "mismatch_kind": pair.mismatch_kind,
    }
    return json.dumps(record, ensure_ascii=False)


def write_dataset(path: str | Path, pairs: Iterable[LabeledPair], schema: RelevanceSchema) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            fh.write(dataset_line(pair, schema))
            fh.write("\n")


def load_dataset(path: str | Path, schema: RelevanceSchema) -> list[LabeledPair]:
    """Read a canonical JSONL dataset, validating labels against ``schema``."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"invalid JSON ({exc.msg})", number) from None
            if not isinstance(record, dict):
                raise DatasetParseError("record is not a JSON object", number)
            missing = [k for k in ("id", "query", "title", "label") if k not in record]
            if missing:
                raise DatasetParseError(f"missing fields: {', '.join(missing)}", number)
            label = schema.index_of(record["label"])
            pairs.append(
                LabeledPair(
                    id=str(record["id"]),
                    query=record["query"],
                    title=record["title"],
                    label=label,
                    language=record.get("language") or "en",
                    mismatch_kind=record.get("mismatch_kind"),
                )
            )
    return pairs


_ESCI_LABELS = {"E": "Exact", "S": "Substitute", "C": "Complement", "I": "Irrelevant"}
_ESCI_COLUMNS = ("query", "product_title", "esci_label", "locale")


def load_esci_format(path: str | Path, delimiter: str | None = None) -> list[LabeledPair]:
    """Read a delimited file in the public ESCI column layout.

    Expected columns: query, product_title, esci_label (E/S/C/I), locale.
    Rows map onto the four-class builtin schema in file order.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        head = fh.readline()
        if not head:
            return []
        if delimiter is None:
            delimiter = "\t" if "\t" in head else ","
        reader = csv.DictReader(io.StringIO(head + fh.read()), delimiter=delimiter)
        fields = reader.fieldnames or []
        missing = [c for c in _ESCI_COLUMNS if c not in fields]
        if missing:
            raise DatasetParseError(
                f"missing ESCI columns: {', '.join(missing)} (found: {fields})", 1
            )
        pairs = []
        for number, row in enumerate(reader, start=2):
            token = (row["esci_label"] or "").strip()
            if token not in _ESCI_LABELS:
                raise SchemaViolationError(
                    f"line {number}: unknown esci_label {token!r} (expected E/S/C/I)"
                )
            pairs.append(
                LabeledPair(
                    id=f"esci-{number - 2:06d}",
                    query=row["query"],
                    title=row["product_title"],
                    label=ESCI4.index_of(_ESCI_LABELS[token]),
                    language=row["locale"] or "en",
                )
            )
    return pairs
