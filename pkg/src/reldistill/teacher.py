"""Teacher-side generation: synthetic corpora, a controllable simulator, and
a client for an external text-generation service.

The simulator stands in for a large reasoning model so the whole pipeline
runs offline. Its per-perspective accuracy is configuration (the shipped
defaults encode which perspective is strong on which mismatch type), and
repeated attempts for the same pair and perspective are correlated through
a shared solvability draw, mirroring how sampled retries from one prompt
tend to repeat the same mistake. Each attempt still hits the configured
per-attempt accuracy marginally.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import (
    ConfigurationError,
    DatasetParseError,
    ExternalServiceError,
    InputError,
    RetryableTransportError,
    ValidationError,
)
from .hashing import child_rng, stable_digest
from .schemas import (
    ALIEXPRESS6,
    ESCI4,
    PERSPECTIVES,
    LabeledPair,
    Perspective,
    RelevanceSchema,
    validate_pair,
)

INVALID_LABEL = -1


@dataclass(frozen=True)
class GenerationRecord:
    """One teacher attempt for a (pair, perspective)."""

    pair_id: str
    perspective: Perspective
    attempt: int
    rationale: str
    predicted_label: int
    logprob: float | None = None
    valid: bool = True

    def __post_init__(self):
        if self.attempt < 0:
            raise ValidationError("attempt index must be >= 0")
        if self.valid and self.predicted_label < 0:
            raise ValidationError("valid records need a non-negative label index")


@dataclass
class GenerationBackend:
    """Sampling settings for teacher generation."""

    kind: str = "simulator"
    temperature: float = 0.7
    top_p: float = 0.99
    top_k: int = 50
    attempts: int = 5
    endpoint: str | None = None

    def __post_init__(self):
        if self.kind not in ("simulator", "external"):
            raise ConfigurationError("backend kind must be 'simulator' or 'external'")
        if self.attempts < 1:
            raise ConfigurationError("attempts must be >= 1")


@dataclass
class PerspectiveErrorMatrix:
    """Per-(perspective, class) accuracy plus a confusion row per cell.

    ``retry_accuracy`` is the per-attempt success probability on pairs the
    perspective can solve at all; solvability per (pair, perspective) is
    ``accuracy / retry_accuracy``, so lifting attempts never rescues an
    unsolvable pair. Cells above ``retry_accuracy`` degrade gracefully to
    independent attempts.
    """

    accuracy: dict[tuple[Perspective, int], float]
    confusion: dict[tuple[Perspective, int], tuple[float, ...]]
    retry_accuracy: float = 0.9

    def __post_init__(self):
        if not 0 < self.retry_accuracy <= 1:
            raise ConfigurationError("retry_accuracy must lie in (0, 1]")
        for key, acc in self.accuracy.items():
            if not 0 <= acc <= 1:
                raise ConfigurationError(f"accuracy out of [0,1] at {key}")
            row = self.confusion[key]
            _, true_label = key
            if true_label < len(row) and abs(row[true_label]) > 1e-12:
                raise ConfigurationError(f"confusion row at {key} assigns mass to the true label")
            if abs(sum(row) - 1.0) > 1e-9:
                raise ConfigurationError(f"confusion row at {key} does not sum to 1")

    @classmethod
    def uniform(
        cls,
        schema: RelevanceSchema,
        accuracy: float,
        retry_accuracy: float = 0.9,
    ) -> "PerspectiveErrorMatrix":
        acc = {(p, c): accuracy for p in PERSPECTIVES for c in range(schema.num_classes)}
        return cls(acc, _uniform_confusion(schema), retry_accuracy=retry_accuracy)

    @classmethod
    def default_for(cls, schema: RelevanceSchema) -> "PerspectiveErrorMatrix":
        """Complementary defaults: one clearly strong perspective per mismatch class.

        Strong cells 0.9, weak cells 0.45, everything else 0.65. These are
        configuration values shaped after the qualitative pattern that user
        intent catches category mismatches, structured analysis catches
        brand/model mismatches but struggles with attributes, and business
        rules catch attribute/accessory mismatches.
        """
        strong, weak = _STRENGTH_MAPS.get(schema.name, ((), ()))
        acc = {}
        for p in PERSPECTIVES:
            for c, cls_name in enumerate(schema.classes):
                if (p, cls_name) in strong:
                    acc[(p, c)] = 0.9
                elif (p, cls_name) in weak:
                    acc[(p, c)] = 0.45
                else:
                    acc[(p, c)] = 0.65
        return cls(acc, _uniform_confusion(schema))


def _uniform_confusion(schema: RelevanceSchema) -> dict[tuple[Perspective, int], tuple[float, ...]]:
    C = schema.num_classes
    rows = {}
    for p in PERSPECTIVES:
        for c in range(C):
            rows[(p, c)] = tuple(0.0 if j == c else 1.0 / (C - 1) for j in range(C))
    return rows


_STRENGTH_MAPS = {
    # (strong cells, weak cells) keyed by (perspective, class name)
    ALIEXPRESS6.name: (
        (
            (Perspective.USER_INTENT, "Category Mismatch"),
            (Perspective.STRUCTURED_ANALYSIS, "Brand Mismatch"),
            (Perspective.STRUCTURED_ANALYSIS, "Model Mismatch"),
            (Perspective.BUSINESS_RULES, "Attribute Mismatch"),
            (Perspective.BUSINESS_RULES, "Accessory Mismatch"),
        ),
        ((Perspective.STRUCTURED_ANALYSIS, "Attribute Mismatch"),),
    ),
    # No published per-class pattern exists for the four-class space; this
    # analog keeps one strong perspective per non-exact class.
    ESCI4.name: (
        (
            (Perspective.USER_INTENT, "Irrelevant"),
            (Perspective.STRUCTURED_ANALYSIS, "Substitute"),
            (Perspective.BUSINESS_RULES, "Complement"),
        ),
        (),
    ),
}


# --------------------------------------------------------------------------
# Synthetic corpus
# --------------------------------------------------------------------------

BRANDS = (
    "nexora", "velmont", "quorix", "zentra", "altivo", "brimworth", "cadenza",
    "dorvik", "elwood", "fintra", "galvani", "harbell", "ivoria", "jaxen",
    "kelvor", "lumara", "madrigal", "norvik", "oplandia", "pavetti", "quillon",
    "rostame", "senwick", "tavora", "ulmere", "vandrik", "welford", "xalvia",
    "yorvin", "zephton", "ardmore", "bexley", "corvale", "draven", "emberlyn",
    "farrow", "glenmor", "hollis", "ivanhoe", "jorvik", "krestal", "lindale",
    "mervail", "nocturn", "ostrava", "pellier", "quandor", "rivenna",
)

CATEGORIES = (
    "phone case", "running shoes", "coffee grinder", "desk lamp", "yoga mat",
    "water bottle", "laptop sleeve", "garden hose", "wall clock", "hiking boots",
    "blender jar", "camping tent", "office chair", "rain jacket", "bike helmet",
    "pet carrier", "baking tray", "curtain rod", "fishing reel", "guitar strap",
    "knife sharpener", "luggage tag", "makeup mirror", "night light",
    "oven mitt", "picture frame", "quilt cover", "router antenna",
    "sewing machine", "tea kettle", "umbrella stand", "vacuum hose",
    "watch band", "air purifier", "bath towel", "car charger", "door mat",
    "ear plugs", "flash drive", "glass teapot",
)

MODELS = (
    "x200", "pro7", "k15", "ultra3", "m42", "s9", "g11", "t800", "v5", "a12",
    "r300", "d77", "e24", "f6", "h90", "j31", "l18", "n55", "p2", "q47",
    "b640", "c8", "w12", "y73", "z1", "xr20", "mk4", "gt5", "lite9", "max16",
    "neo8", "plus22", "core3", "duo14", "era6", "flux7", "gen10", "halo2",
    "ion13", "jet4", "kilo5", "luna17", "mono1", "nova19", "octa21", "pico23",
    "quad25", "ray27", "sol29", "terra31", "unit33", "volt35", "wave37",
    "xen39", "yield41", "zoom43", "apex45", "bolt47", "crest49", "drift51",
)

ATTRIBUTES = (
    "black", "white", "red", "blue", "green", "silver", "golden", "gray",
    "compact", "oversized", "mini", "slim", "leather", "steel", "ceramic",
    "bamboo", "wireless", "foldable", "waterproof", "insulated", "magnetic",
    "rechargeable", "adjustable", "transparent", "matte", "glossy", "padded",
    "ribbed", "vented", "woven",
)

ACCESSORY_NOUNS = (
    "replacement strap", "carry pouch", "charging dock", "spare filter",
    "mounting bracket", "protective film", "travel adapter", "cleaning kit",
    "storage rack", "repair toolset",
)

FILLER_WORDS = (
    "premium", "durable", "upgraded", "2024", "edition", "quality", "sale",
    "hot", "new", "original", "official", "genuine", "lightweight", "heavy",
    "duty", "multi", "pack", "gift", "classic", "deluxe",
)

# class name -> synthetic construction kind
_CLASS_KINDS = {
    ALIEXPRESS6.name: {
        "Strongly Relevant": "none",
        "Brand Mismatch": "brand",
        "Category Mismatch": "category",
        "Model Mismatch": "model",
        "Attribute Mismatch": "attribute",
        "Accessory Mismatch": "accessory",
    },
    ESCI4.name: {
        "Exact": "none",
        "Substitute": "brand",
        "Complement": "accessory",
        "Irrelevant": "category",
    },
}


def gen_synthetic_corpus(n: int, schema: RelevanceSchema, seed: int) -> list[LabeledPair]:
    """Build ``n`` structured query-item pairs with injected mismatch kinds.

    Classes are assigned by balanced quota (exact to within one item), so
    the distribution stays near uniform for every seed; item order and slot
    contents are seeded. The label always equals the injected kind.
    """
    if n < 0:
        raise InputError("n must be >= 0")
    kinds_by_class = _CLASS_KINDS.get(schema.name)
    if kinds_by_class is None:
        raise ConfigurationError(
            f"synthetic generation supports schemas {sorted(_CLASS_KINDS)}, "
            f"got {schema.name!r}"
        )
    C = schema.num_classes
    labels = [c for c in range(C) for _ in range(n // C)]
    labels += list(range(n % C))
    child_rng(seed, "corpus-order").shuffle(labels)

    pairs = []
    for i, label in enumerate(labels):
        rng = child_rng(seed, "corpus-item", i)
        kind = kinds_by_class[schema.class_name(label)]
        brand, alt_brand = _two_distinct(rng, BRANDS)
        category, alt_category = _two_distinct(rng, CATEGORIES)
        model, alt_model = _two_distinct(rng, MODELS)
        attribute, alt_attribute = _two_distinct(rng, ATTRIBUTES)
        query = f"{brand} {attribute} {category} {model}"
        t_brand, t_category, t_model, t_attribute = brand, category, model, attribute
        if kind == "brand":
            t_brand = alt_brand
        elif kind == "category":
            t_category = alt_category
        elif kind == "model":
            t_model = alt_model
        elif kind == "attribute":
            t_attribute = alt_attribute
        fillers = list(rng.choice(FILLER_WORDS, size=rng.integers(2, 5), replace=False))
        if kind == "accessory":
            noun = ACCESSORY_NOUNS[rng.integers(len(ACCESSORY_NOUNS))]
            core = f"{noun} for {t_brand} {t_category} {t_model}"
        else:
            core = f"{t_brand} {t_attribute} {t_category} {t_model}"
        title = " ".join([core] + fillers)
        pairs.append(
            LabeledPair(
                id=f"synth-{i:06d}",
                query=query,
                title=title,
                label=label,
                language="en",
                mismatch_kind=kind,
            )
        )
    return pairs


def _two_distinct(rng, pool: Sequence[str]) -> tuple[str, str]:
    first, second = rng.choice(len(pool), size=2, replace=False)
    return pool[first], pool[second]


# --------------------------------------------------------------------------
# Simulated generation
# --------------------------------------------------------------------------

# Rationale wording per perspective. Every template names the predicted
# class, and the two variants of a perspective share no content words:
# which variant fires (and whether the optional clause attaches) is keyed to
# a visible query token, so rationale wording is a learnable function of the
# pair, the way a reasoning model's phrasing tracks its input. Keywords like
# "implies" or "mentions" never appear in queries or titles, which
# downstream probing relies on.
_RATIONALE_VARIANTS = {
    Perspective.USER_INTENT: (
        (
            "From a shopper standpoint the request implies a need for {query}; "
            "the listing {serves} that purpose, so the judgement is {cls}."
        ),
        (
            "Reading the buyer intent, someone expects {query} and this "
            "offer {fits} the use case; verdict {cls}."
        ),
    ),
    Perspective.STRUCTURED_ANALYSIS: (
        (
            "A field by field checklist compares brand, model and attribute "
            "slots; the text mentions {title_word}; the specification "
            "{matches}; label {cls}."
        ),
        (
            "Systematic audit finds that the stated {kind_word} requirement "
            "{agrees} with the item; conclusion {cls}."
        ),
    ),
    Perspective.BUSINESS_RULES: (
        (
            "Platform policy treats add on goods as separate catalog entries; "
            "under that rule the pair is likely {cls}."
        ),
        (
            "Applying the marketplace heuristic for ambiguous listings, the "
            "decision lands on {cls}."
        ),
    ),
}

# One optional clause per perspective, keyed to another visible query token.
_OPTIONAL_CLAUSES = {
    Perspective.USER_INTENT: "The functional goal here is unmistakable.",
    Perspective.STRUCTURED_ANALYSIS: "Point by point verification leaves little doubt.",
    Perspective.BUSINESS_RULES: "Main item versus add on distinctions drive this call.",
}

_POSITIVE_CLASSES = {"Strongly Relevant", "Exact"}

# slot position of each mismatch kind inside the synthetic query layout
# "brand attribute category(2 tokens) model"
_QUERY_SLOTS = {"brand": (0, 1), "attribute": (1, 2), "category": (2, 4), "model": (4, 5)}

# evidence wording is specific to the cited slot so that no single evidence
# phrase floods every rationale
_EVIDENCE_FORMS = {
    "brand": "The front token shows {t} instead of {q}.",
    "category": "The page presents {t} rather than {q}.",
    "model": "The code reads {t} against {q}.",
    "attribute": "The unit carries {t} not {q}.",
}


def _slot_evidence(pair: LabeledPair, predicted_kind: str, positive: bool) -> str | None:
    """Point at the slot tokens that justify the predicted kind.

    Works on the structured synthetic layout; pairs with a different shape
    get no evidence clause. Wrong predictions still cite their (hallucinated)
    slot, which is what an overconfident teacher does. The wording is fixed
    per case so the embedding target stays a stable function of the pair and
    the predicted class.
    """
    q = pair.query.split()
    t = pair.title.split()
    if len(q) != 5 or len(t) < 5:
        return None
    if positive:
        return f"Both {q[0]} and {q[4]} reappear verbatim."
    if predicted_kind == "accessory":
        return f"The leading phrase {t[0]} marks an add on item."
    slot = _QUERY_SLOTS.get(predicted_kind)
    if slot is None:
        return None
    lo, hi = slot
    q_tok = " ".join(q[lo:hi])
    t_tok = " ".join(t[lo:hi])
    return _EVIDENCE_FORMS[predicted_kind].format(t=t_tok, q=q_tok)


_KIND_OF_CLASS = {
    "Strongly Relevant": "none",
    "Exact": "none",
    "Brand Mismatch": "brand",
    "Substitute": "brand",
    "Category Mismatch": "category",
    "Irrelevant": "category",
    "Model Mismatch": "model",
    "Attribute Mismatch": "attribute",
    "Accessory Mismatch": "accessory",
    "Complement": "accessory",
}


def render_rationale(
    pair: LabeledPair,
    perspective: Perspective,
    predicted_label: int,
    schema: RelevanceSchema,
) -> str:
    """Template a perspective-flavored rationale naming the predicted class.

    The text carries three signals: the predicted class name, the slot
    tokens backing it (when the pair follows the synthetic layout), and
    perspective-specific reasoning keywords absent from the pair text.
    Wording is deterministic given the pair and the perspective: the variant
    hangs off the first query token and the optional clause off the last, so
    a student that regresses the rationale embedding can learn to predict
    the wording from its own input.
    """
    cls_name = schema.class_name(predicted_label)
    positive = cls_name in _POSITIVE_CLASSES
    title_tokens = pair.title.split()
    query_tokens = pair.query.split()
    variants = _RATIONALE_VARIANTS[perspective]
    variant_key = stable_digest("variant", perspective.value, query_tokens[0])
    text = variants[variant_key % len(variants)].format(
        query=pair.query,
        title_word=title_tokens[
            stable_digest("focus", perspective.value, pair.title) % len(title_tokens)
        ],
        kind_word=cls_name.split()[0].lower(),
        cls=cls_name.lower(),
        serves="serves" if positive else "misses",
        fits="fits" if positive else "fails",
        matches="matches" if positive else "diverges",
        agrees="agrees" if positive else "conflicts",
    )
    evidence = _slot_evidence(pair, _KIND_OF_CLASS.get(cls_name), positive)
    if evidence is not None:
        text = f"{text} {evidence}"
    if stable_digest("clause", perspective.value, query_tokens[-1]) % 2:
        text = f"{text} {_OPTIONAL_CLAUSES[perspective]}"
    return text


def simulate_generation(
    pair: LabeledPair,
    perspective: Perspective,
    attempts: int,
    matrix: PerspectiveErrorMatrix,
    seed: int,
    schema: RelevanceSchema,
) -> list[GenerationRecord]:
    """Simulate ``attempts`` teacher outputs for one (pair, perspective).

    The record stream is a pure function of (seed, pair id, perspective),
    so corpora can be sharded and merged freely. Wrong predictions are drawn
    from the configured confusion row and never equal the true label.
    """
    if attempts < 1:
        raise InputError("attempts must be >= 1")
    validate_pair(pair, schema)
    rng = child_rng(seed, "gen", pair.id, perspective.value)
    acc = matrix.accuracy[(perspective, pair.label)]
    confusion = matrix.confusion[(perspective, pair.label)]
    retry = max(matrix.retry_accuracy, acc)
    solvable = acc > 0 and rng.random() < acc / retry
    records = []
    for attempt in range(attempts):
        correct = solvable and rng.random() < retry
        if correct:
            label = pair.label
        else:
            label = int(rng.choice(schema.num_classes, p=confusion))
        rationale = render_rationale(pair, perspective, label, schema)
        logprob = -1.0 - rng.exponential(2.0) + (1.0 if correct else 0.0)
        records.append(
            GenerationRecord(
                pair_id=pair.id,
                perspective=perspective,
                attempt=attempt,
                rationale=rationale,
                predicted_label=label,
                logprob=float(logprob),
            )
        )
    return records


def simulate_corpus(
    pairs: Sequence[LabeledPair],
    schema: RelevanceSchema,
    matrix: PerspectiveErrorMatrix,
    attempts: int,
    seed: int,
    perspectives: Sequence[Perspective] = PERSPECTIVES,
) -> list[GenerationRecord]:
    """All simulated records for a corpus, ordered by (pair, perspective, attempt)."""
    records = []
    for pair in pairs:
        for perspective in perspectives:
            records.extend(
                simulate_generation(pair, perspective, attempts, matrix, seed, schema)
            )
    return records


# --------------------------------------------------------------------------
# External generation service
# --------------------------------------------------------------------------

Transport = Callable[[dict], dict]


def http_transport(endpoint: str, timeout: float = 30.0) -> Transport:
    """POST a JSON request to ``endpoint`` and return the JSON reply.

    A bearer token is attached when RELDISTILL_API_KEY is set; credentials
    never travel through command-line flags.
    """

    def call(request: dict) -> dict:
        import os

        import requests

        headers = {}
        token = os.environ.get("RELDISTILL_API_KEY")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            reply = requests.post(endpoint, json=request, timeout=timeout,
                                  headers=headers)
        except requests.RequestException as exc:
            raise RetryableTransportError(f"request to {endpoint} failed: {exc}") from exc
        if reply.status_code != 200:
            raise RetryableTransportError(
                f"service at {endpoint} answered HTTP {reply.status_code}"
            )
        return reply.json()

    return call


def parse_reply_label(text: str, schema: RelevanceSchema) -> int:
    """Extract the final-line label ("Final: <class name>", case-insensitive).

    Returns ``INVALID_LABEL`` when no line carries a parseable label.
    """
    for line in reversed(text.strip().splitlines()):
        stripped = line.strip()
        lowered = stripped.lower()
        if lowered.startswith("final:") or lowered.startswith("final :"):
            value = stripped.split(":", 1)[1].strip().strip(".").strip()
            for index, name in enumerate(schema.classes):
                if value.lower() == name.lower():
                    return index
            return INVALID_LABEL
    return INVALID_LABEL


def external_generate(
    pair: LabeledPair,
    perspective: Perspective,
    backend: GenerationBackend,
    schema: RelevanceSchema,
    transport: Transport | None = None,
    max_retries: int = 2,
    retry_wait: float = 0.5,
) -> list[GenerationRecord]:
    """Request ``backend.attempts`` generations from an external service.

    Unparseable replies are kept as flagged-invalid records so downstream
    filters can exclude them; transport errors are retried a bounded number
    of times and then surface as ``RetryableTransportError``.
    """
    if transport is None:
        if not backend.endpoint:
            raise ConfigurationError("external backend needs an endpoint")
        transport = http_transport(backend.endpoint)
    prompt = perspective.prompt_template.format(query=pair.query, title=pair.title)
    request = {
        "prompt": prompt,
        "temperature": backend.temperature,
        "top_p": backend.top_p,
        "top_k": backend.top_k,
    }
    records = []
    for attempt in range(backend.attempts):
        reply = _call_with_retries(transport, request, max_retries, retry_wait)
        text = reply.get("text")
        if not isinstance(text, str):
            raise ExternalServiceError("service reply carries no 'text' field")
        label = parse_reply_label(text, schema)
        records.append(
            GenerationRecord(
                pair_id=pair.id,
                perspective=perspective,
                attempt=attempt,
                rationale=text,
                predicted_label=label,
                logprob=reply.get("logprob"),
                valid=label != INVALID_LABEL,
            )
        )
    return records


def _call_with_retries(transport: Transport, request: dict, max_retries: int, wait: float) -> dict:
    last: Exception | None = None
    for retry in range(max_retries + 1):
        try:
            return transport(request)
        except RetryableTransportError as exc:
            last = exc
            if retry < max_retries:
                time.sleep(wait * (retry + 1))
    raise last  # type: ignore[misc]


def external_generate_many(
    pairs: Sequence[LabeledPair],
    backend: GenerationBackend,
    schema: RelevanceSchema,
    transport: Transport | None = None,
    perspectives: Sequence[Perspective] = PERSPECTIVES,
    max_in_flight: int = 4,
) -> list[GenerationRecord]:
    """Concurrent external generation with bounded in-flight requests.

    Results are merge-sorted by (pair_id, perspective, attempt) so the
    output does not depend on completion order.
    """
    jobs = [(pair, perspective) for pair in pairs for perspective in perspectives]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        chunks = pool.map(
            lambda job: external_generate(job[0], job[1], backend, schema, transport),
            jobs,
        )
        records = [record for chunk in chunks for record in chunk]
    order = {p: i for i, p in enumerate(PERSPECTIVES)}
    records.sort(key=lambda r: (r.pair_id, order[r.perspective], r.attempt))
    return records


# --------------------------------------------------------------------------
# Generations file format
# --------------------------------------------------------------------------


def write_generations(
    path: str | Path, records: Iterable[GenerationRecord], schema: RelevanceSchema
) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            label = (
                schema.class_name(record.predicted_label) if record.valid else None
            )
            fh.write(
                json.dumps(
                    {
                        "pair_id": record.pair_id,
                        "perspective": record.perspective.value,
                        "attempt": record.attempt,
                        "rationale": record.rationale,
                        "predicted_label": label,
                        "logprob": record.logprob,
                        "valid": record.valid,
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")


def load_generations(path: str | Path, schema: RelevanceSchema) -> list[GenerationRecord]:
    records = []
    seen: set[tuple[str, str, int]] = set()
    with open(path, encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"invalid JSON ({exc.msg})", number) from None
            valid = bool(data.get("valid", True))
            label = schema.index_of(data["predicted_label"]) if valid else INVALID_LABEL
            key = (data["pair_id"], data["perspective"], int(data["attempt"]))
            if key in seen:
                raise DatasetParseError(
                    f"duplicate attempt {key[2]} for pair {key[0]!r} "
                    f"perspective {key[1]}", number
                )
            seen.add(key)
            records.append(
                GenerationRecord(
                    pair_id=data["pair_id"],
                    perspective=Perspective.from_value(data["perspective"]),
                    attempt=key[2],
                    rationale=data["rationale"],
                    predicted_label=label,
                    logprob=data.get("logprob"),
                    valid=valid,
                )
            )
    return records
