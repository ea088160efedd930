"""Iterative definition refinement.

The loop proposes revised category definitions through an LLM, scores each
proposal by train macro-F1 under the frozen embedding model, and either
accepts unconditionally (example-guided and confusion-aware strategies) or
applies an annealed Boltzmann acceptance rule against the best score so far
(history-aware strategy). Only accepted states enter the bounded history
window that the history-aware prompt exposes to the LLM.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .classifier import classify
from .corpus import Dataset, Document, sample_instance, split_view
from .embeddings import ROLE_DOCUMENT, EmbeddingGateway
from .errors import DataError, DefinitionParseError
from .evaluation import (
    ConfusedPair,
    ConfusionMatrix,
    MetricsReport,
    confusion_matrix,
    macro_f1,
    top_k_confused_pairs,
)
from .seeding import make_rng, rng_state_from_json, rng_state_to_json

log = logging.getLogger(__name__)

STRATEGIES = ("m1", "m2", "m3")
ACCEPT_ALWAYS = "always_accept"
ACCEPT_METROPOLIS = "metropolis"

MINIMAL_TEMPLATE = "A webpage about {category}."
DEFAULT_SAMPLE_CHAR_CAP = 2000
PARSE_RETRY_NOTICE = (
    "\n\nYour previous reply was not valid JSON. Respond with only the JSON object."
)

_FENCE_RE = re.compile(r"```(?:[a-zA-Z0-9_-]+)?\n(.*?)```", re.DOTALL)


@dataclass
class StrategyConfig:
    """Which refinement strategy runs, and its feedback window sizes."""

    strategy: str
    k_confused: int = 3
    m_history: int = 3
    acceptance: str | None = None

    def __post_init__(self) -> None:
        self.strategy = self.strategy.lower()
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 1 <= self.k_confused <= 5:
            raise ValueError("k_confused must be in 1..5")
        if not 1 <= self.m_history <= 5:
            raise ValueError("m_history must be in 1..5")
        if self.acceptance is not None and self.acceptance not in (
            ACCEPT_ALWAYS,
            ACCEPT_METROPOLIS,
        ):
            raise ValueError(f"unknown acceptance mode {self.acceptance!r}")

    @property
    def resolved_acceptance(self) -> str:
        if self.acceptance is not None:
            return self.acceptance
        return ACCEPT_METROPOLIS if self.strategy == "m3" else ACCEPT_ALWAYS


@dataclass
class AnnealingSchedule:
    """Linear temperature decay from t0 down to t_min over the iteration budget."""

    t0: float = 0.1
    t_min: float = 0.01
    t_max_iterations: int = 100

    def __post_init__(self) -> None:
        if not 0 < self.t_min <= self.t0:
            raise ValueError("require 0 < t_min <= t0")
        if self.t_max_iterations < 1:
            raise ValueError("t_max_iterations must be >= 1")


@dataclass
class HistoryEntry:
    definitions: dict[str, str]
    score: float


@dataclass
class FeedbackBundle:
    """Strategy-specific evidence packed into the refinement prompt."""

    example: Document | None = None
    confused_pairs: list[ConfusedPair] = field(default_factory=list)
    confused_samples: list[Document] = field(default_factory=list)
    history: list[HistoryEntry] = field(default_factory=list)


@dataclass
class LoopCheckpoint:
    """Everything needed to continue the loop after iteration `iteration`."""

    iteration: int
    current: dict[str, str]
    phi_cur: float
    best: dict[str, str]
    phi_best: float
    history: list[HistoryEntry]
    sample_rng_state: list
    accept_rng_state: list
    llm_calls: int

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "current": self.current,
            "phi_cur": self.phi_cur,
            "best": self.best,
            "phi_best": self.phi_best,
            "history": [{"definitions": h.definitions, "score": h.score} for h in self.history],
            "sample_rng_state": self.sample_rng_state,
            "accept_rng_state": self.accept_rng_state,
            "llm_calls": self.llm_calls,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "LoopCheckpoint":
        return cls(
            iteration=payload["iteration"],
            current=dict(payload["current"]),
            phi_cur=payload["phi_cur"],
            best=dict(payload["best"]),
            phi_best=payload["phi_best"],
            history=[HistoryEntry(dict(h["definitions"]), h["score"]) for h in payload["history"]],
            sample_rng_state=payload["sample_rng_state"],
            accept_rng_state=payload["accept_rng_state"],
            llm_calls=payload["llm_calls"],
        )


@dataclass
class RefinementResult:
    best_definitions: dict[str, str]
    phi_best_train: float
    trace: list[dict]
    initial: dict | None
    dev_metrics: MetricsReport
    test_metrics: MetricsReport | None
    test_confusion: ConfusionMatrix | None


def validate_definitions(definitions: Mapping[str, str], categories: Sequence[str]) -> None:
    """Require exactly one nonempty definition per category."""
    for c in categories:
        value = definitions.get(c)
        if not isinstance(value, str) or not value.strip():
            raise ValueError(f"missing or empty definition for category {c!r}")


def definitions_hash(definitions: Mapping[str, str]) -> str:
    canonical = json.dumps(dict(definitions), sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def energy_drop(phi_best: float, phi_proposed: float) -> float:
    """How far the proposal falls short of the best score; negative on improvement."""
    return phi_best - phi_proposed


def temperature(t: int, sched: AnnealingSchedule) -> float:
    """Annealed temperature at iteration t, floored at t_min."""
    return max(sched.t_min, sched.t0 * (1 - t / sched.t_max_iterations))


def accept(delta_e: float, temp: float, rng: random.Random) -> bool:
    """Boltzmann acceptance: improvements always pass without touching the rng."""
    if delta_e <= 0:
        return True
    if temp <= 0:
        raise ValueError("temperature must be positive")
    return rng.random() < math.exp(-delta_e / temp)


def _clip(text: str, cap: int) -> str:
    return text if len(text) <= cap else text[:cap]


def parse_definitions(llm_output: str, categories: Sequence[str]) -> dict[str, str]:
    """Extract a definition set from LLM output.

    The first JSON object found anywhere in the text is used; code fences and
    surrounding prose are tolerated. Every category must be present with a
    nonempty string; extra keys are ignored with a warning.
    """
    sources = []
    fenced = _FENCE_RE.search(llm_output)
    if fenced:
        sources.append(fenced.group(1))
    sources.append(llm_output)
    decoder = json.JSONDecoder()
    obj = None
    for text in sources:
        for match in re.finditer(r"\{", text):
            try:
                candidate, _ = decoder.raw_decode(text, match.start())
            except json.JSONDecodeError:
                continue
            if isinstance(candidate, dict):
                obj = candidate
                break
        if obj is not None:
            break
    if obj is None:
        raise DefinitionParseError("no JSON object found in LLM output")
    for c in categories:
        if c not in obj:
            raise DefinitionParseError(f"missing category: {c}")
        value = obj[c]
        if not isinstance(value, str) or not value.strip():
            raise DefinitionParseError(f"empty definition for category: {c}")
    extra = [k for k in obj if k not in set(categories)]
    if extra:
        log.warning("ignoring unexpected keys in LLM output: %s", ", ".join(sorted(extra)))
    return {c: obj[c] for c in categories}


_OUTPUT_INSTRUCTION = (
    "Respond with a single JSON object mapping every category name to its revised "
    "definition string. Include every category exactly once, keep every value a "
    "nonempty string, and add no other keys and no commentary."
)


def initial_definitions(
    categories: Sequence[str],
    mode: str = "minimal",
    llm=None,
    parse_retries: int = 3,
) -> dict[str, str]:
    """Starting definition set: a fixed template or an LLM-drafted one."""
    if mode == "minimal":
        return {c: MINIMAL_TEMPLATE.format(category=c) for c in categories}
    if mode != "llm_generated":
        raise ValueError(f"unknown initialization mode {mode!r}")
    if llm is None:
        raise ValueError("llm_generated initialization requires an llm gateway")
    lines = [
        "Provide a concise definition of each category below, for use in zero-shot",
        "classification of webpage text by embedding similarity.",
        "",
        "CATEGORIES:",
    ]
    lines += [f"- {c}" for c in categories]
    lines += ["", _OUTPUT_INSTRUCTION]
    prompt = "\n".join(lines)
    definitions, _, _ = _propose(llm, prompt, categories, parse_retries)
    if definitions is None:
        raise DefinitionParseError("could not parse initial definitions after retries")
    return definitions


def build_prompt(
    strategy: StrategyConfig,
    categories: Sequence[str],
    definitions: Mapping[str, str],
    phi_train: float,
    feedback: FeedbackBundle,
    sample_char_cap: int = DEFAULT_SAMPLE_CHAR_CAP,
) -> str:
    """Deterministic refinement prompt for the given strategy and evidence."""
    _check_feedback(strategy, feedback)
    lines = [
        "You maintain the category definitions of an embedding-based zero-shot text",
        "classifier. Each document is assigned the category whose definition embedding",
        "is most similar to the document embedding. Revise the definitions so that the",
        "categories separate better in embedding space.",
        "",
        "CURRENT DEFINITIONS:",
    ]
    lines += [f"- {c}: {definitions[c]}" for c in categories]
    lines += ["", f"CURRENT TRAIN MACRO-F1: {phi_train:.4f}"]

    if strategy.strategy == "m1":
        ex = feedback.example
        lines += ["", f"EXAMPLE (gold={ex.label}):", _clip(ex.text, sample_char_cap)]
    else:
        lines += ["", "CONFUSED PAIRS (most confused first):"]
        if feedback.confused_pairs:
            lines += [
                f"- {categories[p.class_a]} vs {categories[p.class_b]}: "
                f"{p.confusion_count} misclassified"
                for p in feedback.confused_pairs
            ]
        else:
            lines.append("- none")
        for doc in feedback.confused_samples:
            lines += ["", f"CONFUSED SAMPLE (gold={doc.label}):", _clip(doc.text, sample_char_cap)]
        if strategy.strategy == "m3":
            for entry in feedback.history:
                lines += ["", f"PREVIOUS DEFINITIONS (score={entry.score:.4f}):"]
                lines += [f"- {c}: {entry.definitions[c]}" for c in categories]

    lines += ["", _OUTPUT_INSTRUCTION]
    return "\n".join(lines)


def _check_feedback(strategy: StrategyConfig, feedback: FeedbackBundle) -> None:
    name = strategy.strategy
    if name == "m1":
        if feedback.example is None:
            raise ValueError("m1 feedback requires one labeled example")
        if feedback.confused_pairs or feedback.confused_samples or feedback.history:
            raise ValueError("m1 feedback must not carry confusion or history evidence")
    else:
        if feedback.example is not None:
            raise ValueError(f"{name} feedback must not carry a free example")
        if name == "m2" and feedback.history:
            raise ValueError("m2 feedback must not carry history entries")


def _assemble_feedback(
    strategy: StrategyConfig,
    dataset: Dataset,
    cm: ConfusionMatrix,
    history: Sequence[HistoryEntry],
    rng: random.Random,
) -> FeedbackBundle:
    if strategy.strategy == "m1":
        return FeedbackBundle(example=sample_instance(dataset, "train", rng=rng))
    pairs = top_k_confused_pairs(cm, strategy.k_confused)
    class_order: list[int] = []
    for pair in pairs:
        for idx in (pair.class_a, pair.class_b):
            if idx not in class_order:
                class_order.append(idx)
    samples = [
        sample_instance(dataset, "train", category=dataset.categories[i], rng=rng)
        for i in class_order
    ]
    hist = list(history) if strategy.strategy == "m3" else []
    return FeedbackBundle(confused_pairs=pairs, confused_samples=samples, history=hist)


def _propose(llm, prompt: str, categories: Sequence[str], parse_retries: int):
    """Call the LLM until its reply parses, re-prompting on bad JSON.

    Returns (definitions or None, llm calls made, total latency ms).
    """
    calls = 0
    latency_ms = 0.0
    current_prompt = prompt
    for _ in range(parse_retries + 1):
        text = llm.complete(current_prompt)
        calls += 1
        latency_ms += getattr(llm, "last_latency_ms", 0.0)
        try:
            return parse_definitions(text, categories), calls, latency_ms
        except DefinitionParseError as exc:
            log.warning("proposal rejected: %s", exc)
            current_prompt = prompt + PARSE_RETRY_NOTICE
    return None, calls, latency_ms


def refine(
    dataset: Dataset,
    strategy: StrategyConfig,
    schedule: AnnealingSchedule,
    gateway: EmbeddingGateway,
    llm,
    seed: int,
    t_max: int,
    init_mode: str = "minimal",
    initial: Mapping[str, str] | None = None,
    parse_retries: int = 3,
    sample_char_cap: int = DEFAULT_SAMPLE_CHAR_CAP,
    on_initial: Callable[[dict, LoopCheckpoint], None] | None = None,
    on_iteration: Callable[[dict, LoopCheckpoint], None] | None = None,
    resume: LoopCheckpoint | None = None,
    evaluate_test: bool = True,
) -> RefinementResult:
    """Run the refinement loop for up to t_max iterations.

    Per iteration: classify the train split under the current definitions,
    assemble strategy feedback from the resulting confusion matrix, ask the
    LLM for a revised definition set, score it, apply the acceptance rule,
    update the best-so-far, append accepted states to the bounded history,
    and record dev macro-F1 for tracking. A proposal whose replies never
    parse is treated as rejected with no state change.

    `on_iteration` receives the trace record and a checkpoint that fully
    determines the rest of the run, so callers can persist crash-safe state.
    """
    if t_max < 0:
        raise ValueError("t_max must be >= 0")
    if llm is None:
        raise ValueError("refine requires an llm gateway")
    categories = list(dataset.categories)
    if len(categories) < 2:
        raise DataError("refinement requires at least 2 categories")
    train_docs = split_view(dataset, "train")
    dev_docs = split_view(dataset, "dev")
    if not train_docs or not dev_docs:
        raise DataError("refinement requires nonempty train and dev splits")
    cat_index = dataset.category_index
    gold_train = np.array([cat_index[d.label] for d in train_docs])
    gold_dev = np.array([cat_index[d.label] for d in dev_docs])
    train_vecs = gateway.embed_texts([d.text for d in train_docs], ROLE_DOCUMENT)
    dev_vecs = gateway.embed_texts([d.text for d in dev_docs], ROLE_DOCUMENT)

    def evaluate(defs: Mapping[str, str], doc_vecs, gold) -> tuple[float, ConfusionMatrix]:
        def_vecs = gateway.embed_definitions(defs, categories)
        _, preds = classify(doc_vecs, def_vecs)
        cm = confusion_matrix(gold, preds, categories)
        return macro_f1(cm).macro_f1, cm

    trace: list[dict] = []
    initial_info: dict | None = None
    llm_calls = 0

    if resume is not None:
        current = dict(resume.current)
        phi_cur = resume.phi_cur
        best = dict(resume.best)
        phi_best = resume.phi_best
        history = [HistoryEntry(dict(h.definitions), h.score) for h in resume.history]
        sample_rng = rng_state_from_json(resume.sample_rng_state)
        accept_rng = rng_state_from_json(resume.accept_rng_state)
        llm_calls = resume.llm_calls
        start_t = resume.iteration + 1
    else:
        if initial is not None:
            validate_definitions(initial, categories)
            current = {c: initial[c] for c in categories}
        elif init_mode == "llm_generated":
            before = getattr(llm, "calls", None)
            current = initial_definitions(categories, init_mode, llm, parse_retries)
            if before is not None:
                llm_calls += getattr(llm, "calls") - before
        else:
            current = initial_definitions(categories, init_mode)
        phi_cur, _ = evaluate(current, train_vecs, gold_train)
        phi_dev0, _ = evaluate(current, dev_vecs, gold_dev)
        best = dict(current)
        phi_best = phi_cur
        history = [HistoryEntry(dict(current), phi_cur)]
        sample_rng = make_rng(seed, "sampling")
        accept_rng = make_rng(seed, "acceptance")
        start_t = 1
        initial_info = {
            "iteration": 0,
            "phi_train": phi_cur,
            "phi_dev": phi_dev0,
            "definitions": dict(current),
            "definitions_hash": definitions_hash(current),
        }
        if on_initial is not None:
            on_initial(
                initial_info,
                _checkpoint(0, current, phi_cur, best, phi_best, history, sample_rng, accept_rng, llm_calls),
            )

    metropolis = strategy.resolved_acceptance == ACCEPT_METROPOLIS

    for t in range(start_t, t_max + 1):
        phi_now, cm = evaluate(current, train_vecs, gold_train)
        feedback = _assemble_feedback(strategy, dataset, cm, history, sample_rng)
        prompt = build_prompt(strategy, categories, current, phi_now, feedback, sample_char_cap)
        proposal, calls, latency_ms = _propose(llm, prompt, categories, parse_retries)
        llm_calls += calls
        temp = temperature(t, schedule)

        phi_prop: float | None = None
        delta_e: float | None = None
        accepted = False
        if proposal is not None:
            phi_prop, _ = evaluate(proposal, train_vecs, gold_train)
            delta_e = energy_drop(phi_best, phi_prop)
            accepted = accept(delta_e, temp, accept_rng) if metropolis else True
        if accepted and proposal is not None:
            current = proposal
            phi_cur = phi_prop
        if phi_cur > phi_best:
            phi_best = phi_cur
            best = dict(current)
        if accepted and proposal is not None:
            history.append(HistoryEntry(dict(current), phi_cur))
            del history[: max(0, len(history) - strategy.m_history)]

        phi_dev, _ = evaluate(current, dev_vecs, gold_dev)
        record = {
            "iteration": t,
            "strategy": strategy.strategy,
            "k": strategy.k_confused,
            "m": strategy.m_history,
            "temperature": temp,
            "phi_train_current": phi_cur,
            "phi_train_proposed": phi_prop,
            "delta_e": delta_e,
            "accepted": accepted,
            "phi_dev": phi_dev,
            "definitions_hash": definitions_hash(current),
            "llm_latency_ms": latency_ms,
        }
        trace.append(record)
        if on_iteration is not None:
            on_iteration(
                record,
                _checkpoint(t, current, phi_cur, best, phi_best, history, sample_rng, accept_rng, llm_calls),
            )

    dev_phi, dev_cm = evaluate(best, dev_vecs, gold_dev)
    dev_metrics = macro_f1(dev_cm)
    test_docs = split_view(dataset, "test")
    test_metrics = None
    test_cm = None
    if evaluate_test and test_docs:
        test_vecs = gateway.embed_texts([d.text for d in test_docs], ROLE_DOCUMENT)
        gold_test = np.array([cat_index[d.label] for d in test_docs])
        _, test_cm = evaluate_with(gateway, best, categories, test_vecs, gold_test)
        test_metrics = macro_f1(test_cm)

    return RefinementResult(
        best_definitions=dict(best),
        phi_best_train=phi_best,
        trace=trace,
        initial=initial_info,
        dev_metrics=dev_metrics,
        test_metrics=test_metrics,
        test_confusion=test_cm,
    )


def evaluate_with(
    gateway: EmbeddingGateway,
    definitions: Mapping[str, str],
    categories: Sequence[str],
    doc_vecs,
    gold,
) -> tuple[float, ConfusionMatrix]:
    """Score a definition set against pre-embedded documents."""
    def_vecs = gateway.embed_definitions(definitions, categories)
    _, preds = classify(doc_vecs, def_vecs)
    cm = confusion_matrix(gold, preds, categories)
    return macro_f1(cm).macro_f1, cm


def _checkpoint(
    iteration: int,
    current: Mapping[str, str],
    phi_cur: float,
    best: Mapping[str, str],
    phi_best: float,
    history: Sequence[HistoryEntry],
    sample_rng: random.Random,
    accept_rng: random.Random,
    llm_calls: int,
) -> LoopCheckpoint:
    return LoopCheckpoint(
        iteration=iteration,
        current=dict(current),
        phi_cur=phi_cur,
        best=dict(best),
        phi_best=phi_best,
        history=[HistoryEntry(dict(h.definitions), h.score) for h in history],
        sample_rng_state=rng_state_to_json(sample_rng),
        accept_rng_state=rng_state_to_json(accept_rng),
        llm_calls=llm_calls,
    )
