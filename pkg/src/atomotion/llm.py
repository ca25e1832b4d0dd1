"""Atomic motion text from an LLM: prompt building, transport, parsing.

Two prompts are supported.  The inference prompt asks the model to split a
raw motion text into stages and describe six body parts per stage, guided
by worked examples.  The training prompt additionally hands over the
measured fine-grained description and asks for a per-stage summary.

Responses are parsed into an :class:`AtomicTextMatrix`.  A transport
wraps the actual model call and can record responses to, or replay them
from, a fixture directory keyed by the SHA-256 of the prompt.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .decompose import DEFAULT_DESCRIPTORS, DescriptorDef, FineGrainedDescription
from .errors import (
    EmptyDescription,
    EmptyInput,
    ExtraKey,
    FixtureMiss,
    MissingBodyPart,
    NonContiguousPeriods,
    NotParseable,
    TransportFailure,
)
from .motion import BODY_PARTS

_LOG = logging.getLogger(__name__)

INFERENCE_TEMPLATE = "atomic_inference_v1.txt"
TRAINING_TEMPLATE = "atomic_training_v1.txt"
TEMPLATE_SHA256 = {
    INFERENCE_TEMPLATE: "e5bf1adb966fe98144f4236483ce251916de03cce88075ad47e8508f52194795",
    TRAINING_TEMPLATE: "94974555e591eb0c9c2a042b317421db827970a83b4298fb81124c005834a4ee",
}
_SPLIT = "\n=====\n"


class TemplateDrift(RuntimeError):
    pass


def load_template(name: str) -> tuple[str, str]:
    """(system prompt, instruction body) of a bundled template, hash-checked."""
    raw = resources.files("atomotion").joinpath("assets", name).read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    if digest != TEMPLATE_SHA256[name]:
        raise TemplateDrift(f"prompt template {name} changed (sha256 {digest})")
    system, body = raw.decode("utf-8").split(_SPLIT, 1)
    return system.strip("\n"), body.rstrip("\n")


# ---------------------------------------------------------------------------
# atomic text matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AtomicTextMatrix:
    """P periods, each mapping the six body parts to a phrase."""

    periods: tuple[Mapping[str, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "periods", tuple(validate_period(i, p) for i, p in enumerate(self.periods)))
        if not self.periods:
            raise NotParseable("an atomic text matrix needs at least one period")

    @property
    def P(self) -> int:
        return len(self.periods)

    def phrase(self, period: int, part: str) -> str:
        return self.periods[period][part]

    def grid(self) -> list[list[str]]:
        """Phrases as an L x P nested list (body part major)."""
        return [[p[part] for p in self.periods] for part in BODY_PARTS]

    def to_dict(self) -> dict:
        return {str(i): {part: p[part] for part in BODY_PARTS} for i, p in enumerate(self.periods)}

    def to_json(self, indent: int | None = 4) -> str:
        return json.dumps(self.to_dict(), indent=indent, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: Mapping) -> "AtomicTextMatrix":
        return cls(tuple(_ordered_periods(d)))

    def __eq__(self, other):
        return isinstance(other, AtomicTextMatrix) and self.to_dict() == other.to_dict()

    __hash__ = None


def validate_period(index: int, record) -> dict[str, str]:
    if not isinstance(record, Mapping):
        raise NotParseable(f"period {index} is not an object")
    for part in BODY_PARTS:
        value = record.get(part)
        if not isinstance(value, str) or not value.strip():
            raise MissingBodyPart(index, part)
    for key in record:
        if key not in BODY_PARTS:
            raise ExtraKey(index, key)
    return {part: record[part] for part in BODY_PARTS}


def _ordered_periods(d: Mapping) -> list:
    if not isinstance(d, Mapping) or not d:
        raise NotParseable("expected a non-empty object keyed by period index")
    try:
        keyed = sorted(((int(k), k) for k in d), key=lambda t: t[0])
    except (TypeError, ValueError):
        raise NonContiguousPeriods(f"period keys must be integers, got {sorted(map(str, d))}") from None
    if [i for i, _ in keyed] != list(range(len(keyed))):
        raise NonContiguousPeriods(f"period keys {[k for _, k in keyed]} are not 0..{len(keyed) - 1}")
    out = []
    for i, k in keyed:
        out.append(validate_period(i, d[k]))
    return out


def parse_response(response: str) -> AtomicTextMatrix:
    """Extract and validate the JSON object in an LLM response.

    Surrounding prose and code fences are tolerated; the first substring
    that decodes as a JSON object is used.
    """
    if not isinstance(response, str):
        raise NotParseable("response is not text")
    decoder = json.JSONDecoder()
    pos = response.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(response, pos)
        except json.JSONDecodeError:
            pos = response.find("{", pos + 1)
            continue
        if isinstance(obj, dict):
            return AtomicTextMatrix.from_dict(obj)
        pos = response.find("{", pos + 1)
    raise NotParseable("no JSON object found in response")


# ---------------------------------------------------------------------------
# prompts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Example:
    input: str
    output: AtomicTextMatrix


def load_examples(path) -> list[Example]:
    with open(path, encoding="utf-8") as fh:
        items = json.load(fh)
    return [Example(it["input"], AtomicTextMatrix.from_dict(it["output"])) for it in items]


@dataclass(frozen=True, eq=False)
class PromptBundle:
    system: str
    context_rules_output: str
    examples: tuple[Example, ...] = ()
    query: str = ""
    fine_grained: FineGrainedDescription | None = None
    body_parts_of: Mapping[str, str] = field(default_factory=dict)
    periods: int | None = None

    def render(self) -> str:
        out = [f"system prompt: {self.system}", "", self.context_rules_output]
        if self.fine_grained is None:
            out.append("# Examples #")
            for k, ex in enumerate(self.examples, start=1):
                out += [f"Example {k}:", f"<input>{ex.input}</input>", f"<output>{ex.output.to_json()}</output>"]
            out.append("# Query #")
            if self.periods:
                out.append(f"Split the motion into {self.periods} stages.")
            out += [f"<input>{self.query}</input>", "<output>"]
        else:
            out += ["# Raw description #", self.query, "# Measured account #",
                    render_fine_grained(self.fine_grained, self.body_parts_of)]
        return "\n".join(out) + "\n"


def build_inference_prompt(raw_text: str, examples: Sequence[Example], periods: int | None = None) -> PromptBundle:
    if not raw_text or not raw_text.strip():
        raise EmptyInput("raw motion text is empty")
    if not examples:
        raise EmptyInput("the inference prompt needs at least one example")
    system, body = load_template(INFERENCE_TEMPLATE)
    return PromptBundle(system, body, tuple(examples), raw_text.strip(), periods=periods)


def render_fine_grained(desc: FineGrainedDescription, body_parts_of: Mapping[str, str]) -> str:
    lines = []
    for p, period in enumerate(desc.periods):
        lines.append(f"Stage {p}:")
        for part in BODY_PARTS:
            phrases = [f"{e.phrase} [{e.descriptor}]" for e in period if body_parts_of.get(e.descriptor) == part]
            lines.append(f"  {part}: " + ("; ".join(phrases) if phrases else "no measured change"))
    return "\n".join(lines)


def build_training_prompt(raw_text: str, fine_grained: FineGrainedDescription,
                          defs: Sequence[DescriptorDef] = DEFAULT_DESCRIPTORS) -> PromptBundle:
    if not raw_text or not raw_text.strip():
        raise EmptyInput("raw motion text is empty")
    if fine_grained.is_empty():
        raise EmptyDescription("every period of the fine-grained description is empty")
    parts = {d.id: d.body_part for d in defs}
    unknown = sorted({e.descriptor for period in fine_grained.periods for e in period} - set(parts))
    if unknown:
        raise EmptyDescription(f"descriptors without a body part: {unknown}")
    system, body = load_template(TRAINING_TEMPLATE)
    return PromptBundle(system, body, (), raw_text.strip(), fine_grained, parts, fine_grained.P)


# ---------------------------------------------------------------------------
# transport
# ---------------------------------------------------------------------------

def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class FixtureStore:
    """One JSON file per prompt hash holding the prompt and its response."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self._lock = threading.Lock()

    def path_for(self, prompt: str) -> Path:
        return self.directory / f"{prompt_hash(prompt)}.json"

    def get(self, prompt: str) -> str | None:
        path = self.path_for(prompt)
        with self._lock:
            if not path.exists():
                return None
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)["response"]

    def put(self, prompt: str, response: str) -> Path:
        path = self.path_for(prompt)
        doc = {"prompt_sha256": prompt_hash(prompt), "prompt": prompt, "response": response}
        with self._lock:
            self.directory.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(doc, fh, indent=2, ensure_ascii=False)
                fh.write("\n")
        return path


class HttpChatBackend:
    """OpenAI-compatible chat-completions endpoint configured from the environment.

    ATOMOTION_LLM_ENDPOINT, ATOMOTION_LLM_API_KEY and ATOMOTION_LLM_MODEL.
    """

    def __init__(self, endpoint=None, api_key=None, model=None, timeout=120.0):
        self.endpoint = endpoint or os.environ.get("ATOMOTION_LLM_ENDPOINT")
        self.api_key = api_key or os.environ.get("ATOMOTION_LLM_API_KEY", "")
        self.model = model or os.environ.get("ATOMOTION_LLM_MODEL", "gpt-4o")
        self.timeout = timeout

    def __call__(self, prompt: str) -> str:
        if not self.endpoint:
            raise TransportFailure("ATOMOTION_LLM_ENDPOINT is not set")
        body = json.dumps({"model": self.model, "temperature": 0,
                           "messages": [{"role": "user", "content": prompt}]}).encode("utf-8")
        req = urllib.request.Request(self.endpoint, data=body, headers={
            "Content-Type": "application/json", "Authorization": f"Bearer {self.api_key}"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            doc = json.load(resp)
        return doc["choices"][0]["message"]["content"]


MODES = ("live", "record", "replay")


class LlmTransport:
    """Prompt in, response out, in one of three modes.

    ``replay`` answers only from the fixture store and never touches the
    backend; ``record`` calls the backend and stores the exchange; ``live``
    just calls the backend.  Backend failures get ``retries`` extra tries.
    """

    def __init__(self, mode: str, store: FixtureStore | None = None,
                 backend: Callable[[str], str] | None = None, retries: int = 1):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode in ("record", "replay") and store is None:
            raise ValueError(f"{mode} mode needs a fixture store")
        self.mode = mode
        self.store = store
        self.backend = backend
        self.retries = retries

    def _call_backend(self, prompt: str) -> str:
        backend = self.backend or HttpChatBackend()
        last = None
        for attempt in range(self.retries + 1):
            try:
                return backend(prompt)
            except Exception as exc:  # any backend failure is a transport failure
                last = exc
                _LOG.warning("LLM call failed (attempt %d): %s", attempt + 1, exc)
        raise TransportFailure(f"LLM backend failed: {last}") from last

    def __call__(self, prompt: str) -> str:
        if self.mode == "replay":
            response = self.store.get(prompt)
            if response is None:
                raise FixtureMiss(prompt_hash(prompt))
            return response
        response = self._call_backend(prompt)
        if self.mode == "record":
            self.store.put(prompt, response)
        return response


def atomize(transport: LlmTransport, raw_text: str, examples: Sequence[Example],
            periods: int | None = None) -> AtomicTextMatrix:
    prompt = build_inference_prompt(raw_text, examples, periods).render()
    return parse_response(transport(prompt))


def atomize_training(transport: LlmTransport, raw_text: str, fine_grained: FineGrainedDescription,
                     defs: Sequence[DescriptorDef] = DEFAULT_DESCRIPTORS) -> AtomicTextMatrix:
    prompt = build_training_prompt(raw_text, fine_grained, defs).render()
    return parse_response(transport(prompt))
