"""Prompt rendering for simple, single-shot and three-step chained prompting.

Wording lives in ``templates/*.txt`` (``{name}`` placeholders) so it can be
edited without touching code:

``header``             candidate block followed by the watched block
``simple``             history-only question, no candidates
``simple_candidates``  candidate block plus the simple question
``nir_single``         all three instructions in one prompt (after the header)
``nir_step1..3``       one instruction per chain step
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

TEMPLATE_NAMES = ("header", "simple", "simple_candidates", "nir_single", "nir_step1", "nir_step2", "nir_step3")
STEP_TEMPLATES = {1: "nir_step1", 2: "nir_step2", 3: "nir_step3"}
DEFAULT_HISTORY_CAP = 25


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(f for _, f, _, _ in string.Formatter().parse(self.body) if f)

    def render(self, **values) -> str:
        missing = self.placeholders - values.keys()
        if missing:
            raise PromptError(f"template {self.name!r}: unbound placeholders {sorted(missing)}")
        return self.body.format_map(values)


@dataclass(frozen=True)
class TemplateSet:
    templates: Mapping[str, PromptTemplate]

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "TemplateSet":
        """Load the templates from ``directory`` or the packaged defaults."""
        if directory is None:
            root = resources.files("nirec") / "templates"
        else:
            root = Path(directory)
        out = {}
        for name in TEMPLATE_NAMES:
            path = root / f"{name}.txt"
            if not path.is_file():
                raise FileNotFoundError(f"missing template {name}.txt in {directory or 'package data'}")
            out[name] = PromptTemplate(name, path.read_text(encoding="utf-8").rstrip("\n"))
        return cls(out)

    def __getitem__(self, name: str) -> PromptTemplate:
        return self.templates[name]

    def digests(self) -> dict[str, str]:
        return {n: hashlib.sha256(t.body.encode("utf-8")).hexdigest() for n, t in sorted(self.templates.items())}


def _titles(titles: Sequence[str]) -> str:
    return ", ".join(titles)


def _require(titles: Sequence[str], what: str) -> None:
    if not titles:
        raise PromptError(f"{what} list is empty")


def render_simple(templates: TemplateSet, watched_titles: Sequence[str], k: int = 10) -> str:
    _require(watched_titles, "watched")
    return templates["simple"].render(watched=_titles(watched_titles), k=k)


def render_simple_candidates(
    templates: TemplateSet, candidate_titles: Sequence[str], watched_titles: Sequence[str], k: int = 10
) -> str:
    _require(candidate_titles, "candidate")
    _require(watched_titles, "watched")
    return templates["simple_candidates"].render(
        candidates=_titles(candidate_titles), watched=_titles(watched_titles), k=k
    )


def _header(templates: TemplateSet, candidates: Sequence[str], watched: Sequence[str]) -> str:
    _require(candidates, "candidate")
    _require(watched, "watched")
    return templates["header"].render(candidates=_titles(candidates), watched=_titles(watched))


def render_single(
    templates: TemplateSet, candidate_titles: Sequence[str], watched_titles: Sequence[str], k: int = 10
) -> str:
    head = _header(templates, candidate_titles, watched_titles)
    return head + "\n" + templates["nir_single"].render(k=k)


@dataclass
class PromptChainState:
    """One user's progress through the chained prompts.

    ``steps`` lists the enabled steps in order; the recommendation step (3)
    is always last. Dropping step 1 or 2 gives the ablation variants.
    """

    user_id: int
    candidate_titles: tuple[str, ...]
    watched_titles: tuple[str, ...]
    steps: tuple[int, ...] = (1, 2, 3)
    k: int = 10
    prompts: dict[int, str] = field(default_factory=dict)
    answers: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.steps or self.steps[-1] != 3 or list(self.steps) != sorted(set(self.steps)):
            raise PromptError(f"invalid step sequence {self.steps}")

    def previous(self, step: int) -> int | None:
        pos = self.steps.index(step)
        return self.steps[pos - 1] if pos else None

    @property
    def complete(self) -> bool:
        return all(s in self.answers for s in self.steps)


def _append(prompt: str, answer: str, instruction: str) -> str:
    sep = "" if answer[:1].isspace() else " "
    return f"{prompt}{sep}{answer}\n{instruction}"


def render_chain_step(templates: TemplateSet, state: PromptChainState, step: int) -> str:
    """Render ``step`` and record it on ``state``.

    The first enabled step starts from the candidate/watched header; later
    steps are the previous prompt, its answer, then the new instruction.
    """
    if step not in state.steps:
        raise PromptError(f"step {step} is not enabled for this chain ({state.steps})")
    instruction = templates[STEP_TEMPLATES[step]].render(k=state.k)
    prev = state.previous(step)
    if prev is None:
        text = _header(templates, state.candidate_titles, state.watched_titles) + "\n" + instruction
    else:
        if prev not in state.answers:
            raise PromptError(f"step {step} needs the answer to step {prev}")
        if prev not in state.prompts:
            raise PromptError(f"step {prev} has not been rendered")
        text = _append(state.prompts[prev], state.answers[prev], instruction)
    state.prompts[step] = text
    return text


def cap_history(titles: Sequence[str], cap: int | None = DEFAULT_HISTORY_CAP) -> tuple[str, ...]:
    """Keep the ``cap`` most recent titles, oldest first."""
    if cap is None or cap <= 0:
        return tuple(titles)
    return tuple(titles[-cap:])
