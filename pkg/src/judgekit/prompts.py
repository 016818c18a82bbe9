"""Deterministic prompt construction for judges, generators, and the referee.

Rendering is pure: identical inputs yield identical bytes. Templates can be
overridden from a directory of plain-text files (judge.txt,
generator_with_docs.txt, generator_no_docs.txt, referee.txt) carrying the
same named placeholders as the built-in defaults.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path

from .domain import (
    ALL_DIMENSIONS_ASPECT,
    EvaluationDimension,
    GroundTruth,
    HybridAspect,
    Query,
    ResponseSet,
    label_of,
)


class TemplateError(ValueError):
    """A template placeholder could not be bound or remained unbound."""


# Canonical description of each evaluation dimension, inserted into judge
# prompts for exactly the dimensions of the active aspect.
DIMENSION_DESCRIPTIONS: dict[EvaluationDimension, str] = {
    EvaluationDimension.HALLUCINATION: (
        "Hallucination refers to the presence of information in the option that "
        "contradicts ground truth, it is an incorrect answer to the question."
    ),
    EvaluationDimension.COMPLETENESS: (
        "Completeness refers to whether the choice contains as complete information "
        "as possible from the ground truth. it did not fully answer the question correctly."
    ),
    EvaluationDimension.COHERENCE: (
        "coherence refers to whether the choice is logically coherent and whether "
        "the language between each sentence is fluent."
    ),
    EvaluationDimension.SEMANTIC_CONSISTENCY: (
        "Semantic Consistency refers to whether the choice is semantically consistent "
        "with the ground truth, rather than just having lexical repetition."
    ),
}

_COUNT_WORDS = {2: "two", 3: "three", 4: "four", 5: "five", 6: "six"}

DEFAULT_JUDGE_TEMPLATE = """\
You are an excellent evaluation expert. Please select the best answer and the worst answer from {num_choices} choices based on the ground truth and the query from the {aspect_names} aspect.
{aspect_descriptions}
Note: your result format must strictly be "{format_instruction}". Output the content of COT first and then output the Answer.
Here is the query:{query}, Here is the ground truth:{ground_truth}
{choices}
Result:"""

DEFAULT_GENERATOR_WITH_DOCS_TEMPLATE = """\
Answer the question based on the given passages. Only give me the answer and do not output any other words.

{passages}

Question: {query}
Answer:"""

DEFAULT_GENERATOR_NO_DOCS_TEMPLATE = """\
Answer the following question. Only give me the answer and do not output any other words.

Question: {query}
Answer:"""

DEFAULT_REFEREE_TEMPLATE = """\
You are an impartial meta-evaluator. Two judgments of the same candidate answers are shown below. Decide which judgment evaluates the candidates more reasonably with respect to the query and the ground truth.
Here is the query:{query}, Here is the ground truth:{ground_truth}
Here is the judgment A:{judgment_a}
Here is the judgment B:{judgment_b}
Note: your result format must strictly be "Better:{A or B or Tie}".
Result:"""

_TEMPLATE_FILES = {
    "judge": "judge.txt",
    "generator_with_docs": "generator_with_docs.txt",
    "generator_no_docs": "generator_no_docs.txt",
    "referee": "referee.txt",
}

_PLACEHOLDER_NAMES = (
    "aspect_names",
    "aspect_descriptions",
    "num_choices",
    "format_instruction",
    "query",
    "ground_truth",
    "choices",
    "passages",
    "judgment_a",
    "judgment_b",
)

_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(_PLACEHOLDER_NAMES) + r")\}")


def render(template: str, values: dict[str, str]) -> str:
    """Bind named placeholders in a single pass.

    Substituted values are never re-scanned, so literal braces in templates
    (the strict output-format instruction contains them) and in values are
    safe. Raises TemplateError if a known placeholder has no binding.
    """
    unbound: list[str] = []

    def _sub(match: re.Match[str]) -> str:
        name = match.group(1)
        if values.get(name) is None:
            unbound.append(name)
            return match.group(0)
        return str(values[name])

    rendered = _PLACEHOLDER_RE.sub(_sub, template)
    if unbound:
        raise TemplateError(f"unbound placeholders: {sorted(set(unbound))}")
    return rendered


@dataclass(frozen=True)
class TemplateSet:
    """The four prompt templates used by the pipelines."""

    judge: str = DEFAULT_JUDGE_TEMPLATE
    generator_with_docs: str = DEFAULT_GENERATOR_WITH_DOCS_TEMPLATE
    generator_no_docs: str = DEFAULT_GENERATOR_NO_DOCS_TEMPLATE
    referee: str = DEFAULT_REFEREE_TEMPLATE

    @classmethod
    def load(cls, template_dir: str | Path | None) -> "TemplateSet":
        """Built-in defaults, overridden by any files present in template_dir."""
        templates = cls()
        if template_dir is None:
            return templates
        root = Path(template_dir)
        if not root.is_dir():
            raise TemplateError(f"template directory not found: {root}")
        for attr, filename in _TEMPLATE_FILES.items():
            path = root / filename
            if path.is_file():
                templates = replace(templates, **{attr: path.read_text(encoding="utf-8")})
        return templates


def enumerate_hybrid_aspects() -> list[HybridAspect]:
    """The eight hybrid evaluation aspects, in canonical order.

    Four singletons, two two-dimension combinations, the three-dimension
    combination (which leaves out Coherence), and the full four-dimension
    aspect.
    """
    h = EvaluationDimension.HALLUCINATION
    cm = EvaluationDimension.COMPLETENESS
    ch = EvaluationDimension.COHERENCE
    sc = EvaluationDimension.SEMANTIC_CONSISTENCY
    return [
        HybridAspect((h,)),
        HybridAspect((cm,)),
        HybridAspect((ch,)),
        HybridAspect((sc,)),
        HybridAspect((h, cm)),
        HybridAspect((ch, sc)),
        HybridAspect((h, cm, sc)),
        HybridAspect((h, cm, ch, sc)),
    ]


def format_instruction(m: int) -> str:
    """The strict output-format instruction for an m-candidate choice set."""
    labels = [label_of(i, m) for i in range(m)]
    tight = ",".join(labels)
    spaced = ", ".join(labels)
    return (
        "COT:{.there is your analysis}. "
        "Answer : Best answer:{a choice must be one of[" + tight + "]}. "
        "Worst answer :{a choice must be one of[" + spaced + "]}"
    )


def _choices_block(responses: ResponseSet) -> str:
    lines = []
    for candidate in responses.candidates:
        letter = label_of(candidate.label_index, responses.m)
        lines.append(f"Here is the {letter} choice:{candidate.text}")
    return ",\n".join(lines) + "."


def build_judge_prompt(
    aspect: HybridAspect,
    query: Query,
    gt: GroundTruth,
    responses: ResponseSet,
    templates: TemplateSet | None = None,
) -> str:
    """Render the judge prompt for one hybrid aspect.

    The prompt names the aspect, describes exactly the aspect's dimensions,
    and lists all m choices labeled A.. in candidate order. Several
    ground-truth answers are joined with "; " into the single slot.
    """
    if not gt.answers:
        raise TemplateError("ground truth must carry at least one answer")
    templates = templates or TemplateSet()
    descriptions = "\n".join(
        f"{dim.value}: {DIMENSION_DESCRIPTIONS[dim]}" for dim in aspect.dimensions
    )
    return render(
        templates.judge,
        {
            "aspect_names": aspect.name,
            "aspect_descriptions": descriptions,
            "num_choices": _COUNT_WORDS[responses.m],
            "format_instruction": format_instruction(responses.m),
            "query": query.text,
            "ground_truth": "; ".join(gt.answers),
            "choices": _choices_block(responses),
        },
    )


def build_all_dims_prompt(
    query: Query,
    gt: GroundTruth,
    responses: ResponseSet,
    templates: TemplateSet | None = None,
) -> str:
    """The judge prompt over all four evaluation dimensions at once."""
    return build_judge_prompt(ALL_DIMENSIONS_ASPECT, query, gt, responses, templates)


def build_generator_prompt(
    query: Query,
    docs: list[str] | None = None,
    templates: TemplateSet | None = None,
) -> str:
    """Render a generation prompt, with retrieved passages prepended when given."""
    templates = templates or TemplateSet()
    if docs is None:
        return render(templates.generator_no_docs, {"query": query.text})
    if not docs:
        raise TemplateError("document list must be non-empty when provided")
    if any(not d for d in docs):
        raise TemplateError("documents must be non-empty")
    passages = "\n".join(f"Passage {i}: {text}" for i, text in enumerate(docs, start=1))
    return render(
        templates.generator_with_docs, {"passages": passages, "query": query.text}
    )


def build_referee_prompt(
    query: Query,
    gt: GroundTruth,
    judgment_a: str,
    judgment_b: str,
    templates: TemplateSet | None = None,
) -> str:
    """Render the meta-evaluation prompt comparing two judgments."""
    templates = templates or TemplateSet()
    return render(
        templates.referee,
        {
            "query": query.text,
            "ground_truth": "; ".join(gt.answers),
            "judgment_a": judgment_a,
            "judgment_b": judgment_b,
        },
    )
