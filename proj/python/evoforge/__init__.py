"""Python bindings for the evoforge data-flywheel engine."""

from ._core import (
    ANSWER_MARKER,
    EvoforgeError,
    Fraction,
    canonicalize_answer,
    cli,
    extract_final_answer,
    judge_prompt,
    parse_verdict,
    reflection_prompt,
    round_reports,
    serialize_verdict,
    simulate,
    solve_prompt,
)

__all__ = [
    "ANSWER_MARKER",
    "EvoforgeError",
    "Fraction",
    "canonicalize_answer",
    "cli",
    "extract_final_answer",
    "judge_prompt",
    "parse_verdict",
    "reflection_prompt",
    "round_reports",
    "serialize_verdict",
    "simulate",
    "solve_prompt",
]
