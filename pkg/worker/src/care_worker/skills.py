"""Deterministic demo skills plus the hook for plugging real models.

Both stubs are pure functions: the same payload always yields the same
output, which keeps end-to-end tests hermetic. A deployment wanting real
models sets WorkerConfig.model_hook to a callable (or "module:attr"
string) with the signature hook(skill_id, payload) -> output dict; it
replaces the rule for every skill it returns non-None for.
"""

from __future__ import annotations

import re

class SkillError(ValueError):
    """Payload violates the skill's input contract."""


COMMENT_LABEL = {
    "skill_id": "comment-label",
    "input_schema": {"text": "string", "span": "string", "tags": "string[]"},
    "output_schema": {"label_id": "string", "score": "number"},
}

SPAN_SUMMARIZE = {
    "skill_id": "span-echo-summarize",
    "input_schema": {"span": "string"},
    "output_schema": {"reply_text": "string"},
}

SKILL_SPECS = {s["skill_id"]: s for s in (COMMENT_LABEL, SPAN_SUMMARIZE)}

PRAISE_WORDS = ("great", "nice", "good", "excellent", "well done", "well written")

# Rule table for comment-label, first match wins:
#   empty note + highlight        -> highlight-only 1.0
#   note ending in "?"            -> question 1.0
#   note containing praise words  -> praise 0.8
#   short remark (<= 20 chars)    -> remark 0.6
#   anything else                 -> discussion 0.5


def comment_label(payload: dict) -> dict:
    text = (payload.get("text") or "").strip()
    span = (payload.get("span") or "").strip()
    if not text and not span:
        raise SkillError("comment-label needs text or span")
    if not text:
        return {"label_id": "highlight-only", "score": 1.0}
    if text.endswith("?"):
        return {"label_id": "question", "score": 1.0}
    lowered = text.lower()
    if any(word in lowered for word in PRAISE_WORDS):
        return {"label_id": "praise", "score": 0.8}
    if len(text) <= 20:
        return {"label_id": "remark", "score": 0.6}
    return {"label_id": "discussion", "score": 0.5}


_SENTENCE_END = re.compile(r"[.!?](?=\s|$)")


def span_echo_summarize(payload: dict) -> dict:
    span = (payload.get("span") or "").strip()
    if not span:
        raise SkillError("span-echo-summarize needs a non-empty span")
    match = _SENTENCE_END.search(span)
    first = span[: match.end()] if match else span
    return {"reply_text": "Summary: " + first.strip()}


HANDLERS = {
    "comment-label": comment_label,
    "span-echo-summarize": span_echo_summarize,
}


def execute(skill_id: str, payload: dict, model_hook=None) -> dict:
    """Run a skill, preferring the model hook when it claims the job."""
    if model_hook is not None:
        hooked = model_hook(skill_id, payload)
        if hooked is not None:
            return hooked
    handler = HANDLERS.get(skill_id)
    if handler is None:
        raise SkillError(f"skill {skill_id} not served by this worker")
    return handler(payload)
