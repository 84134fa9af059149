"""Prompt templates for the answer generator.

Template bytes are frozen: rendering substitutes the <CONTEXT> and
<QUESTION> slots verbatim and changes nothing else, including trailing
spaces and the embedded one-shot exemplar. Tests compare against golden
files byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DataError

CONTEXT_SLOT = "<CONTEXT>"
QUESTION_SLOT = "<QUESTION>"

EVQA_USER = "Context: <CONTEXT> \nQuestion: <QUESTION>\nThe answer is:"

INFOSEEK_SYSTEM = (
    "You always answer the question the user asks. Do not answer anything else."
)

INFOSEEK_USER = (
    "Context: The sounthern side of the Alps is next to Lake Como.\n"
    "Question: Which body of water is this mountain located in or next to?\n"
    "Just answer the questions, no explanations needed. \n"
    "Short answer is: Lake Como\n"
    "\n"
    "Context: <CONTEXT> \n"
    "Question: <QUESTION>\n"
    "Just answer the questions, no explanations needed. \n"
    "Short answer is:"
)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    user_pattern: str
    system: str | None = None

    def __post_init__(self):
        if CONTEXT_SLOT not in self.user_pattern or QUESTION_SLOT not in self.user_pattern:
            raise DataError(
                f"template {self.name!r} must contain both "
                f"{CONTEXT_SLOT} and {QUESTION_SLOT} slots"
            )


TEMPLATES: dict[str, PromptTemplate] = {
    "evqa": PromptTemplate(name="evqa", user_pattern=EVQA_USER),
    "infoseek": PromptTemplate(name="infoseek", user_pattern=INFOSEEK_USER, system=INFOSEEK_SYSTEM),
}


def get_template(name: str) -> PromptTemplate:
    try:
        return TEMPLATES[name]
    except KeyError:
        raise DataError(
            f"unknown template {name!r}, expected one of {sorted(TEMPLATES)}"
        ) from None


def render_prompt(t: PromptTemplate, context: str, question: str) -> list[dict[str, str]]:
    """Produce the chat message list for one query."""
    if not context:
        raise DataError("context must be nonempty")
    if not question:
        raise DataError("question must be nonempty")
    user = t.user_pattern.replace(CONTEXT_SLOT, context).replace(QUESTION_SLOT, question)
    messages = []
    if t.system is not None:
        messages.append({"role": "system", "content": t.system})
    messages.append({"role": "user", "content": user})
    return messages
