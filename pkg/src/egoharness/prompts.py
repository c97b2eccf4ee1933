"""Prompt templates shipped as package assets, and their instantiation."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

TEMPLATE_NAMES = (
    "user_easy",
    "user_hard",
    "user_static",
    "static_ending",
    "service_agent",
    "evaluator",
    "summarizer",
)

_TOKEN = re.compile(r"(?<!\{)\{([a-z_]+)\}(?!\})")


def fill(template: str, **values: str) -> str:
    """Replace ``{name}`` tokens that have a value, then unescape doubled braces.

    Unknown single-brace text (JSON examples inside templates) is left alone.
    """

    def sub(m: re.Match[str]) -> str:
        key = m.group(1)
        return str(values[key]) if key in values else m.group(0)

    return _TOKEN.sub(sub, template).replace("{{", "{").replace("}}", "}")


def placeholders(template: str) -> set[str]:
    return set(_TOKEN.findall(template))


@dataclass(frozen=True)
class PromptSet:
    user_easy: str
    user_hard: str
    user_static: str
    static_ending: str
    service_agent: str
    evaluator: str
    summarizer: str

    @classmethod
    def from_dir(cls, directory: str | Path) -> "PromptSet":
        d = Path(directory)
        return cls(**{n: (d / f"{n}.txt").read_text(encoding="utf-8") for n in TEMPLATE_NAMES})

    @property
    def ending_sentence(self) -> str:
        return self.static_ending.strip()


@lru_cache(maxsize=1)
def default_prompts() -> PromptSet:
    root = resources.files("egoharness") / "assets" / "prompts"
    return PromptSet(**{n: (root / f"{n}.txt").read_text(encoding="utf-8") for n in TEMPLATE_NAMES})
