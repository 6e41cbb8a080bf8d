"""Prompt templates: one text file per prompt with ``{name}`` placeholders."""

from __future__ import annotations

import re
from pathlib import Path

from tkcts.errors import TemplateError

TEMPLATE_NAMES = (
    "initial",
    "debug",
    "improve",
    "feedback",
    "judge_relative",
    "judge_absolute",
    "judge_rubric",
)

DEFAULT_DIR = Path(__file__).resolve().parent / "templates"

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


class TemplateSet:
    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else DEFAULT_DIR
        missing = [self.directory / f"{name}.txt" for name in TEMPLATE_NAMES
                   if not (self.directory / f"{name}.txt").is_file()]
        if missing:
            listing = ", ".join(str(p) for p in missing)
            raise TemplateError(f"missing prompt template(s): {listing}")
        self.templates = {name: (self.directory / f"{name}.txt").read_text() for name in TEMPLATE_NAMES}

    def placeholders(self, name: str) -> set[str]:
        return set(_PLACEHOLDER.findall(self.templates[name]))

    def render(self, name: str, **values: str) -> str:
        """Substitute ``{key}`` placeholders in a single pass.

        Values are inserted verbatim, so braces inside code or JSON are safe.
        Unknown ``{...}`` tokens (lowercase identifiers) must be supplied.
        """
        template = self.templates[name]

        def sub(match: re.Match) -> str:
            key = match.group(1)
            if key not in values:
                raise TemplateError(f"template {name!r} needs a value for {{{key}}}")
            return str(values[key])

        return _PLACEHOLDER.sub(sub, template)


_default: TemplateSet | None = None


def default_templates() -> TemplateSet:
    global _default
    if _default is None:
        _default = TemplateSet()
    return _default
