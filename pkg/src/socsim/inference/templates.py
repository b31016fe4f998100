"""Prompt templates with ``{placeholder}`` substitution."""

from __future__ import annotations

import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from socsim.errors import TemplateError

_FMT = string.Formatter()


@dataclass(frozen=True)
class Template:
    template_id: str
    text: str
    system: str = ""

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(name for _, name, _, _ in _FMT.parse(self.text) if name)

    def render(self, variables: dict[str, str]) -> str:
        missing = self.placeholders - variables.keys()
        if missing:
            raise TemplateError(f"template {self.template_id!r} missing variables {sorted(missing)}")
        user = self.text.format_map(variables)
        return f"{self.system}\n\n{user}" if self.system else user


# template_id -> (user file, system file)
BUILTIN = {
    "trustor": ("trustor.txt", "trust_system.txt"),
    "trustee": ("trustee.txt", "trust_system.txt"),
    "opinion_update": ("opinion_update.txt", "opinion_system.txt"),
}


def _read_builtin(name: str) -> str:
    return resources.files("socsim.data").joinpath("templates", name).read_text(encoding="utf-8")


class TemplateRegistry:
    def __init__(self, templates: dict[str, Template] | None = None):
        self._templates = dict(templates or {})

    @classmethod
    def builtin(cls) -> "TemplateRegistry":
        reg = cls()
        for tid, (user, system) in BUILTIN.items():
            reg.add(Template(tid, _read_builtin(user).rstrip("\n"), _read_builtin(system).rstrip("\n")))
        return reg

    def add(self, t: Template) -> None:
        self._templates[t.template_id] = t

    def load_dir(self, path) -> None:
        """Add every ``*.txt`` in ``path`` as a template named after the file stem."""
        for f in sorted(Path(path).glob("*.txt")):
            self.add(Template(f.stem, f.read_text(encoding="utf-8").rstrip("\n")))

    def __getitem__(self, template_id: str) -> Template:
        try:
            return self._templates[template_id]
        except KeyError:
            raise TemplateError(f"unknown template {template_id!r}") from None

    def __contains__(self, template_id) -> bool:
        return template_id in self._templates

    def render(self, template_id: str, variables: dict[str, str]) -> str:
        return self[template_id].render(variables)
