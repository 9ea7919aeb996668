"""Prompt template registry with strict placeholder substitution.

Templates live as text files next to a manifest that declares each template's
id and required placeholder names. Bodies are loaded verbatim (minus the final
newline the file format forces) and substituted in a single pass, so braces
inside bound values are never re-expanded.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from perfgen.dataset import TestMode, UnitTest

_TEMPLATE_DIR = Path(__file__).parent / "templates"
_ASSET_DIR = Path(__file__).parent / "assets"
_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")

DEFAULT_ERROR_BYTE_BUDGET = 2048


class UnknownTemplateError(KeyError):
    pass


class PlaceholderError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str
    required: frozenset[str]

    def render(self, bindings: dict[str, str]) -> str:
        found = set(_PLACEHOLDER_RE.findall(self.body))
        missing = sorted(self.required - bindings.keys())
        extra = sorted(bindings.keys() - self.required)
        if missing or extra:
            raise PlaceholderError(
                f"template {self.id!r}: missing placeholders {missing}, extra bindings {extra}"
            )
        if found != self.required:
            raise PlaceholderError(
                f"template {self.id!r}: body placeholders {sorted(found)} do not match "
                f"declared {sorted(self.required)}"
            )
        return _PLACEHOLDER_RE.sub(lambda m: bindings[m.group(1)], self.body)


class PromptRegistry:
    def __init__(self, templates: dict[str, PromptTemplate]):
        self._templates = templates

    def __contains__(self, template_id: str) -> bool:
        return template_id in self._templates

    def ids(self) -> list[str]:
        return sorted(self._templates)

    def get(self, template_id: str) -> PromptTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise UnknownTemplateError(f"unknown template id {template_id!r}") from None

    def render(self, template_id: str, bindings: dict[str, str]) -> str:
        return self.get(template_id).render(bindings)


def _read_body(path: Path) -> str:
    text = path.read_text(encoding="utf-8")
    # Template files end with a newline; the body is defined without it.
    return text[:-1] if text.endswith("\n") else text


def load_registry(template_dir: Path | None = None) -> PromptRegistry:
    directory = template_dir or _TEMPLATE_DIR
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    templates: dict[str, PromptTemplate] = {}
    for entry in manifest["templates"]:
        template = PromptTemplate(
            id=entry["id"],
            body=_read_body(directory / entry["file"]),
            required=frozenset(entry["placeholders"]),
        )
        if template.id in templates:
            raise ValueError(f"duplicate template id {template.id!r} in manifest")
        templates[template.id] = template
    return PromptRegistry(templates)


_default_registry: PromptRegistry | None = None


def default_registry() -> PromptRegistry:
    global _default_registry
    if _default_registry is None:
        _default_registry = load_registry()
    return _default_registry


def render(template_id: str, bindings: dict[str, str]) -> str:
    return default_registry().render(template_id, bindings)


def verbalize_test(test: UnitTest) -> str:
    """Render a unit test for inclusion in a prompt."""
    if test.mode == TestMode.CALL_BASED:
        return f"assert {test.call} == {test.expected}"
    return f"Input:\n{test.input}\nExpected output:\n{test.output}"


def truncate_error(message: str, byte_budget: int = DEFAULT_ERROR_BYTE_BUDGET) -> str:
    """Head-preserving truncation so unbounded tracebacks cannot blow token limits."""
    encoded = message.encode("utf-8")
    if len(encoded) <= byte_budget:
        return message
    head = encoded[:byte_budget].decode("utf-8", errors="ignore")
    return f"{head}\n[truncated {len(encoded) - byte_budget} bytes]"


def load_icl_demos() -> str:
    """The bundled slow-to-fast refinement examples used by the few-shot prompt."""
    return _read_body(_ASSET_DIR / "icl_demos.txt")
