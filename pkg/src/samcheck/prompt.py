"""Prompt construction for the constraint-guided and basic detectors.

Block wording lives in text assets next to this module (``prompts/*.txt``)
so the exact bytes sent to a model are versioned and golden-tested.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from samcheck.errors import EmptyConfig

PROMPT_VERSION = "1"


class Variant(str, enum.Enum):
    SLS = "SlsDetector"
    BASIC = "Basic"


class Dimension(str, enum.Enum):
    RESOURCE_TYPE = "ResourceType"
    ENTRY = "Entry"
    VALUE = "Value"
    ENTRY_DEPENDENCY = "EntryDependency"
    VALUE_DEPENDENCY = "ValueDependency"


_BLOCK_FILES = {
    Dimension.RESOURCE_TYPE: "constraint_resource_type.txt",
    Dimension.ENTRY: "constraint_entry.txt",
    Dimension.VALUE: "constraint_value.txt",
    Dimension.ENTRY_DEPENDENCY: "constraint_entry_dependency.txt",
    Dimension.VALUE_DEPENDENCY: "constraint_value_dependency.txt",
}

CONSTRAINT_HEADINGS = (
    "Resource type constraint",
    "Entry constraint",
    "Value constraint",
    "Entry dependency constraint",
    "Value dependency constraint",
)

CATEGORY_HEADINGS = (
    "Resource Type Errors",
    "Configuration Entry Errors",
    "Configuration Entry Value Errors",
    "Entry Dependency Errors",
    "Value Dependency Errors",
)


@lru_cache(maxsize=None)
def load_asset(name: str) -> str:
    text = resources.files("samcheck").joinpath("prompts", name).read_text(encoding="utf-8")
    # normalise line endings so rendering is identical across platforms
    return text.replace("\r\n", "\n").rstrip("\n")


@dataclass(frozen=True)
class ConstraintBlock:
    dimension: Dimension
    instruction_text: str
    cot_steps: tuple[str, ...] = ()

    def render(self) -> str:
        return self.instruction_text


def _split_steps(text: str) -> tuple[str, ...]:
    return tuple(line for line in text.splitlines() if line.startswith("Step "))


def constraint_blocks() -> tuple[ConstraintBlock, ...]:
    """The five constraint blocks in their fixed order."""
    blocks = []
    for dim in Dimension:
        text = load_asset(_BLOCK_FILES[dim])
        steps = _split_steps(text) if dim is Dimension.ENTRY else ()
        blocks.append(ConstraintBlock(dim, text, steps))
    return tuple(blocks)


@dataclass(frozen=True)
class PromptSpec:
    variant: Variant
    config_text: str
    constraint_blocks: tuple[ConstraintBlock, ...] = field(default=())
    response_demand: str = ""

    def __post_init__(self):
        if self.variant is Variant.SLS and [b.dimension for b in self.constraint_blocks] != list(Dimension):
            raise ValueError("the constraint-guided prompt needs the five blocks in dimension order")
        if self.variant is Variant.BASIC and self.constraint_blocks:
            raise ValueError("the basic prompt carries no constraint blocks")

    def render(self) -> str:
        head = self.config_text if self.config_text.endswith("\n") else self.config_text + "\n"
        parts = [load_asset("role_task.txt")]
        if self.constraint_blocks:
            parts.append(load_asset("cot_intro.txt"))
            parts.extend(b.render() for b in self.constraint_blocks)
        parts.append(self.response_demand)
        return head + "\n" + "\n\n".join(parts) + "\n"


def _check(config_text: str) -> None:
    if not config_text or not config_text.strip():
        raise EmptyConfig("configuration text is empty")


def slsdetector_spec(config_text: str) -> PromptSpec:
    _check(config_text)
    return PromptSpec(Variant.SLS, config_text, constraint_blocks(), load_asset("response_sls.txt"))


def basic_spec(config_text: str) -> PromptSpec:
    _check(config_text)
    return PromptSpec(Variant.BASIC, config_text, (), load_asset("response_basic.txt"))


def build_slsdetector_prompt(config_text: str) -> str:
    """Render the constraint-guided prompt for ``config_text``.

    Raises:
        EmptyConfig: if ``config_text`` is empty or blank.
    """
    return slsdetector_spec(config_text).render()


def build_basic_prompt(config_text: str) -> str:
    """Render the baseline prompt: config, role and task, format demand."""
    return basic_spec(config_text).render()


def build_prompt(config_text: str, variant: Variant | str) -> str:
    variant = Variant(variant)
    if variant is Variant.SLS:
        return build_slsdetector_prompt(config_text)
    return build_basic_prompt(config_text)
