"""Prompt templates with ``[FILL_*]``-style slots."""

from __future__ import annotations

import re
from functools import cache
from importlib import resources

TEMPLATE_IDS = ("persona", "daily", "expert", "solve", "extract", "negatives", "passage", "judge", "reader")

SLOT_RE = re.compile(r"\[(FILL_[A-Z_]+|POSITIVE_PASSAGE_DESCRIPTIONS_HERE)\]")


@cache
def template(template_id: str) -> str:
    if template_id not in TEMPLATE_IDS:
        raise KeyError(f"unknown prompt template {template_id!r}")
    text = resources.files(__package__).joinpath(f"{template_id}.txt").read_text(encoding="utf-8")
    return text.rstrip("\n")


def slots(template_id: str) -> list[str]:
    return SLOT_RE.findall(template(template_id))


def render(template_id: str, **fills: str) -> str:
    """Substitute every slot in one pass; slot names are the keyword names."""
    tpl = template(template_id)
    wanted = set(SLOT_RE.findall(tpl))
    if wanted != set(fills):
        raise KeyError(f"{template_id}: slots {sorted(wanted)} but got fills {sorted(fills)}")
    return SLOT_RE.sub(lambda m: fills[m.group(1)], tpl)
