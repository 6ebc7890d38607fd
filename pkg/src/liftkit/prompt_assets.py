"""Versioned prompt template assets.

Templates are stored as files so their bytes are pinned by golden tests;
substitution happens by literal token replacement (the templates contain
JSON braces, so ``str.format`` is unusable).
"""

from __future__ import annotations

import hashlib
from importlib import resources

ASSET_VERSION = "v1"

ASSET_NAMES = (
    "qa_system_squad.txt",
    "qa_system_niah.txt",
    "qa_system_generic.txt",
    "qa_user.txt",
    "judge.txt",
)


def asset_text(name: str) -> str:
    """Return an asset's text with the single trailing newline removed."""
    if name not in ASSET_NAMES:
        raise KeyError(f"unknown prompt asset {name!r}")
    text = (
        resources.files("liftkit")
        .joinpath(f"prompts/{ASSET_VERSION}/{name}")
        .read_text(encoding="utf-8")
    )
    if text.endswith("\n"):
        text = text[:-1]
    return text


def asset_digest(name: str) -> str:
    return hashlib.sha256(asset_text(name).encode("utf-8")).hexdigest()


def render(template: str, substitutions: dict[str, str]) -> str:
    """Replace ``{token}`` markers literally, leaving all other braces alone."""
    out = template
    for token, value in substitutions.items():
        out = out.replace("{" + token + "}", value)
    return out
