"""Errors shared by the type checkers."""
from __future__ import annotations

from typing import Tuple


class TypeCheckError(Exception):
    """A typing rule failed.

    ``rule`` names the rule, ``condition`` the premise that does not hold and
    ``path`` the route from the root of the program to the offending node.
    """

    def __init__(self, rule: str, condition: str, path: Tuple[str, ...] = ()):
        self.rule = rule
        self.condition = condition
        self.path = tuple(path)
        where = "/".join(self.path) or "<root>"
        super().__init__(f"{rule}: {condition} (at {where})")

    def to_json(self) -> dict:
        return {"rule": self.rule, "condition": self.condition, "path": list(self.path)}
