"""Plausible literal values for synthesized records, keyed on column or parameter names."""

from __future__ import annotations

import random
import re
from datetime import datetime, timedelta
from typing import Any, Dict, List, Mapping, Optional, Sequence, Set

from core.schema import DATETIME_FORMAT

FIRST_NAMES = ("Avery", "Jordan", "Morgan", "Riley", "Casey", "Quinn", "Harper", "Rowan")
LAST_NAMES = ("Patel", "Nakamura", "Okafor", "Lindqvist", "Moreau", "Castillo", "Brennan", "Haddad")
STATUSES = ("in_review", "interviewing", "offer_extended", "on_hold")
KINDS = ("phone", "video", "onsite")
TITLES = ("Data Analyst", "Backend Engineer", "Product Designer", "Site Reliability Engineer")
COMPANIES = ("Northwind Labs", "Bluefin Analytics", "Cobalt Systems", "Harbor Health")
LOCATIONS = ("Berlin", "Toronto", "Lisbon", "Remote")
SENTENCES = (
    "Candidate explained the caching design clearly",
    "Strong collaboration examples from the last project",
    "Follow up about relocation timeline",
    "Team lead asked for a portfolio walkthrough",
)


class ValueFactory:
    """Draws values from a seeded ``random.Random``; identical seeds give identical values.

    ``samples`` maps column names to text already present in the domain. Titles and
    free text are drawn from it first so generated values read like the domain's own.
    """

    def __init__(
        self,
        rng: random.Random,
        clock: Optional[str] = None,
        samples: Optional[Mapping[str, Sequence[str]]] = None,
    ) -> None:
        self._rng = rng
        self._clock = clock
        self._samples = {name: sorted(set(items)) for name, items in (samples or {}).items() if items}

    def _sampled(self, name: str) -> Optional[str]:
        pool = self._samples.get(name)
        return self._rng.choice(pool) if pool else None

    def person(self) -> str:
        return f"{self._rng.choice(FIRST_NAMES)} {self._rng.choice(LAST_NAMES)}"

    def datetime_value(self) -> str:
        try:
            base = datetime.strptime(self._clock or "", DATETIME_FORMAT)
        except ValueError:
            base = datetime(2024, 3, 15, 9, 30)
        moment = (base + timedelta(days=self._rng.randint(1, 30))).replace(hour=10, minute=0, second=0)
        return moment.strftime(DATETIME_FORMAT)

    def value(self, name: str, value_type: str) -> Any:
        lowered = name.lower()
        if value_type == "datetime":
            return self.datetime_value()
        if value_type == "integer":
            return self._rng.randint(1, 5)
        if value_type == "number":
            if "min" in lowered:
                return float(self._rng.randint(40, 90) * 1000)
            if "max" in lowered:
                return float(self._rng.randint(100, 160) * 1000)
            return float(self._rng.randint(40, 160) * 1000)
        if value_type == "boolean":
            return True
        if value_type == "list-of-string":
            return [self.value(name.rstrip("s"), "string")]
        if "email" in lowered:
            first, last = self.person().lower().split(" ")
            return f"{first}.{last}@example.com"
        if "currency" in lowered:
            return "USD"
        if "status" in lowered:
            return self._rng.choice(STATUSES)
        if lowered.endswith("type"):
            return self._rng.choice(KINDS)
        if "title" in lowered:
            return self._sampled(name) or self._rng.choice(TITLES)
        if "company" in lowered:
            return self._rng.choice(COMPANIES)
        if "location" in lowered:
            return self._rng.choice(LOCATIONS)
        if "name" in lowered:
            return self.person()
        return self._sampled(name) or self._rng.choice(SENTENCES)

    def fresh_key(self, name: str, value_type: str, taken: Set[Any]) -> Any:
        """A key for column ``name`` that is not in ``taken``."""

        if value_type == "integer":
            return max([key for key in taken if isinstance(key, int) and not isinstance(key, bool)], default=0) + 1
        stem = re.sub(r"_?id$", "", name) or name
        prefix = re.sub(r"[^A-Za-z]", "", stem)[:3].upper() or "KEY"
        while True:
            candidate = f"{prefix}{self._rng.randint(100, 999)}"
            if candidate not in taken:
                return candidate


def column_samples(known: Mapping[str, Sequence[Any]]) -> Dict[str, List[str]]:
    """Fold ``{"table.column": values}`` into ``{column: text values}``."""

    samples: Dict[str, List[str]] = {}
    for qualified, items in sorted(known.items()):
        column = qualified.split(".", 1)[-1]
        samples.setdefault(column, []).extend(item for item in items if isinstance(item, str) and item)
    return {column: items for column, items in samples.items() if items}


__all__ = ["ValueFactory", "column_samples"]
