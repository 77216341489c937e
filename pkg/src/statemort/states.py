"""State identifiers and fixed geographic groupings."""

from __future__ import annotations

from .errors import UnknownState

# 50 states plus the District of Columbia, alphabetical by code.
STATE_IDS: tuple[str, ...] = (
    "AK", "AL", "AR", "AZ", "CA", "CO", "CT", "DC", "DE", "FL", "GA", "HI",
    "IA", "ID", "IL", "IN", "KS", "KY", "LA", "MA", "MD", "ME", "MI", "MN",
    "MO", "MS", "MT", "NC", "ND", "NE", "NH", "NJ", "NM", "NV", "NY", "OH",
    "OK", "OR", "PA", "RI", "SC", "SD", "TN", "TX", "UT", "VA", "VT", "WA",
    "WI", "WV", "WY",
)
STATE_SET = frozenset(STATE_IDS)

# No land neighbors; handled by the island rule when grouping.
ISLAND_STATES: tuple[str, ...] = ("AK", "HI")

# The nine Census divisions, states alphabetical within each.
CENSUS_DIVISIONS: dict[str, tuple[str, ...]] = {
    "New England": ("CT", "ME", "MA", "NH", "RI", "VT"),
    "Mid-Atlantic": ("NJ", "NY", "PA"),
    "East North Central": ("IL", "IN", "MI", "OH", "WI"),
    "West North Central": ("IA", "KS", "MN", "MO", "ND", "NE", "SD"),
    "South Atlantic": ("DC", "DE", "FL", "GA", "MD", "NC", "SC", "VA", "WV"),
    "East South Central": ("AL", "KY", "MS", "TN"),
    "West South Central": ("AR", "LA", "OK", "TX"),
    "Mountain": ("AZ", "CO", "ID", "MT", "NM", "NV", "UT", "WY"),
    "Pacific": ("AK", "CA", "HI", "OR", "WA"),
}

_DIVISION_OF = {
    state: name for name, members in CENSUS_DIVISIONS.items() for state in members
}


def validate_state(code: str, line: int | None = None) -> str:
    """Normalize a state code, raising UnknownState if outside the closed set."""
    code = code.strip().upper()
    if code not in STATE_SET:
        raise UnknownState(f"unknown state code {code!r}", line=line)
    return code


def division_of(state: str) -> str:
    """Census division containing `state`."""
    return _DIVISION_OF[validate_state(state)]
