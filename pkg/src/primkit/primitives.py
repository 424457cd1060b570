"""The five functional primitives and label-string handling."""

from enum import IntEnum

from .errors import LabelError


class Primitive(IntEnum):
    REACH = 0
    TRANSPORT = 1
    REPOSITION = 2
    STABILIZE = 3
    IDLE = 4
    UNLABELED = -1


N_PRIMITIVES = 5
PRIMITIVE_NAMES = ("reach", "transport", "reposition", "stabilize", "idle")
UNLABELED = int(Primitive.UNLABELED)

_BY_NAME = {name: i for i, name in enumerate(PRIMITIVE_NAMES)}
_BY_NAME["unlabeled"] = UNLABELED


def parse_label(text: str) -> int:
    """Map a label string (any case, surrounding whitespace ignored) to its code."""
    key = text.strip().lower()
    try:
        return _BY_NAME[key]
    except KeyError:
        raise LabelError(f"unknown label string {text!r}") from None


def label_name(code: int) -> str:
    if code == UNLABELED:
        return "unlabeled"
    if not 0 <= code < N_PRIMITIVES:
        raise LabelError(f"label index {code} outside 0..{N_PRIMITIVES - 1}")
    return PRIMITIVE_NAMES[code]
