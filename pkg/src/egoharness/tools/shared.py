"""Calculation tools shared by several scenarios.

The item list may be called ``products``, ``dishes``, ``ingredients`` or
``items``; names resolve against the scenario's primary catalog by exact
normalized equality only.
"""

from __future__ import annotations

from .common import NOUNS, gather_items, nutrition, payment, resolve_lines, tax, tool
from .schema import ToolKind

LIST_KEYS = ("products", "dishes", "ingredients", "items")
NAME_KEYS = ("product_name", "dish_name", "ingredient_name", "name")


def _lines(db, p):
    coll = db.primary_catalog
    lines, missing = resolve_lines(db, coll, gather_items(p, LIST_KEYS, NAME_KEYS))
    return lines, missing, NOUNS[coll]


@tool("compute_total_payment", ToolKind.CALC)
def compute_total_payment(db, p, ctx):
    lines, missing, noun = _lines(db, p)
    return payment(p.get("user_id"), lines, missing, noun)


@tool("compute_total_tax", ToolKind.CALC)
def compute_total_tax(db, p, ctx):
    lines, missing, noun = _lines(db, p)
    return tax(p.get("user_id"), lines, missing, noun)


@tool("compute_total_nutrition", ToolKind.CALC)
def compute_total_nutrition(db, p, ctx):
    lines, missing, noun = _lines(db, p)
    return nutrition(p.get("user_id"), lines, missing, noun)


@tool("compute_total_nutritions", ToolKind.CALC)
def compute_total_nutritions(db, p, ctx):
    lines, missing, noun = _lines(db, p)
    return nutrition(p.get("user_id"), lines, missing, noun, per_gram=True)
