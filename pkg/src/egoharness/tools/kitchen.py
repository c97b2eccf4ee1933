"""Kitchen toolset: recipes, home ingredient stock, menus and shopping lists.

Ingredient records keep stock data in ``extra``: ``quantity`` (grams on
hand), ``expiry_date`` (ISO date), ``storage_location`` and optionally
``shelf_life_days``.  Recipe records keep ``ingredients`` (a list of
``{"ingredient_name", "quantity"}``) and ``steps`` in ``extra``.
"""

from __future__ import annotations

import datetime as dt
from collections import Counter

from ..store import LedgerItem, normalize_name
from .calls import ToolResult
from .common import (
    NOUNS,
    ToolContext,
    add_line,
    attr,
    calc_result,
    extra,
    fail,
    field_lookup,
    filter_names,
    fmt_qty,
    names_payload,
    nutrition_of,
    remove_lines,
    require_exact,
    tag_matches,
    tool,
)
from .schema import ToolKind

R, W, C = ToolKind.READ, ToolKind.WRITE, ToolKind.CALC


def _recipe_ingredients(rec) -> list[str]:
    return [normalize_name(i.get("ingredient_name", "")) for i in rec.extra.get("ingredients", []) if isinstance(i, dict)]


@tool("get_cooking_steps", R)
def get_cooking_steps(db, p, ctx: ToolContext):
    return field_lookup(db, "recipes", p["recipe_name"], ctx, extra("steps"))


@tool("get_recipe_allergens", R)
def get_recipe_allergens(db, p, ctx):
    return field_lookup(db, "recipes", p["recipe_name"], ctx, attr("allergens"))


@tool("find_recipes_by_allergen", R)
def find_recipes_by_allergen(db, p, ctx):
    q = p["allergen"]
    return names_payload("recipe_names", filter_names(db, "recipes", lambda r: tag_matches(q, r.allergens, ctx)))


@tool("get_recipe_taste", R)
def get_recipe_taste(db, p, ctx):
    return field_lookup(db, "recipes", p["recipe_name"], ctx, attr("taste"))


@tool("find_recipes_by_taste", R)
def find_recipes_by_taste(db, p, ctx):
    q = p["taste"]
    return names_payload("recipe_names", filter_names(db, "recipes", lambda r: tag_matches(q, r.taste, ctx)))


@tool("get_recipe_ingredients", R)
def get_recipe_ingredients(db, p, ctx):
    return field_lookup(db, "recipes", p["recipe_name"], ctx, extra("ingredients"))


@tool("find_recipes_by_ingredient", R)
def find_recipes_by_ingredient(db, p, ctx):
    q = p["ingredient_name"]
    return names_payload(
        "recipe_names", filter_names(db, "recipes", lambda r: tag_matches(q, _recipe_ingredients(r), ctx))
    )


@tool("get_recipe_nutritional_characteristics", R)
def get_recipe_nutritional_characteristics(db, p, ctx):
    return field_lookup(db, "recipes", p["recipe_name"], ctx, attr("nutritional_characteristics"))


@tool("find_recipes_by_nutritional_characteristics", R)
def find_recipes_by_nutritional_characteristics(db, p, ctx):
    q = p["characteristic"]
    return names_payload(
        "recipe_names", filter_names(db, "recipes", lambda r: tag_matches(q, r.nutritional_characteristics, ctx))
    )


@tool("get_all_recipe_names", R)
def get_all_recipe_names(db, p, ctx):
    return names_payload("recipe_names", list(db.catalogs.get("recipes", {})))


@tool("get_ingredient_shelf_life", R)
def get_ingredient_shelf_life(db, p, ctx):
    return field_lookup(db, "ingredients", p["ingredient_name"], ctx, extra("expiry_date", "shelf_life_days"))


def _parse_date(text: str, what: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except (TypeError, ValueError):
        raise fail(f"{what} must be an ISO date (YYYY-MM-DD), got {text!r}.") from None


@tool("find_ingredients_by_expiry_date", R)
def find_ingredients_by_expiry_date(db, p, ctx):
    """Ingredients whose expiry date is on or before ``date``."""
    cutoff = _parse_date(p["date"], "date")
    rows = []
    for rec in db.catalogs.get("ingredients", {}).values():
        raw = rec.extra.get("expiry_date")
        if isinstance(raw, str):
            try:
                when = dt.date.fromisoformat(raw)
            except ValueError:
                continue
            if when <= cutoff:
                rows.append({"ingredient_name": rec.name, "expiry_date": raw})
    return ToolResult.success({"ingredients": rows, "count": len(rows)})


@tool("get_ingredient_location", R)
def get_ingredient_location(db, p, ctx):
    return field_lookup(db, "ingredients", p["ingredient_name"], ctx, extra("storage_location"))


@tool("find_ingredients_by_location", R)
def find_ingredients_by_location(db, p, ctx):
    q = p["location"]

    def at(rec) -> bool:
        loc = rec.extra.get("storage_location")
        return isinstance(loc, str) and tag_matches(q, [loc], ctx)

    return names_payload("ingredient_names", filter_names(db, "ingredients", at))


@tool("get_ingredient_nutrition", R)
def get_ingredient_nutrition(db, p, ctx):
    return field_lookup(db, "ingredients", p["ingredient_name"], ctx, nutrition_of)


@tool("get_ingredient_quantity", R)
def get_ingredient_quantity(db, p, ctx):
    return field_lookup(db, "ingredients", p["ingredient_name"], ctx, extra("quantity"))


@tool("get_all_ingredient_names", R)
def get_all_ingredient_names(db, p, ctx):
    return names_payload("ingredient_names", list(db.catalogs.get("ingredients", {})))


@tool("get_ingredients_by_category", R)
def get_ingredients_by_category(db, p, ctx):
    q = p["category"]
    return names_payload(
        "ingredient_names",
        filter_names(db, "ingredients", lambda r: r.category is not None and tag_matches(q, [r.category], ctx)),
    )


@tool("find_ingredient_category", R)
def find_ingredient_category(db, p, ctx):
    return field_lookup(db, "ingredients", p["ingredient_name"], ctx, attr("category"))


def _menu(db, user_id) -> list[str]:
    ledger = db.ledger("menu", user_id)
    return [item.name for item in ledger.items] if ledger else []


@tool("get_current_menu", R)
def get_current_menu(db, p, ctx):
    return ToolResult.success({"user_id": p["user_id"], "menu": _menu(db, p["user_id"])})


@tool("get_current_shopping_list", R)
def get_current_shopping_list(db, p, ctx):
    ledger = db.ledger("shopping_list", p["user_id"])
    rows = [{"ingredient_name": i.name, "quantity": i.quantity} for i in (ledger.items if ledger else [])]
    return ToolResult.success({"user_id": p["user_id"], "shopping_list": rows})


@tool("add_recipe_to_menu", W)
def add_recipe_to_menu(db, p, ctx):
    rec = require_exact(db, "recipes", p["recipe_name"])
    if rec.name in _menu(db, p["user_id"]):
        raise fail(f"Recipe '{p['recipe_name']}' is already on the menu.")
    db.ledger("menu", p["user_id"], create=True).items.append(LedgerItem(name=rec.name, quantity=1))
    return ToolResult.success(
        {
            "status": "success",
            "message": f"Recipe '{p['recipe_name']}' added to menu.",
            "menu": _menu(db, p["user_id"]),
        }
    )


@tool("remove_recipe_from_menu", W)
def remove_recipe_from_menu(db, p, ctx):
    remove_lines(db, "menu", p["user_id"], p["recipe_name"], None, "menu")
    return ToolResult.success(
        {
            "status": "success",
            "message": f"Recipe '{p['recipe_name']}' removed from menu.",
            "menu": _menu(db, p["user_id"]),
        }
    )


@tool("add_to_shopping_list", W)
def add_to_shopping_list(db, p, ctx):
    rec = require_exact(db, "ingredients", p["ingredient_name"])
    add_line(db, "shopping_list", p["user_id"], LedgerItem(name=rec.name, quantity=p["quantity"]))
    return ToolResult.success(
        {
            "status": "success",
            "message": f"Added {fmt_qty(p['quantity'])} of '{p['ingredient_name']}' to user '{p['user_id']}' shopping list.",
        }
    )


@tool("remove_from_shopping_list", W)
def remove_from_shopping_list(db, p, ctx):
    removed = remove_lines(
        db, "shopping_list", p["user_id"], p["ingredient_name"], p.get("quantity"), "shopping list"
    )
    return ToolResult.success(
        {
            "status": "success",
            "message": f"Removed {fmt_qty(removed)} of '{p['ingredient_name']}' from user '{p['user_id']}' shopping list.",
        }
    )


def _tally(db, p, field_name: str) -> ToolResult:
    counts: Counter[str] = Counter()
    details, missing = [], []
    for raw in p["recipe_names"]:
        rec = db.catalogs.get("recipes", {}).get(normalize_name(raw))
        if rec is None:
            missing.append(normalize_name(raw))
            continue
        values = list(getattr(rec, field_name))
        counts.update(values)
        details.append({"recipe_name": rec.name, field_name: values})
    payload = {"tally": dict(sorted(counts.items())), "details": details}
    return calc_result(payload, len(details), missing, NOUNS["recipes"])


@tool("tally_total_nutritional_characteristics", C)
def tally_total_nutritional_characteristics(db, p, ctx):
    return _tally(db, p, "nutritional_characteristics")


@tool("tally_total_tastes", C)
def tally_total_tastes(db, p, ctx):
    return _tally(db, p, "taste")
