"""Restaurant and order toolsets: dishes, set meals and per-user orders."""

from __future__ import annotations

from ..store import CatalogRecord, LedgerItem, normalize_name
from .calls import ToolResult
from .common import (
    NOUNS,
    CalcLine,
    ToolContext,
    add_catalog_record,
    add_line,
    attr,
    clear_ledger,
    discounted,
    fail,
    field_lookup,
    filter_names,
    fmt_qty,
    names_payload,
    nutrition,
    nutrition_of,
    payment,
    price_range,
    remove_lines,
    require_exact,
    tag_matches,
    tax,
    tool,
)
from .schema import ToolKind

R, W, C = ToolKind.READ, ToolKind.WRITE, ToolKind.CALC


def _ok(message: str) -> ToolResult:
    return ToolResult.success({"status": "success", "message": message})


@tool("get_dish_nutrition", R)
def get_dish_nutrition(db, p, ctx: ToolContext):
    return field_lookup(db, "dishes", p["dish_name"], ctx, nutrition_of)


@tool("get_dish_allergens", R)
def get_dish_allergens(db, p, ctx):
    return field_lookup(db, "dishes", p["dish_name"], ctx, attr("allergens"))


@tool("get_dish_taste_profile", R)
def get_dish_taste_profile(db, p, ctx):
    return field_lookup(db, "dishes", p["dish_name"], ctx, attr("taste"))


@tool("get_dish_price", R)
def get_dish_price(db, p, ctx):
    return field_lookup(db, "dishes", p["dish_name"], ctx, attr("price"))


@tool("get_dish_discount", R)
def get_dish_discount(db, p, ctx):
    return field_lookup(db, "dishes", p["dish_name"], ctx, attr("discount"))


def _meal_view(rec: CatalogRecord) -> dict:
    return {"dishes": list(rec.extra.get("dishes", [])), "discount": rec.discount}


@tool("get_set_meal_details", R)
def get_set_meal_details(db, p, ctx):
    return field_lookup(db, "set_meals", p["set_meal_name"], ctx, _meal_view)


@tool("find_set_meals_containing_dish", R)
def find_set_meals_containing_dish(db, p, ctx):
    q = p["dish_name"]
    names = [
        rec.name
        for rec in db.catalogs.get("set_meals", {}).values()
        if tag_matches(q, rec.extra.get("dishes", []), ctx)
    ]
    return names_payload("set_meal_names", names)


@tool("get_user_order_summary", R)
def get_user_order_summary(db, p, ctx):
    ledger = db.ledger("order", p["user_id"])
    rows = []
    for item in ledger.items if ledger else []:
        row = {"dish_name": item.name, "quantity": item.quantity, **item.priced_fields()}
        if "set_meal" in item.extra:
            row["set_meal"] = item.extra["set_meal"]
        rows.append(row)
    return ToolResult.success({"user_id": p["user_id"], "order_items": rows, "item_count": len(rows)})


@tool("find_dishes_by_category", R)
def find_dishes_by_category(db, p, ctx):
    q = p["category"]
    return names_payload(
        "dish_names", filter_names(db, "dishes", lambda r: r.category is not None and tag_matches(q, [r.category], ctx))
    )


@tool("find_dishes_by_nutritional_tag", R)
def find_dishes_by_nutritional_tag(db, p, ctx):
    q = p["tag"]
    return names_payload(
        "dish_names", filter_names(db, "dishes", lambda r: tag_matches(q, r.nutritional_characteristics, ctx))
    )


@tool("find_dishes_by_taste", R)
def find_dishes_by_taste(db, p, ctx):
    q = p["taste"]
    return names_payload("dish_names", filter_names(db, "dishes", lambda r: tag_matches(q, r.taste, ctx)))


@tool("filter_dishes_by_price_range", R)
def filter_dishes_by_price_range(db, p, ctx):
    return price_range(db, "dishes", p)


@tool("list_all_discounted_dishes", R)
def list_all_discounted_dishes(db, p, ctx):
    return discounted(db, "dishes")


@tool("add_dish_to_catalog", W)
def add_dish_to_catalog(db, p, ctx):
    add_catalog_record(db, "dishes", p["dish_name"], p)
    return _ok(f"Dish '{p['dish_name']}' added to catalog.")


@tool("remove_dish_from_catalog", W)
def remove_dish_from_catalog(db, p, ctx):
    rec = require_exact(db, "dishes", p["dish_name"])
    del db.catalogs["dishes"][rec.name]
    return _ok(f"Dish '{p['dish_name']}' removed from catalog.")


@tool("update_dish_price", W)
def update_dish_price(db, p, ctx):
    rec = require_exact(db, "dishes", p["dish_name"])
    rec.price = p["new_price"]
    return _ok(f"Price of '{p['dish_name']}' updated to {p['new_price']}.")


@tool("update_dish_discount", W)
def update_dish_discount(db, p, ctx):
    rec = require_exact(db, "dishes", p["dish_name"])
    rec.discount = p["new_discount"]
    return _ok(f"Discount of '{p['dish_name']}' updated to {p['new_discount']}.")


@tool("create_set_meal", W)
def create_set_meal(db, p, ctx):
    dishes = [require_exact(db, "dishes", d).name for d in p["dish_names"]]
    if not dishes:
        raise fail("A set meal needs at least one dish.")
    name = normalize_name(p["set_meal_name"])
    meals = db.catalog("set_meals")
    if name in meals:
        raise fail(f"Set meal '{p['set_meal_name']}' already exists.")
    meals[name] = CatalogRecord(name=name, discount=p.get("discount", 1.0), extra={"dishes": dishes})
    meals[name].check("set_meal")
    return _ok(f"Set meal '{p['set_meal_name']}' created with {len(dishes)} dish(es).")


def _order_item(rec: CatalogRecord, qty: float, discount_factor: float = 1.0, **extra) -> LedgerItem:
    disc = rec.discount if rec.discount is not None else 1.0
    return LedgerItem(
        name=rec.name,
        quantity=qty,
        category=rec.category,
        price=rec.price,
        tax_rate=rec.tax_rate,
        discount=disc * discount_factor,
        extra=dict(extra),
    )


@tool("add_dish_to_order", W)
def add_dish_to_order(db, p, ctx):
    rec = require_exact(db, "dishes", p["dish_name"])
    add_line(db, "order", p["user_id"], _order_item(rec, p["quantity"]))
    return _ok(f"Added {fmt_qty(p['quantity'])} of '{p['dish_name']}' to user '{p['user_id']}' order.")


@tool("remove_dish_from_order", W)
def remove_dish_from_order(db, p, ctx):
    removed = remove_lines(db, "order", p["user_id"], p["dish_name"], p.get("quantity"), "order")
    return _ok(f"Removed {fmt_qty(removed)} of '{p['dish_name']}' from user '{p['user_id']}' order.")


@tool("clear_user_order", W)
def clear_user_order(db, p, ctx):
    n = clear_ledger(db, "order", p["user_id"])
    return _ok(f"Cleared {n} item(s) from user '{p['user_id']}' order.")


@tool("add_set_meal_to_order", W)
def add_set_meal_to_order(db, p, ctx):
    meal = require_exact(db, "set_meals", p["set_meal_name"])
    qty = p.get("quantity", 1)
    factor = meal.discount if meal.discount is not None else 1.0
    for dish_name in meal.extra.get("dishes", []):
        rec = require_exact(db, "dishes", dish_name)
        add_line(db, "order", p["user_id"], _order_item(rec, qty, factor, set_meal=meal.name))
    return _ok(f"Added {fmt_qty(qty)} of set meal '{p['set_meal_name']}' to user '{p['user_id']}' order.")


def _order_lines(db, user_id):
    ledger = db.ledger("order", user_id)
    dishes = db.catalogs.get("dishes", {})
    lines, missing = [], []
    for item in ledger.items if ledger else []:
        rec = dishes.get(item.name)
        if item.price is None and rec is None:
            missing.append(item.name)
            continue
        lines.append(CalcLine("dish_name", item.name, item.quantity, record=rec, item=item))
    return lines, missing


@tool("calculate_order_total", C)
def calculate_order_total(db, p, ctx):
    lines, missing = _order_lines(db, p["user_id"])
    return payment(p["user_id"], lines, missing, NOUNS["dishes"])


@tool("calculate_order_tax", C)
def calculate_order_tax(db, p, ctx):
    lines, missing = _order_lines(db, p["user_id"])
    return tax(p["user_id"], lines, missing, NOUNS["dishes"])


@tool("summarize_order_nutrition", C)
def summarize_order_nutrition(db, p, ctx):
    lines, missing = _order_lines(db, p["user_id"])
    with_facts = [ln for ln in lines if ln.record is not None]
    missing += [ln.name for ln in lines if ln.record is None]
    return nutrition(p["user_id"], with_facts, missing, NOUNS["dishes"])
