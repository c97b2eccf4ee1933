"""Retail toolset: products, carts and shopping lists."""

from __future__ import annotations

from ..store import LedgerItem, normalize_name
from .calls import ToolResult
from .common import (
    ToolContext,
    add_catalog_record,
    add_line,
    attr,
    clear_ledger,
    discounted,
    field_lookup,
    filter_names,
    fmt_qty,
    names_payload,
    nutrition_of,
    price_range,
    remove_lines,
    require_exact,
    tag_matches,
    tool,
)
from .schema import ToolKind

R, W = ToolKind.READ, ToolKind.WRITE

@tool("get_nutrition", R)
def get_nutrition(db, p, ctx: ToolContext) -> ToolResult:
    return field_lookup(db, "products", p["product_name"], ctx, nutrition_of)


@tool("get_price", R)
def get_price(db, p, ctx):
    return field_lookup(db, "products", p["product_name"], ctx, attr("price"))


@tool("get_tax_rate", R)
def get_tax_rate(db, p, ctx):
    return field_lookup(db, "products", p["product_name"], ctx, attr("tax_rate"))


@tool("get_category", R)
def get_category(db, p, ctx):
    return field_lookup(db, "products", p["product_name"], ctx, attr("category"))


@tool("get_discount", R)
def get_discount(db, p, ctx):
    return field_lookup(db, "products", p["product_name"], ctx, attr("discount"))


@tool("get_cart", R)
def get_cart(db, p, ctx):
    ledger = db.ledger("cart", p["user_id"])
    items = []
    for item in ledger.items if ledger else []:
        items.append({"product_name": item.name, "quantity": item.quantity, **item.priced_fields()})
    return ToolResult.success({"cart_items": items})


@tool("get_shopping_list", R)
def get_shopping_list(db, p, ctx):
    ledger = db.ledger("shopping_list", p["user_id"])
    items = [
        {"product_name": item.name, "quantity": item.quantity}
        for item in (ledger.items if ledger else [])
    ]
    return ToolResult.success({"shopping_list_items": items})


@tool("find_products_by_nutritional_characteristic", R)
def find_by_nutrition_tag(db, p, ctx):
    q = p["characteristic"]
    return names_payload(
        "product_names",
        filter_names(db, "products", lambda r: tag_matches(q, r.nutritional_characteristics, ctx)),
    )


@tool("find_products_by_taste", R)
def find_by_taste(db, p, ctx):
    q = p["taste"]
    return names_payload("product_names", filter_names(db, "products", lambda r: tag_matches(q, r.taste, ctx)))


@tool("find_products_by_country_of_origin", R)
def find_by_country(db, p, ctx):
    q = p["country"]
    return names_payload(
        "product_names",
        filter_names(
            db, "products", lambda r: r.country_of_origin is not None and tag_matches(q, [r.country_of_origin], ctx)
        ),
    )


@tool("find_products_by_price_range", R)
def find_by_price(db, p, ctx):
    return price_range(db, "products", p)


@tool("list_discounted_products", R)
def list_discounted(db, p, ctx):
    return discounted(db, "products")


@tool("add_product", W)
def add_product(db, p, ctx):
    add_catalog_record(db, "products", p["product_name"], p)
    return ToolResult.success({"status": "success", "message": f"Product '{p['product_name']}' added to catalog."})


@tool("delete_product", W)
def delete_product(db, p, ctx):
    rec = require_exact(db, "products", p["product_name"])
    del db.catalogs["products"][rec.name]
    return ToolResult.success({"status": "success", "message": f"Product '{p['product_name']}' deleted from catalog."})


@tool("add_to_cart", W)
def add_to_cart(db, p, ctx):
    require_exact(db, "products", p["product_name"])
    item = LedgerItem(
        name=normalize_name(p["product_name"]),
        quantity=p["qty"],
        category=p["category"],
        price=p["price"],
        tax_rate=p["tax_rate"],
        discount=p["discount"],
    )
    add_line(db, "cart", p["user_id"], item)
    return ToolResult.success(
        {
            "status": "success",
            "message": f"Added {fmt_qty(p['qty'])} of '{p['product_name']}' to user '{p['user_id']}' cart.",
        }
    )


@tool("remove_from_cart", W)
def remove_from_cart(db, p, ctx):
    removed = remove_lines(db, "cart", p["user_id"], p["product_name"], p.get("qty"), "cart")
    return ToolResult.success(
        {
            "status": "success",
            "message": f"Removed {fmt_qty(removed)} of '{p['product_name']}' from user '{p['user_id']}' cart.",
        }
    )


@tool("clear_cart", W)
def clear_cart(db, p, ctx):
    n = clear_ledger(db, "cart", p["user_id"])
    return ToolResult.success(
        {"status": "success", "message": f"Cleared {n} item(s) from user '{p['user_id']}' cart."}
    )
