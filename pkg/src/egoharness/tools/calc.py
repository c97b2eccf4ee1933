"""Pure arithmetic behind the calculation tools.

Functions here never round; rounding happens once at the result boundary
via ``round_money``.
"""

from __future__ import annotations

from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable

from ..store import NUTRITION_COMPONENTS, NutritionFacts


def round_money(value: float, places: int = 2) -> float:
    """Half-up rounding that ignores binary representation noise.

    The value is first snapped to 9 decimals so that 0.125 stored as
    0.12499999999 still rounds up.
    """
    snapped = Decimal(repr(float(value))).quantize(Decimal("1e-9"), rounding=ROUND_HALF_UP)
    return float(snapped.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP))


def line_amount(price: float, discount: float, qty: float) -> float:
    return price * discount * qty


def line_tax(price: float, tax_rate: float, discount: float, qty: float) -> float:
    """Tax contained in a tax-inclusive discounted amount."""
    return line_amount(price, discount, qty) * tax_rate / (1 + tax_rate)


def line_net(price: float, tax_rate: float, discount: float, qty: float) -> float:
    return line_amount(price, discount, qty) / (1 + tax_rate)


def total_nutrition(lines: Iterable[tuple[NutritionFacts, float]]) -> dict[str, float]:
    """Sum ``facts * factor`` per component; serving sizes scale the same way."""
    totals = {"serving_size_g": 0.0, **{c: 0.0 for c in NUTRITION_COMPONENTS}}
    for facts, factor in lines:
        totals["serving_size_g"] += facts.serving_size_g * factor
        for comp in NUTRITION_COMPONENTS:
            totals[comp] += getattr(facts, comp) * factor
    return totals


def nutrition_payload(totals: dict[str, float]) -> dict[str, object]:
    out: dict[str, object] = {"basis": "TOTAL"}
    out["serving_size_g"] = round_money(totals["serving_size_g"])
    for comp in NUTRITION_COMPONENTS:
        out[comp] = round_money(totals[comp])
    return out
