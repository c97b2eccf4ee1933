from __future__ import annotations

from hypothesis import given
from hypothesis import strategies as st

from egoharness.matching import MatchTier, fuzzy_equal, fuzzy_match, jaccard

CATALOG = ["riunite moscato", "mouton cadet", "brisa prosecco", "scaviango prosecco", "moscato d'asti"]


def test_exact_beats_substring():
    m = fuzzy_match("Mouton  Cadet", CATALOG)
    assert m.tier is MatchTier.EXACT and m.matches == ("mouton cadet",)


def test_partial_brand_resolves_by_substring():
    m = fuzzy_match("Riunite", CATALOG)
    assert m.tier is MatchTier.SUBSTRING and m.matches == ("riunite moscato",)


def test_substring_returns_every_hit_in_catalog_order():
    m = fuzzy_match("prosecco", CATALOG)
    assert m.matches == ("brisa prosecco", "scaviango prosecco")


def test_reordered_tokens_fall_back_to_jaccard():
    m = fuzzy_match("prosecco brisa", CATALOG)
    assert m.tier is MatchTier.TOKEN_OVERLAP
    assert m.matches == ("brisa prosecco",)


def test_threshold_controls_token_tier():
    assert jaccard("brisa rosso prosecco", "brisa prosecco") == 2 / 3
    assert fuzzy_match("brisa rosso prosecco", CATALOG).matches == ("brisa prosecco",)
    assert fuzzy_match("brisa rosso prosecco", CATALOG, threshold=0.7).tier is MatchTier.NONE


def test_no_match_and_empty_query():
    assert not fuzzy_match("heineken", CATALOG)
    assert not fuzzy_match("   ", CATALOG)
    assert not fuzzy_equal("cava", "rioja reserva")


@given(st.sampled_from(CATALOG), st.text(alphabet=" \t", max_size=3))
def test_exact_is_identity_after_normalization(name, pad):
    m = fuzzy_match(pad + name.upper() + pad, CATALOG)
    assert m.tier is MatchTier.EXACT and m.matches == (name,)
