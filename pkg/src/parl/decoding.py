"""State text for prompts: the raw environment form or a scripted sentence.

Sentence templates live in ``parl/templates/*.txt`` with ``$name``
placeholders; changing one changes the policy prompt, so the golden-text
tests pin them.
"""
from __future__ import annotations

import enum
from functools import lru_cache
from importlib import resources
from string import Template

from .core import DomainError, ProtocolError
from .envs import BlackjackObs, DiscreteIndex, EnvSpec, hand_value, taxi_decode
from .envs.maps import TAXI_LANDMARK_NAMES


class DecodeMode(str, enum.Enum):
    RAW_SELF = "self"
    SCRIPT = "script"


@lru_cache(maxsize=None)
def template(name: str) -> Template:
    text = resources.files("parl").joinpath("templates").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return Template(text)


def render_raw(env: EnvSpec, obs) -> str:
    if env.observation_kind == "BlackjackTuple":
        if not isinstance(obs, BlackjackObs):
            raise ProtocolError("Blackjack expects a BlackjackObs")
        cards = ", ".join(str(c) for c in obs.player_cards)
        return f"State: [{cards}], [{obs.dealer_visible_card}]"
    if not isinstance(obs, DiscreteIndex):
        raise ProtocolError(f"{env.id} expects a DiscreteIndex observation")
    return f"State: {obs.value}"


def _card_phrase(card: int) -> str:
    if card == 1:
        return "an Ace"
    if card == 8:
        return "an 8"
    return f"a {card}"


def decode_blackjack(obs: BlackjackObs, include_usable_ace: bool = True) -> str:
    if obs.player_cards:
        total, ace = hand_value(obs.player_cards)
    else:
        total, ace = obs.player_sum, obs.usable_ace
    text = template("blackjack").substitute(total=total, dealer=_card_phrase(obs.dealer_visible_card))
    if include_usable_ace and ace:
        text += template("blackjack_ace").template
    if total > 21:
        text += template("blackjack_bust").template
    return text


def decode_frozenlake(index: int, nrows: int = 4, ncols: int = 4) -> str:
    if not 0 <= index < nrows * ncols:
        raise DomainError(f"index {index} outside a {nrows}x{ncols} grid")
    row, col = divmod(index, ncols)
    return template("frozenlake").substitute(row=row, col=col, nrows=nrows, ncols=ncols)


def decode_taxi(index: int) -> str:
    row, col, passenger, destination = taxi_decode(index)
    dest = TAXI_LANDMARK_NAMES[destination]
    if passenger == 4:
        return template("taxi_in_taxi").substitute(row=row, col=col, destination=dest)
    return template("taxi").substitute(row=row, col=col, passenger=TAXI_LANDMARK_NAMES[passenger],
                                       destination=dest)


def render_state(env: EnvSpec, obs, mode: DecodeMode, include_usable_ace: bool = True) -> str:
    """Prompt text for ``obs`` under ``mode``."""
    mode = DecodeMode(mode)
    if mode is DecodeMode.RAW_SELF:
        return render_raw(env, obs)
    if env.id == "blackjack":
        return decode_blackjack(obs, include_usable_ace)
    if env.id == "frozenlake":
        rows = env.extra.get("map")
        nrows, ncols = (len(rows), len(rows[0])) if rows else (4, 4)
        return decode_frozenlake(obs.value, nrows, ncols)
    if env.id == "taxi":
        return decode_taxi(obs.value)
    raise ProtocolError(f"no decoder for {env.id}")
