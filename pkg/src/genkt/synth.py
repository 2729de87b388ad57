"""Seeded generator of newswire-flavoured text for desk-scale experiments.

Sentences are drawn from a small stochastic grammar. A configurable share of
them carry a time expression built on a month, weekday or season name; the
rest never contain any of those words, so the output splits cleanly into
public and private parts.
"""

from __future__ import annotations

import numpy as np

from .corpus import MONTHS, SEASONS, WEEKDAYS

COMPANIES = (
    "GENERAL MOTORS", "IBM", "FORD", "CHRYSLER", "EXXON", "TEXACO", "BOEING", "CITICORP",
    "AMERICAN EXPRESS", "SEARS", "XEROX", "DIGITAL EQUIPMENT", "PHILIP MORRIS", "COCA COLA",
    "PROCTER AND GAMBLE", "GENERAL ELECTRIC", "UNITED AIRLINES", "CHASE MANHATTAN",
    "MOBIL", "DOW CHEMICAL", "TEXAS INSTRUMENTS", "APPLE COMPUTER", "HONEYWELL",
)
GROUPS = (
    "THE COMPANY", "THE BANK", "THE FIRM", "THE GROUP", "THE AGENCY", "ANALYSTS",
    "TRADERS", "INVESTORS", "OFFICIALS", "THE BOARD", "THE GOVERNMENT", "THE TREASURY",
    "THE FEDERAL RESERVE", "CONGRESS", "THE UNION", "ECONOMISTS", "DEALERS", "THE INDUSTRY",
)
PEOPLE = (
    "SMITH", "JOHNSON", "WILLIAMS", "BROWN", "JONES", "MILLER", "DAVIS", "WILSON", "ANDERSON",
    "TAYLOR", "THOMAS", "MOORE", "FREEMAN", "MARTIN", "THOMPSON", "WHITE", "HARRIS", "CLARK",
    "LEWIS", "ROBINSON", "WALKER", "YOUNG", "ALLEN", "KING", "WRIGHT", "SCOTT", "GREEN", "BAKER",
)
TITLES = ("MR.", "MS.", "DR.")
ROLES = (
    "CHAIRMAN", "PRESIDENT", "CHIEF EXECUTIVE", "TREASURER", "ANALYST", "SPOKESMAN",
    "ECONOMIST", "DIRECTOR", "VICE PRESIDENT", "PARTNER",
)
SAY = ("SAID", "ADDED", "NOTED", "ARGUED", "REPORTED", "STATED", "ESTIMATED", "PREDICTED")
MOVE = ("ROSE", "FELL", "CLIMBED", "DROPPED", "JUMPED", "SLIPPED", "GAINED", "DECLINED", "EASED")
ACT = (
    "ACQUIRED", "SOLD", "BOUGHT", "ANNOUNCED", "COMPLETED", "REJECTED", "APPROVED",
    "PROPOSED", "DELAYED", "CANCELED", "FINANCED", "REVIEWED", "LAUNCHED",
)
THINGS = (
    "SHARES", "PROFITS", "EARNINGS", "SALES", "REVENUE", "PRICES", "BONDS", "STOCKS",
    "INTEREST RATES", "ORDERS", "EXPORTS", "IMPORTS", "DEPOSITS", "LOANS", "COSTS", "FUTURES",
)
DEALS = (
    "THE MERGER", "THE OFFER", "THE PLAN", "THE AGREEMENT", "THE CONTRACT", "THE PROPOSAL",
    "THE ACQUISITION", "THE TAKEOVER", "THE SALE", "THE BID", "THE UNIT", "THE DIVISION",
    "A NEW PLANT", "A STAKE", "THE LOAN", "THE PROGRAM",
)
ADJ = (
    "STRONG", "WEAK", "STEADY", "SHARP", "MODEST", "SURPRISING", "LARGE", "SMALL",
    "UNEXPECTED", "SIGNIFICANT", "RECORD", "HEAVY", "LIGHT", "SLOW",
)
NUMBERS = (
    "ONE", "TWO", "THREE", "FOUR", "FIVE", "SIX", "SEVEN", "EIGHT", "NINE", "TEN",
    "TWELVE", "FIFTEEN", "TWENTY", "THIRTY", "FORTY", "FIFTY", "SIXTY", "EIGHTY",
)
UNITS = ("PERCENT", "MILLION DOLLARS", "BILLION DOLLARS", "CENTS A SHARE", "POINTS", "DOLLARS A SHARE")
PLACES = (
    "NEW YORK", "CHICAGO", "TOKYO", "LONDON", "WASHINGTON", "BOSTON", "DETROIT", "HOUSTON",
    "FRANKFURT", "LOS ANGELES", "DALLAS", "PARIS", "TORONTO",
)
PUBLIC_TIMES = (
    "LAST YEAR", "THIS YEAR", "NEXT YEAR", "LAST WEEK", "NEXT WEEK", "YESTERDAY", "TODAY",
    "EARLIER", "RECENTLY", "IN THE QUARTER", "IN THE PERIOD", "THIS QUARTER",
    "IN RECENT WEEKS", "OVERNIGHT", "LATE LAST YEAR", "IN THE FIRST HALF",
)
REASONS = (
    "BECAUSE OF HIGHER COSTS", "AFTER THE REPORT", "DESPITE THE DECLINE", "AMID CONCERNS ABOUT RATES",
    "AS DEMAND WEAKENED", "AS DEMAND GREW", "ON NEWS OF THE MERGER", "WHILE VOLUME WAS LIGHT",
    "AFTER THE ANNOUNCEMENT", "BECAUSE OF THE STRIKE", "DESPITE STRONG SALES",
)


def _private_time(rng: np.random.Generator) -> str:
    r = rng.random()
    if r < 0.5:
        m = MONTHS[rng.integers(len(MONTHS))]
        forms = ("IN {m}", "LAST {m}", "BY {m}", "IN EARLY {m}", "IN LATE {m}", "SINCE {m}", "NEXT {m}")
        return forms[rng.integers(len(forms))].format(m=m)
    if r < 0.8:
        d = WEEKDAYS[rng.integers(len(WEEKDAYS))]
        forms = ("ON {d}", "LAST {d}", "BY {d}", "ON {d} MORNING", "LATE {d}", "{d} AFTERNOON")
        return forms[rng.integers(len(forms))].format(d=d)
    s = SEASONS[rng.integers(len(SEASONS))]
    forms = ("THIS {s}", "LAST {s}", "NEXT {s}", "IN THE {s}", "BY THE {s}", "EARLY THIS {s}")
    return forms[rng.integers(len(forms))].format(s=s)


class _Grammar:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def pick(self, pool):
        return pool[self.rng.integers(len(pool))]

    def chance(self, p: float) -> bool:
        return self.rng.random() < p

    def person(self) -> str:
        name = f"{self.pick(TITLES)} {self.pick(PEOPLE)}"
        if self.chance(0.3):
            name += f" THE {self.pick(COMPANIES)} {self.pick(ROLES)}"
        return name

    def actor(self) -> str:
        r = self.rng.random()
        if r < 0.4:
            return self.pick(COMPANIES)
        if r < 0.75:
            return self.pick(GROUPS)
        return self.person()

    def amount(self) -> str:
        return f"{self.pick(NUMBERS)} {self.pick(UNITS)}"

    def possessive(self) -> str:
        return f"{self.pick(COMPANIES)}'S {self.pick(THINGS)}"

    def clause(self) -> str:
        r = self.rng.random()
        if r < 0.3:
            subj = self.possessive() if self.chance(0.5) else self.pick(THINGS)
            s = f"{subj} {self.pick(MOVE)} {self.amount()}"
            if self.chance(0.3):
                s += f" {self.pick(REASONS)}"
            return s
        if r < 0.55:
            return f"{self.actor()} {self.pick(ACT)} {self.pick(DEALS)}"
        if r < 0.75:
            return f"{self.actor()} REPORTED {self.pick(ADJ)} {self.pick(THINGS)} OF {self.amount()}"
        if r < 0.9:
            return f"{self.pick(THINGS)} WERE {self.pick(ADJ)} IN {self.pick(PLACES)}"
        return f"{self.actor()} EXPECTS {self.pick(THINGS)} TO BE {self.pick(ADJ)}"

    def sentence(self, time_phrase: str | None) -> str:
        body = self.clause()
        if time_phrase is None and self.chance(0.5):
            time_phrase = self.pick(PUBLIC_TIMES)
        if time_phrase is not None:
            body = f"{time_phrase} {body}" if self.chance(0.3) else f"{body} {time_phrase}"
        if self.chance(0.35):
            body = f"{body} {self.actor()} {self.pick(SAY)}"
        return body + "."


def newswire_text(n_chars: int, seed: int = 0, private_share: float = 0.14) -> str:
    """Generate at least ``n_chars`` characters, one sentence per line.

    About ``private_share`` of the sentences carry a month, weekday or
    season; no other sentence contains one of those words."""
    rng = np.random.default_rng(seed)
    g = _Grammar(rng)
    lines = []
    total = 0
    while total < n_chars:
        tp = _private_time(rng) if rng.random() < private_share else None
        line = g.sentence(tp)
        lines.append(line)
        total += len(line) + 1
    return "\n".join(lines) + "\n"
