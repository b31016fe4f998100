"""Socio-demographic profiles: ingestion, validation, persona text, synthesis."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from socsim.errors import ProfileFileError
from socsim.rng import stream

log = logging.getLogger(__name__)

EDUCATION_LABELS = (
    "No formal education (ISCED 0)",
    "Primary education (ISCED 1)",
    "Lower secondary education (ISCED 2)",
    "Upper secondary education (ISCED 3)",
    "Post-secondary non-tertiary education (ISCED 4)",
    "Short-cycle tertiary education (ISCED 5)",
    "Bachelor or equivalent (ISCED 6)",
    "Master or equivalent (ISCED 7)",
    "Doctoral or equivalent (ISCED 8)",
)
SOCIAL_CLASSES = ("Upper", "Upper-middle", "Lower-middle", "Working", "Lower")
_CLASS_PHRASE = {"Upper": "Upper class", "Upper-middle": "Upper middle class",
                 "Lower-middle": "Lower middle class", "Working": "Working class",
                 "Lower": "Lower class"}
GENDERS = ("Male", "Female", "Other", "Unknown")
AGE_BUCKETS = (("16-34", 16, 34), ("35-54", 35, 54), ("55+", 55, 200))


def age_bucket(age: int) -> str:
    for label, lo, hi in AGE_BUCKETS:
        if lo <= age <= hi:
            return label
    return "under 16"


@dataclass
class ProfileRecord:
    gender: str
    age: int
    country: str | None = None
    town_size: str | None = None
    urban_rural: str | None = None
    marital: str | None = None
    children: int | None = None
    education: int | None = None  # ISCED level 0..8
    employment: str | None = None
    sector: str | None = None
    occupation: str | None = None
    religion: str | None = None
    ethnicity: str | None = None
    language: str | None = None
    immigrant: bool | None = None
    social_class: str | None = None
    income_decile: int | None = None
    financial_situation: str | None = None
    # optional detail used only in persona text
    city: str | None = None
    town_type: str | None = None
    birth_country: str | None = None
    citizenship: str | None = None
    profile_text: str = ""
    pid: int | None = None

    def __post_init__(self):
        if not self.profile_text:
            self.profile_text = render_persona(self)

    def to_dict(self) -> dict:
        return asdict(self)

    def attributes(self) -> dict:
        """Profile attributes plus derived groupings, minus the persona text."""
        d = {k: v for k, v in asdict(self).items() if k != "profile_text"}
        d["age_group"] = age_bucket(self.age)
        return d


_FIELD_NAMES = {f.name for f in fields(ProfileRecord)}


def render_persona(p: ProfileRecord) -> str:
    """Second-person persona text in the survey-profile style."""
    s = [f"You are a {p.gender}, {p.age} years old person."]
    if p.country:
        where = f"{p.city}, {p.country}" if p.city else p.country
        s.append(f"You live in {where}.")
    town = []
    if p.town_size:
        town.append(f"has a population of {p.town_size}")
    if p.town_type:
        town.append(f"is classified as a {p.town_type}")
    if p.urban_rural:
        town.append(f"is considered {p.urban_rural}")
    if town:
        s.append("Your town " + ", ".join(town) + ".")
    if p.immigrant:
        born = f" born in {p.birth_country}" if p.birth_country else ""
        s.append(f"You are an immigrant to this country (born outside this country){born}.")
    elif p.immigrant is False:
        s.append("You were born in this country.")
    if p.citizenship:
        s.append(f'Your citizenship status is "{p.citizenship}".')
    if p.language:
        s.append(f"Your native language is {p.language}.")
    if p.ethnicity:
        s.append(f"Your ethnicity/race is {p.ethnicity}.")
    if p.religion is not None:
        if p.religion in ("None", "No religion", ""):
            s.append("You don't have any religious beliefs.")
        else:
            s.append(f"Your religious denomination is {p.religion}.")
    if p.marital:
        kids = "" if p.children is None else f" and have {p.children} children"
        s.append(f"You are {p.marital}{kids}.")
    if p.education is not None:
        s.append(f"Your highest education level is {EDUCATION_LABELS[p.education]}.")
    if p.employment:
        job = f" working as {p.occupation}" if p.occupation else ""
        sector = f" in the {p.sector} sector" if p.sector else ""
        s.append(f"You are {p.employment}{job}{sector}.")
    if p.financial_situation:
        s.append(f"Your financial situation: {p.financial_situation}.")
    if p.social_class:
        s.append(f"You consider yourself to be {_CLASS_PHRASE[p.social_class]}.")
    if p.income_decile is not None:
        s.append(f"On a scale of 1-10, You place your household income at level {p.income_decile}.")
    return " ".join(s)


def validate_record(rec: dict) -> ProfileRecord:
    """Build a ProfileRecord from a raw mapping, raising ValueError with the reason."""
    if not isinstance(rec, dict):
        raise ValueError("record is not an object")
    for core in ("gender", "age"):
        if rec.get(core) in (None, ""):
            raise ValueError(f"missing core field {core!r}")
    unknown = set(rec) - _FIELD_NAMES
    if unknown:
        raise ValueError(f"unknown fields {sorted(unknown)}")
    rec = dict(rec)
    try:
        rec["age"] = int(rec["age"])
        for k in ("education", "income_decile", "children"):
            if rec.get(k) is not None:
                rec[k] = int(rec[k])
    except (TypeError, ValueError):
        raise ValueError("non-integer numeric field") from None
    if rec["age"] < 16:
        raise ValueError(f"age {rec['age']} below 16")
    if rec.get("income_decile") is not None and not 1 <= rec["income_decile"] <= 10:
        raise ValueError(f"income_decile {rec['income_decile']} outside 1..10")
    if rec.get("education") is not None and not 0 <= rec["education"] <= 8:
        raise ValueError(f"education {rec['education']} outside 0..8")
    if rec.get("social_class") is not None and rec["social_class"] not in SOCIAL_CLASSES:
        raise ValueError(f"unknown social_class {rec['social_class']!r}")
    if isinstance(rec.get("immigrant"), str):
        rec["immigrant"] = rec["immigrant"].lower() == "true"
    return ProfileRecord(**rec)


@dataclass
class IngestResult:
    records: list[ProfileRecord] = field(default_factory=list)
    rejected: list[tuple[int, str]] = field(default_factory=list)  # (line number, reason)


def ingest_profiles(path) -> IngestResult:
    """Read one JSON record per line; invalid records are rejected, not fatal."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ProfileFileError(f"cannot read {path}: {exc}") from exc
    out = IngestResult()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.records.append(validate_record(json.loads(line)))
        except (ValueError, TypeError) as exc:
            out.rejected.append((lineno, str(exc)))
    if not out.records and not out.rejected:
        log.warning("profile file %s is empty", path)
    if out.rejected:
        log.info("%s: rejected %d records", path, len(out.rejected))
    for i, r in enumerate(out.records):
        if r.pid is None:
            r.pid = i
    return out


def write_profiles(records, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def default_marginals() -> dict[str, dict[str, float]]:
    text = resources.files("socsim.data").joinpath("marginals.json").read_text(encoding="utf-8")
    return json.loads(text)


_INT_FIELDS = {"children", "education", "income_decile"}


def synthesize_profiles(n: int, seed: int, marginals: dict | None = None) -> list[ProfileRecord]:
    """Draw ``n`` records attribute by attribute from categorical marginals.

    ``age`` categories are "lo-hi" ranges; an age is drawn uniformly inside
    the sampled range.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    marginals = marginals or default_marginals()
    cols: dict[str, list] = {}
    for attr in sorted(marginals):
        cats = list(marginals[attr])
        probs = np.array([marginals[attr][c] for c in cats], dtype=np.float64)
        probs /= probs.sum()
        idx = stream(seed, f"synth:{attr}").choice(len(cats), size=n, p=probs)
        cols[attr] = [cats[i] for i in idx]
    if "age" in cols:
        u = stream(seed, "synth:age_within").random(n)
        ages = []
        for cat, x in zip(cols["age"], u):
            lo, hi = (int(v) for v in cat.split("-"))
            ages.append(lo + int(x * (hi - lo + 1)))
        cols["age"] = ages
    out = []
    for i in range(n):
        rec = {k: v[i] for k, v in cols.items()}
        for k in _INT_FIELDS & rec.keys():
            rec[k] = int(rec[k])
        if "immigrant" in rec:
            rec["immigrant"] = rec["immigrant"] == "true"
        rec.setdefault("gender", "Unknown")
        rec.setdefault("age", 40)
        rec["pid"] = i
        out.append(ProfileRecord(**rec))
    return out
