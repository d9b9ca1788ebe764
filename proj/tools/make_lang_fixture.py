#!/usr/bin/env python3
"""Regenerate tests/data/lang_fixture.tsv: 1000 tokens with gold language labels."""
import random
import re
from pathlib import Path

from wordfreq import top_n_list

from make_lexicons import ABBREVIATIONS

ROOT = Path(__file__).resolve().parent.parent
LANGS = ("en", "nl", "de")
WORD = re.compile(r"^[a-zäöüßéèëïóáàâêîôûç]+$")
NON_WORDS = ["139", "7.4", "1@2", "3@1", "9@0", "5@-1", "|", "NEG", "mmol/l", "umol/l", "10^9/l", "%", "/min",
             "ug/kg/min", "g/dl", "0", "2150-01-01", "12:30", "-", "+", "100%", "mg/dl", "1.2", "50", "x2"]


def main() -> None:
    rng = random.Random(20240611)
    lex = {l: set((ROOT / "assets" / "lexicons" / f"{l}.txt").read_text(encoding="utf-8").split()) for l in LANGS}
    every = set().union(*lex.values())
    unique = {l: sorted(w for w in lex[l] if sum(w in lex[m] for m in LANGS) == 1) for l in LANGS}
    ambiguous = sorted(w for w in every if sum(w in lex[m] for m in LANGS) > 1)
    wide = {l: set(top_n_list(l, 100000)) for l in LANGS}
    oov = {}
    for l in LANGS:
        others = set().union(*(wide[m] for m in LANGS if m != l))
        pool = [w for w in top_n_list(l, 40000)[6000:] if WORD.match(w) and w not in every and w not in others]
        oov[l] = pool

    rows = []
    for _ in range(450):
        l = rng.choice(LANGS)
        rows.append((rng.choice(LANGS), rng.choice(unique[l]), l, "lexicon"))
    for _ in range(150):
        w = rng.choice(ambiguous)
        doc = rng.choice([l for l in LANGS if w in lex[l]])
        rows.append((doc, w, doc, "ambiguous"))
    abbrevs = [a for a in ABBREVIATIONS if a not in every]
    for _ in range(100):
        rows.append((rng.choice(LANGS), rng.choice(abbrevs), "undetected", "abbreviation"))
    for _ in range(100):
        rows.append((rng.choice(LANGS), rng.choice(NON_WORDS), "undetected", "non_word"))
    for _ in range(200):
        l = rng.choice(LANGS)
        rows.append((l, rng.choice(oov[l]), l, "oov"))
    rng.shuffle(rows)
    lines = ["document_language\ttoken\tgold\tcategory"] + ["\t".join(r) for r in rows]
    (ROOT / "tests" / "data" / "lang_fixture.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
