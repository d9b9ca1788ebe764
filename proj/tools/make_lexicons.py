#!/usr/bin/env python3
"""Regenerate assets/lexicons/{en,nl,de}.txt from wordfreq frequency lists."""
import re
import sys
from pathlib import Path

from wordfreq import top_n_list, zipf_frequency

TOP = 5000
# A word stays in a language's lexicon only if it is not far rarer there than in
# the language where it is most frequent.
MAX_ZIPF_GAP = 1.5
WORD = re.compile(r"^[a-zäöüßéèëïóáàâêîôûç]+$")

# (en, nl, de) as rendered by the synthetic generator
CLINICAL = [
    ("creatinine", "kreatinine", "kreatinin"), ("platelets", "trombocyten", "thrombozyten"),
    ("leukocytes", "leukocyten", "leukozyten"), ("hemoglobin", "hemoglobine", "hämoglobin"),
    ("bicarbonate", "bicarbonaat", "bikarbonat"), ("sodium", "natrium", "natrium"),
    ("potassium", "kalium", "kalium"), ("lactate", "lactaat", "laktat"), ("glucose", "glucose", "glukose"),
    ("pulse", "hartslag", "puls"), ("pressure", "bloeddruk", "blutdruck"),
    ("temperature", "temperatuur", "temperatur"), ("breathing", "ademhaling", "atmung"),
    ("saturation", "saturatie", "sättigung"), ("urine", "diurese", "diurese"),
    ("consciousness", "bewustzijn", "bewusstsein"), ("alert", "wakker", "wach"),
    ("confused", "verward", "verwirrt"), ("somnolent", "slaperig", "schläfrig"),
    ("comatose", "comateus", "komatös"), ("norepinephrine", "noradrenaline", "noradrenalin"),
    ("furosemide", "furosemide", "furosemid"), ("insulin", "insuline", "insulin"),
    ("paracetamol", "paracetamol", "paracetamol"), ("ceftriaxone", "ceftriaxon", "ceftriaxon"),
    ("heparin", "heparine", "heparin"), ("propofol", "propofol", "propofol"),
    ("units", "eenheden", "einheiten"),
]

SCHEMA_EN = """lab chart input output numeric list drug observation pharma itemid label value valueuom amount
amountuom route item unit dose doseunit variableid name pharmaid givendose measurement event""".split()

# Never lexicon entries: clinical abbreviations and unit symbols.
ABBREVIATIONS = """po iv sc im bid tid qid prn qd od icu ecg ekg cvp gcs inr ptt crp bun ldh ck hb hct wbc rbc plt
fio cabg copd ards abg nsaid mg ml g kg mcg ug bpm mmhg degc iu mmol umol dl hr rr bp ng mmhg neg ecmo crrt cpap
peep nibp sbp dbp picc tpn icd dvt pe mi chf ckd aki uti cva tia gi nkda dnr tds hs sl pr ivp ivpb sq""".split()


def clean(words):
    return [w for w in words if WORD.match(w) and len(w) >= 2]


def main(out_dir: Path) -> None:
    base = {lang: clean(top_n_list(lang, TOP)) for lang in ("en", "nl", "de")}
    lex = {lang: set(words) for lang, words in base.items()}
    for w in set().union(*lex.values()):
        z = {lang: zipf_frequency(w, lang) for lang in lex}
        top = max(z.values())
        for lang in lex:
            if w in lex[lang] and z[lang] < top - MAX_ZIPF_GAP:
                lex[lang].discard(w)
    en_terms = {t[0] for t in CLINICAL} | set(SCHEMA_EN)
    for en, nl, de in CLINICAL:
        lex["en"].add(en)
        lex["nl"].add(nl)
        lex["de"].add(de)
    lex["en"].update(SCHEMA_EN)
    for lang in ("nl", "de"):
        own = {t[1 if lang == "nl" else 2] for t in CLINICAL}
        lex[lang] -= en_terms - own
    foreign = {t[1] for t in CLINICAL} | {t[2] for t in CLINICAL}
    lex["en"] -= foreign - en_terms
    for lang in lex:
        lex[lang] -= set(ABBREVIATIONS)
        (out_dir / f"{lang}.txt").write_text("\n".join(sorted(lex[lang])) + "\n", encoding="utf-8")
        print(lang, len(lex[lang]))


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "assets" / "lexicons")
