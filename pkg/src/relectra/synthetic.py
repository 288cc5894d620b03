"""Synthetic stand-ins for the corpora used in desk-scale experiments.

* a grammar-generated pretraining corpus over a fixed 200-word vocabulary,
* personal-injury style case documents with planted PLT/DEF/TYPE/PROB spans,
* small general-English and legal/medical corpora for tokenizer comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

# -- toy pretraining grammar ---------------------------------------------------------

DETERMINERS = ["the", "a", "every", "some", "no"]
ADJECTIVES = [
    "red", "blue", "green", "small", "large", "quick", "slow", "old", "young", "bright",
    "dark", "quiet", "loud", "happy", "sad", "warm", "cold", "soft", "hard", "tall",
    "short", "brave", "calm", "eager", "gentle", "proud", "wise", "clever", "fair", "kind",
    "rich", "poor", "strong", "weak", "busy", "lazy", "early", "late", "clean", "dirty",
]
NOUNS = [
    "dog", "cat", "bird", "fish", "horse", "cow", "lion", "tiger", "bear", "wolf",
    "man", "woman", "child", "doctor", "lawyer", "judge", "nurse", "driver", "teacher", "farmer",
    "house", "car", "tree", "river", "road", "city", "village", "school", "court", "office",
    "book", "letter", "table", "chair", "window", "door", "garden", "field", "bridge", "tower",
    "apple", "bread", "cake", "milk", "water", "stone", "ring", "coin", "lamp", "clock",
    "ship", "train", "plane", "boat", "truck", "bike", "wagon", "cart", "sled", "raft",
    "king", "queen", "prince", "soldier", "sailor", "pilot", "baker", "singer", "dancer", "painter",
    "hill", "lake", "forest", "desert", "island", "valley", "ocean", "cave", "meadow", "shore",
]
VERBS = [
    "sees", "finds", "likes", "takes", "moves", "builds", "paints", "helps", "calls", "follows",
    "watches", "carries", "pushes", "pulls", "lifts", "drops", "opens", "closes", "breaks", "fixes",
    "buys", "sells", "gives", "keeps", "sends", "reads", "writes", "draws", "cleans", "visits",
    "meets", "leaves", "joins", "greets", "thanks", "warns", "guides", "chases", "catches", "hides",
    "feeds", "wakes", "trains", "saves", "loves", "fears", "knows", "needs", "wants", "holds",
]
PREPOSITIONS = ["near", "behind", "under", "over", "beside", "inside", "across", "around", "beyond", "past",
                "along", "toward", "against", "among", "within"]
ADVERBS = ["today", "again", "often", "rarely", "slowly", "quickly", "quietly", "gladly", "never", "always"]
TOY_WORDS = DETERMINERS + ADJECTIVES + NOUNS + VERBS + PREPOSITIONS + ADVERBS
assert len(TOY_WORDS) == 200 and len(set(TOY_WORDS)) == 200


def _zipf(n: int) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1)
    return w / w.sum()


# within each word class, frequencies fall off as 1/rank like natural text
_CLASS_P = {id(c): _zipf(len(c)) for c in (DETERMINERS, ADJECTIVES, NOUNS, VERBS, PREPOSITIONS, ADVERBS)}


def _pick(words: List[str], rng: np.random.Generator) -> str:
    return words[rng.choice(len(words), p=_CLASS_P[id(words)])]


def toy_sentence(rng: np.random.Generator) -> str:
    def np_phrase():
        words = [_pick(DETERMINERS, rng)]
        if rng.random() < 0.5:
            words.append(_pick(ADJECTIVES, rng))
        words.append(_pick(NOUNS, rng))
        return words

    words = np_phrase() + [_pick(VERBS, rng)] + np_phrase()
    if rng.random() < 0.5:
        words += [_pick(PREPOSITIONS, rng)] + np_phrase()
    if rng.random() < 0.3:
        words.append(_pick(ADVERBS, rng))
    return " ".join(words)


def toy_corpus(n_docs: int, seed: int, sentences_per_doc: Tuple[int, int] = (2, 4)) -> List[str]:
    """Documents of a few grammar-generated sentences over :data:`TOY_WORDS`."""
    rng = np.random.default_rng(seed)
    lo, hi = sentences_per_doc
    return [" ".join(toy_sentence(rng) for _ in range(rng.integers(lo, hi + 1))) for _ in range(n_docs)]


# -- personal-injury case documents ------------------------------------------------

FIRST_NAMES = ["john", "mary", "james", "linda", "robert", "susan", "michael", "karen", "david", "nancy",
               "william", "lisa", "richard", "betty", "joseph", "helen", "thomas", "sandra", "charles", "donna",
               "daniel", "carol", "matthew", "ruth", "anthony", "sharon", "mark", "laura", "paul", "emily"]
LAST_NAMES = ["smith", "johnson", "williams", "brown", "jones", "garcia", "miller", "davis", "rodriguez",
              "martinez", "hernandez", "lopez", "gonzalez", "wilson", "anderson", "taylor", "moore", "jackson",
              "martin", "lee", "thompson", "white", "harris", "clark", "lewis", "walker", "hall", "allen",
              "young", "king"]
COMPANIES = ["acme trucking company", "city of springfield", "northside grocery inc", "metro transit authority",
             "riverside mall llc", "apex logistics corp", "greenfield hospital", "summit construction co",
             "lakeview apartments llc", "harbor freight lines", "central school district",
             "pinecrest nursing home", "bluewater shipping inc", "eastgate properties llc",
             "midstate insurance group", "valley medical center"]

CASE_TYPE_PHRASES: Dict[str, List[str]] = {
    "motor vehicle": ["rear end collision", "motor vehicle accident", "car crash", "intersection collision",
                      "drunk driver", "ran a red light"],
    "slip and fall": ["slip and fall", "wet floor", "icy sidewalk", "uneven pavement", "premises liability",
                      "fell down the stairs"],
    "work related": ["wrongful termination", "workplace injury", "professional negligence",
                     "unsafe scaffolding", "medical malpractice", "hostile work environment"],
}
MEDICAL_PROBLEMS = ["whiplash", "lumbar strain", "fractured wrist", "concussion", "emotional distress",
                    "herniated disc", "torn rotator cuff", "orthopnea", "palpitations", "neck pain",
                    "gastrointestinal complaints", "myofascial pain syndrome", "broken ankle",
                    "traumatic brain injury", "chronic back pain"]
FILLER = [
    "the court reviewed the record and the exhibits",
    "counsel for both parties appeared at the hearing",
    "the motion was argued before the judge",
    "discovery closed after several months",
    "the jury heard testimony from two witnesses",
    "the parties dispute the amount of damages",
    "the record reflects a timely notice of appeal",
    "the trial court entered a final judgment",
]


@dataclass
class CaseDocument:
    text: str
    plaintiffs: List[str]
    defendants: List[str]
    spans: List[Tuple[str, int, int]]  # (label, char_start, char_end)


def _person(rng) -> str:
    return f"{FIRST_NAMES[rng.integers(len(FIRST_NAMES))]} {LAST_NAMES[rng.integers(len(LAST_NAMES))]}"


class _Writer:
    def __init__(self):
        self.parts: List[str] = []
        self.spans: List[Tuple[str, int, int]] = []
        self.length = 0

    def text(self, s: str) -> None:
        if self.parts:
            self.parts.append(" ")
            self.length += 1
        self.parts.append(s)
        self.length += len(s)

    def entity(self, label: str, s: str) -> None:
        self.text(s)
        self.spans.append((label, self.length - len(s), self.length))

    def done(self) -> str:
        return "".join(self.parts)


def case_document(rng: np.random.Generator, labels: Sequence[str] = ("PLT", "DEF", "TYPE", "PROB")) -> CaseDocument:
    """One short case description with character-level gold spans."""
    plaintiff = _person(rng)
    defendant = COMPANIES[rng.integers(len(COMPANIES))] if rng.random() < 0.6 else _person(rng)
    while defendant == plaintiff:
        defendant = _person(rng)
    ctype = list(CASE_TYPE_PHRASES)[rng.integers(len(CASE_TYPE_PHRASES))]
    phrases = CASE_TYPE_PHRASES[ctype]
    w = _Writer()
    use = set(labels)

    def ent(label, s):
        if label in use:
            w.entity(label, s)
        else:
            w.text(s)

    w.text("plaintiff")
    ent("PLT", plaintiff)
    w.text(["filed suit against", "brought an action against", "sued"][rng.integers(3)])
    w.text("defendant")
    ent("DEF", defendant)
    w.text("after a")
    ent("TYPE", phrases[rng.integers(len(phrases))])
    w.text(".")
    order = rng.permutation(4)
    for k in order:
        if k == 0:
            w.text("the complaint alleges that")
            ent("PLT", plaintiff)
            w.text("suffered")
            ent("PROB", MEDICAL_PROBLEMS[rng.integers(len(MEDICAL_PROBLEMS))])
            w.text("and")
            ent("PROB", MEDICAL_PROBLEMS[rng.integers(len(MEDICAL_PROBLEMS))])
            w.text(".")
        elif k == 1:
            w.text(FILLER[rng.integers(len(FILLER))])
            w.text(".")
        elif k == 2:
            w.text("defendant")
            ent("DEF", defendant)
            w.text(["denies liability for the", "disputes the cause of the", "was blamed for the"][rng.integers(3)])
            ent("TYPE", phrases[rng.integers(len(phrases))])
            w.text(".")
        else:
            w.text("medical records describe")
            ent("PROB", MEDICAL_PROBLEMS[rng.integers(len(MEDICAL_PROBLEMS))])
            w.text(".")
    return CaseDocument(w.done(), [plaintiff], [defendant], w.spans)


def case_corpus(n_docs: int, seed: int, labels: Sequence[str] = ("PLT", "DEF", "TYPE", "PROB")) -> List[CaseDocument]:
    rng = np.random.default_rng(seed)
    return [case_document(rng, labels) for _ in range(n_docs)]


# -- tokenizer comparison corpora -----------------------------------------------------

GENERAL_TEXT = """
the weather was pleasant and the children played in the park while their parents talked about the news
she walked to the market to buy fresh bread and fruit for the family dinner on sunday evening
the train arrived late because of heavy rain and many passengers were waiting on the platform
he enjoyed reading books about history and often visited the library near his house after work
the team practiced every morning and won the final game of the season in front of a large crowd
our neighbors planted flowers in the garden and painted the fence a bright shade of blue
the teacher explained the lesson slowly so that every student could follow the main ideas
they traveled across the country by car and stopped in small towns to eat and rest
the company announced a new product and shares rose sharply during the first hour of trading
music filled the hall as the orchestra played a famous symphony for the holiday concert
the river flows through the valley and the farmers depend on it for water during the summer
after dinner we watched a movie and talked about our plans for the coming weekend
the city council met to discuss new roads and parks and the budget for the next year
a friendly dog followed the boy home from school and waited outside the door all afternoon
the restaurant served simple meals with local vegetables and the prices were very reasonable
people gathered in the square to celebrate the festival with food and dancing until midnight
the old bridge was repaired last spring and now trucks and buses can cross it again safely
scientists studied the stars through a powerful telescope on top of the mountain
the store opened early on saturday and many shoppers arrived before the doors were unlocked
she wrote a long letter to her grandmother describing her new job and her apartment in the city
"""

DOMAIN_TEXT = """
the patient reported gastrointestinal complaints neurologic changes rashes palpitations and orthopnea
review of systems was negative for gastrointestinal complaints and positive for palpitations and orthopnea
neurologic changes were noted on examination and the rashes resolved after treatment
the court considered the nature of adjudications upon which erroneous subsequent proceedings rest
erroneous adjudications do not bind the court in subsequent proceedings upon appeal
the plaintiff alleged negligence and the defendant denied liability for the injuries
the plaintiff suffered whiplash a lumbar strain and emotional distress after the collision
the defendant moved for summary judgment and the plaintiff opposed the motion
medical records document orthopnea palpitations and gastrointestinal complaints following the accident
the appellate court reversed the judgment because the subsequent proceedings were erroneous
the physician diagnosed neurologic changes and prescribed treatment for the rashes
negligence requires a duty a breach causation and damages under the law of torts
the jury awarded damages for pain and suffering and for medical expenses of the plaintiff
the defendant argued that the plaintiff assumed the risk and that the claim was barred
adjudications of liability in personal injury cases depend on testimony and medical evidence
the patient denied palpitations but reported orthopnea and persistent gastrointestinal complaints
the court held that the adjudications were erroneous and remanded for further proceedings
the plaintiff underwent surgery for a herniated disc and physical therapy for neck pain
the complaint alleged negligence by the hospital and malpractice by the treating physician
the settlement covered medical expenses lost wages and emotional distress of the plaintiff
"""

TABLE3_SAMPLE = (
    "gastrointestinal complaints, neurologic changes, rashes, palpitations, orthopnea. "
    "the nature of adjudications upon which erroneous subsequent proceedings rest. "
    "the plaintiff alleged negligence after the accident and the defendant denied liability. "
    "the patient reported palpitations and orthopnea, and the court found the proceedings erroneous."
)

LEGAL_LEXICON = ["adjudications", "erroneous", "proceedings", "plaintiff", "defendant", "negligence",
                 "liability", "judgment", "appellate", "remanded", "malpractice", "settlement", "torts",
                 "subsequent", "testimony", "damages"]
MEDICAL_LEXICON = ["gastrointestinal", "neurologic", "rashes", "palpitations", "orthopnea", "whiplash",
                   "lumbar", "herniated", "physician", "diagnosed", "surgery", "therapy", "patient"]
ABBREVIATIONS = ["tmj", "mri", "er", "llc", "inc"]


def repeated(text: str, times: int) -> List[str]:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    return lines * times
