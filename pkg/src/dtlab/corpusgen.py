"""Deterministic generator for the bundled pretraining corpus.

The repo ships a corpus generated by this module (src/dtlab/data/corpus.txt)
so pretraining is hermetic: no downloads, identical bytes everywhere. The
text is synthetic English built from word banks and sentence templates
under a fixed seed. It is not natural prose, but it has word-, phrase-
and sentence-level regularities a byte-level model can exploit, which is
all pretraining needs here.

Regenerate with `python -m dtlab.corpusgen [path]`.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

__all__ = ["generate_corpus", "default_corpus_path", "CORPUS_SEED", "CORPUS_BYTES"]

CORPUS_SEED = 20240501
CORPUS_BYTES = 1_500_000

NOUNS = """river stone lantern harbor meadow ledger engine garden signal craft
archive bridge circuit valley compass furnace island kettle library machine
needle orchard pigeon quarry ribbon saddle telescope umbrella village wagon
anchor barrel candle drawer easel fiddle glacier hammer ink jacket kite mill
notebook oven parcel quilt rudder shovel tunnel vessel workshop atlas beacon
cellar dynamo estuary forge granary hinge icehouse jetty keel loom mast net
oar pier quay reef sail tide undertow vane wharf yard almanac bell chart dock
""".split()

ADJECTIVES = """quiet copper narrow patient weathered amber brisk clever dim
eager faded grim hollow iron jagged keen long mild noisy old pale quick rough
steady tall uneven vivid warm young bright calm deep early fresh gentle heavy
idle late lonely modest neat open plain rare slow thin useful wide ancient
""".split()

VERBS = """carried measured repaired crossed gathered lifted marked opened
passed reached sorted turned watched weighed covered followed guarded joined
kept lowered moved noted offered pulled raised sealed shared tested traded
balanced checked drew fastened held laid mended packed rested signed stacked
""".split()

ADVERBS = """slowly carefully twice again early often quietly rarely soon
steadily together alone finally gladly halfway nearly once seldom still
""".split()

NAMES = """harlan mira odessa quentin sable tamsin ulric vera wendel yareli
anselm brigid caspar delia edmund freya gideon helga ivo juna kellan lorena
""".split()

PLACES = """norwick saltmere dunhollow eastvale fernwick graymoor hollowbrook
kilndale larkspur millhaven oakridge pinecross quarryton redfen stonebridge
""".split()

CONNECTIVES = [
    "after the rain",
    "before the first bell",
    "by late afternoon",
    "in the cold season",
    "near the old road",
    "under a clear sky",
    "when the tide fell",
    "while the town slept",
]

TEMPLATES = [
    "the {adj} {noun} {verb} the {noun2} {adv}",
    "{name} {verb} the {adj} {noun} near {place}",
    "{conn}, the {noun} {verb} the {adj} {noun2}",
    "the {noun} of {place} {verb} {adv}",
    "{name} and {name2} {verb} the {noun} together",
    "every {noun} in {place} {verb} the {adj} {noun2}",
    "the {adj} {noun} stood by the {noun2}",
    "{conn}, {name} {verb} the {noun} from the {noun2}",
    "no {noun} {verb} the {noun2} without the {adj} {noun3}",
    "the {noun} {verb} while the {adj} {noun2} waited",
]


def _sentence(rng: np.random.Generator) -> str:
    template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]

    def pick(bank):
        return bank[int(rng.integers(len(bank)))]

    words = {
        "adj": pick(ADJECTIVES),
        "noun": pick(NOUNS),
        "noun2": pick(NOUNS),
        "noun3": pick(NOUNS),
        "verb": pick(VERBS),
        "adv": pick(ADVERBS),
        "name": pick(NAMES),
        "name2": pick(NAMES),
        "place": pick(PLACES),
        "conn": pick(CONNECTIVES),
    }
    s = template.format(**words)
    return s[0].upper() + s[1:] + "."


def generate_corpus(n_bytes: int = CORPUS_BYTES, seed: int = CORPUS_SEED) -> str:
    """Return at least n_bytes of deterministic synthetic prose."""
    rng = np.random.default_rng(seed)
    parts: list[str] = []
    total = 0
    while total < n_bytes:
        n_sent = int(rng.integers(3, 9))
        para = " ".join(_sentence(rng) for _ in range(n_sent)) + "\n\n"
        parts.append(para)
        total += len(para)
    return "".join(parts)


def default_corpus_path() -> Path:
    return Path(__file__).parent / "data" / "corpus.txt"


def main(argv: list[str] | None = None) -> int:
    args = sys.argv[1:] if argv is None else argv
    path = Path(args[0]) if args else default_corpus_path()
    text = generate_corpus()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="ascii")
    print(f"wrote {len(text)} bytes to {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
