"""Regenerate lexicons/common_words.txt from the wordfreq English frequency list.

wordfreq is only needed here, not at runtime. Entries with apostrophes or dots
are split into their alphabetic pieces so that contractions such as "don't"
contribute "don" and "t".
"""
import re
from pathlib import Path

from wordfreq import top_n_list

N = 10_000
OUT = Path(__file__).resolve().parents[1] / "src" / "querybandits" / "lexicons" / "common_words.txt"


def main():
    seen = {}
    for entry in top_n_list("en", N):
        for piece in re.findall(r"[a-z]+", entry.lower()):
            seen.setdefault(piece, None)
    lines = [f"# top {N} English words by frequency (wordfreq), alphabetic pieces only", *seen]
    OUT.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(seen)} entries to {OUT}")


if __name__ == "__main__":
    main()
