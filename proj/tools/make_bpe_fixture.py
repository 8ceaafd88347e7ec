#!/usr/bin/env python3
"""Learns the byte-pair merge table shipped in data/bpe_merges.txt.

The corpus covers the fixed prompt template, the attribute vocabulary used by
the synthetic generator and a handful of common pedestrian-attribute words.
Re-running this script reproduces the fixture exactly.
"""
import collections
import re
import sys

CORPUS = """
a photo of a person. a photo of a man. a photo of a woman. not
male female long hair short hair short sleeves long sleeves jacket coat bald
backpack hat glasses bag handbag trousers shorts skirt dress boots shoes
upper lower body clothing black white red green blue yellow gray brown
pink purple orange dark light wearing carrying holding age young adult old
"""

NUM_MERGES = 400


def words(text):
    return re.findall(r"[a-z]+|[0-9]|[^\sa-z0-9]", text.lower())


def main(out_path):
    vocab = collections.Counter()
    for w in words(CORPUS):
        vocab[tuple(w[:-1]) + (w[-1] + "</w>",)] += 1
    merges = []
    for _ in range(NUM_MERGES):
        pairs = collections.Counter()
        for sym, freq in vocab.items():
            for a, b in zip(sym, sym[1:]):
                pairs[(a, b)] += freq
        if not pairs:
            break
        # Highest count, then lexicographic for determinism.
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merges.append(best)
        merged = {}
        for sym, freq in vocab.items():
            out, i = [], 0
            while i < len(sym):
                if i + 1 < len(sym) and (sym[i], sym[i + 1]) == best:
                    out.append(sym[i] + sym[i + 1])
                    i += 2
                else:
                    out.append(sym[i])
                    i += 1
            merged[tuple(out)] = merged.get(tuple(out), 0) + freq
        vocab = merged
    with open(out_path, "w") as f:
        f.write("#version: bpe-merges 1\n")
        for a, b in merges:
            f.write(f"{a} {b}\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/bpe_merges.txt")
