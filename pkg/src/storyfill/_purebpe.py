"""Pure-Python BPE training kernels.

Same interface as the compiled `_fastbpe` extension; used as the fallback
when the extension is not built. `tokenizer` picks one at import time.
"""


def count_pairs(seqs, freqs):
    """Count adjacent id pairs over all sequences, weighted by frequency.

    seqs: list of list-of-int token-id sequences (one per unique pretoken)
    freqs: occurrence count per sequence
    """
    counts = {}
    for seq, freq in zip(seqs, freqs):
        for i in range(len(seq) - 1):
            pair = (seq[i], seq[i + 1])
            counts[pair] = counts.get(pair, 0) + freq
    return counts


def apply_merge(seq, first, second, new_id):
    """Replace every non-overlapping (first, second) bigram with new_id."""
    out = []
    i = 0
    n = len(seq)
    while i < n:
        if i < n - 1 and seq[i] == first and seq[i + 1] == second:
            out.append(new_id)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


IMPLEMENTATION = "python"
