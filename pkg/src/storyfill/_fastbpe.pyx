# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled BPE training kernels (hot loop of tokenizer training).

Interface mirrors `_purebpe`; equivalence is covered by tests and the
benchmark in benchmarks/bpe_bench.py.
"""


def count_pairs(list seqs, list freqs):
    cdef dict counts = {}
    cdef list seq
    cdef Py_ssize_t i, n, s
    cdef long freq
    cdef tuple pair
    for s in range(len(seqs)):
        seq = seqs[s]
        freq = freqs[s]
        n = len(seq)
        for i in range(n - 1):
            pair = (seq[i], seq[i + 1])
            if pair in counts:
                counts[pair] = counts[pair] + freq
            else:
                counts[pair] = freq
    return counts


def apply_merge(list seq, long first, long second, long new_id):
    cdef list out = []
    cdef Py_ssize_t i = 0
    cdef Py_ssize_t n = len(seq)
    while i < n:
        if i < n - 1 and seq[i] == first and seq[i + 1] == second:
            out.append(new_id)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


IMPLEMENTATION = "cython"
