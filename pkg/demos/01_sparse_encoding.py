"""
Sparse integer encoding
=======================

Every integer of a range gets a single cell of an M x N x O volume.  Only
the coordinates are ever stored.
"""

import numpy as np

from sparseprime.encoding import EncodingShape, decode_index, encode_index, encode_window
from sparseprime.numtheory import sieve_range

shape = EncodingShape(M=150, N=150, O=150, L=15)
print("capacity:", shape.capacity)

# s -> (s // (N*O), (s mod N*O) // O, s mod O)
for s in (0, 151, 22500, 3_000_000 - 1):
    code = encode_index(s, shape)
    print(s, "->", code, "->", decode_index(*code, shape))

# A window of L consecutive integers, here placed at offset 10**12.
offset = 10**12
start = 1_000_000
bits = sieve_range(offset + start, offset + start + shape.L)
window = encode_window(start, shape, offset, bits)
for v, m, n, o, y in zip(window.values, window.m, window.n, window.o, window.labels):
    print(f"{v}  ({m:3d}, {n:3d}, {o:3d})  prime={bool(y)}")

# The o coordinate is s mod O, so with O = 150 = 2 * 3 * 5^2 it carries
# divisibility by 2, 3 and 5 directly.  Fraction of primes per residue:
s = np.arange(1_000_000)
labels = sieve_range(0, 1_000_000).bits
o = s % shape.O
share = np.bincount(o, weights=labels, minlength=shape.O) / np.bincount(o, minlength=shape.O)
print("residues mod 150 holding primes above 5:",
      int((share > 1e-3).sum()), "of", shape.O)
