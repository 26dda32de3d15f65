"""Desk-scale weakly-supervised sound event detection lab.

Trains a three-branch model (shared conv encoder, attention-pooled weak
classifier, frame projection head) with a frame-pairwise distance loss over
same-timestamp frame pairs, on a mix of synthetic strongly-labeled and
weakly-labeled clips.  Everything runs in float64 numpy with hand-written
gradients so results are reproducible bit-for-bit from (config, seed).
"""

__version__ = "0.1.0"
